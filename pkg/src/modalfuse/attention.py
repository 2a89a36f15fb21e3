"""Channel and positional attention operators.

CAM and PAM gate the two modality streams inside the fusion unit; LCAM and
LPAM are the lightweight pair used by the neck-side transformation block.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .errors import ConfigError
from .params import ConvParams, ParamGroup, ParamSpec, conv_entries, param_group
from .tensor import ConvSpec, Tensor

CAM_KERNEL = 3
LCAM_RATIO = 16


@param_group
@dataclass(frozen=True)
class CamParams(ParamGroup):
    weight: Tensor  # (1, 1, 1, k)
    bias: Tensor  # (1, 1, 1, 1)

    @property
    def kernel_size(self) -> int:
        return self.weight.dims[3]

    @staticmethod
    def manifest(prefix: str, k: int = CAM_KERNEL) -> list[ParamSpec]:
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"CAM kernel size must be odd, got {k}")
        return [
            ParamSpec(prefix + "weight", (1, 1, 1, k), "uniform", k),
            ParamSpec(prefix + "bias", (1, 1, 1, 1), "uniform", k),
        ]


def cam_gate(x: Tensor, p: CamParams) -> Tensor:
    """Per-channel gate in (0, 1), shape (N, C, 1, 1)."""
    pooled = ops.adaptive_pool(x, 1, 1, "avg")
    return ops.sigmoid(ops.conv1d(pooled, p.kernel_size, p.weight, p.bias))


def cam_forward(x: Tensor, p: CamParams) -> Tensor:
    return ops.mul(x, cam_gate(x, p))


@param_group
@dataclass(frozen=True)
class PamParams(ParamGroup):
    h: ConvParams  # pointwise C -> C on the width-averaged strip
    v: ConvParams  # pointwise C -> C on the height-averaged strip

    @staticmethod
    def manifest(prefix: str, channels: int) -> list[ParamSpec]:
        dims = (channels, channels, 1, 1)
        return conv_entries(prefix + "h.", dims, True) + conv_entries(prefix + "v.", dims, True)


def pam_gates(x: Tensor, p: PamParams) -> tuple[Tensor, Tensor]:
    """Row gate (N, C, H, 1) from width-averaged strips and column gate (N, C, 1, W)."""
    n, c, h, w = x.dims
    spec = ConvSpec.pointwise(c, c)
    rows = ops.adaptive_pool(x, h, 1, "avg")
    cols = ops.adaptive_pool(x, 1, w, "avg")
    att_h = ops.sigmoid(ops.conv2d(rows, spec, p.h.weight, p.h.bias))
    att_v = ops.sigmoid(ops.conv2d(cols, spec, p.v.weight, p.v.bias))
    return att_h, att_v


def pam_forward(x: Tensor, p: PamParams) -> Tensor:
    att_h, att_v = pam_gates(x, p)
    return ops.mul(ops.mul(x, att_h), att_v)


@param_group
@dataclass(frozen=True)
class LcamParams(ParamGroup):
    """Bottleneck shared by the average- and max-pooled branches."""

    fc1: ConvParams  # (C/r, C, 1, 1)
    fc2: ConvParams  # (C, C/r, 1, 1)

    @property
    def channels(self) -> int:
        return self.fc1.weight.dims[1]

    @property
    def hidden(self) -> int:
        return self.fc1.weight.dims[0]

    @staticmethod
    def manifest(prefix: str, channels: int, ratio: int = LCAM_RATIO) -> list[ParamSpec]:
        if ratio < 1 or channels % ratio:
            raise ConfigError(f"LCAM ratio {ratio} does not divide {channels} channels")
        hidden = channels // ratio
        return conv_entries(prefix + "fc1.", (hidden, channels, 1, 1), True) + conv_entries(
            prefix + "fc2.", (channels, hidden, 1, 1), True
        )


def lcam_forward(x: Tensor, p: LcamParams, halve: bool = False) -> Tensor:
    """Channel gate sigma(mlp(avg)) + sigma(mlp(max)), shape (N, C, 1, 1).

    The two sigmoids are summed as written, so the gate lies in (0, 2);
    ``halve`` rescales it into (0, 1).
    """
    c = x.dims[1]
    if c != p.channels:
        raise ConfigError(f"LCAM built for {p.channels} channels, input has {c}")
    down = ConvSpec.pointwise(c, p.hidden)
    up = ConvSpec.pointwise(p.hidden, c)

    def branch(v: Tensor) -> Tensor:
        hidden = ops.relu(ops.conv2d(v, down, p.fc1.weight, p.fc1.bias))
        return ops.sigmoid(ops.conv2d(hidden, up, p.fc2.weight, p.fc2.bias))

    gate = ops.add(branch(ops.adaptive_pool(x, 1, 1, "avg")), branch(ops.adaptive_pool(x, 1, 1, "max")))
    if halve:
        gate = ops.mul(gate, Tensor.full((1, 1, 1, 1), 0.5, dtype=gate.dtype))
    return gate


@param_group
@dataclass(frozen=True)
class LpamParams(ParamGroup):
    weight: Tensor  # (1, 2, 3, 3): input channel 0 is the max map, 1 the mean map
    bias: Tensor

    SPEC = ConvSpec(2, 1, 3, 3, padding=1)

    @staticmethod
    def manifest(prefix: str) -> list[ParamSpec]:
        return conv_entries(prefix, LpamParams.SPEC.weight_dims, True)


def lpam_forward(x: Tensor, p: LpamParams) -> Tensor:
    """Spatial gate in (0, 1), shape (N, 1, H, W)."""
    pooled = ops.channel_concat([ops.channel_pool(x, "max"), ops.channel_pool(x, "mean")])
    return ops.sigmoid(ops.conv2d(pooled, LpamParams.SPEC, p.weight, p.bias))

"""Feature attention transformation: conv-BN-hardswish stem, channel gate, spatial gate."""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .attention import LCAM_RATIO, LcamParams, LpamParams, lcam_forward, lpam_forward
from .errors import ConfigError
from .params import BatchNormParams, ConvNoBias, ParamGroup, ParamSpec, param_group
from .tensor import ConvSpec, Tensor


@param_group
@dataclass(frozen=True)
class FatmParams(ParamGroup):
    cbh: ConvNoBias  # (C, C, 3, 3)
    cbh_bn: BatchNormParams
    lcam: LcamParams
    lpam: LpamParams

    @property
    def channels(self) -> int:
        return self.cbh.weight.dims[0]

    @property
    def ratio(self) -> int:
        return self.channels // self.lcam.hidden

    @staticmethod
    def manifest(c: int, ratio: int = LCAM_RATIO) -> list[ParamSpec]:
        return [
            *ConvNoBias.manifest("cbh.", (c, c, 3, 3)),
            *BatchNormParams.manifest("cbh_bn.", c),
            *LcamParams.manifest("lcam.", c, ratio),
            *LpamParams.manifest("lpam."),
        ]


def cbh(x: Tensor, params: FatmParams, bn_mode: str = "infer") -> Tensor:
    c = x.dims[1]
    bn = params.cbh_bn
    y = ops.conv2d(x, ConvSpec(c, c, 3, 3, padding=1, has_bias=False), params.cbh.weight)
    out = ops.hardswish(ops.batch_norm(y, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn_mode))
    if bn_mode == "train":
        bn.running_mean, bn.running_var = ops.update_running_stats(y, bn.running_mean, bn.running_var)
    return out


def fatm_gates(p: Tensor, params: FatmParams, bn_mode: str = "infer", halve_lcam: bool = False):
    """Return (F_h, channel gate, F_LC, spatial gate, F_LP)."""
    if p.dims[1] != params.channels:
        raise ConfigError(f"weights are for {params.channels} channels, input has {p.dims[1]}")
    f_h = cbh(p, params, bn_mode)
    g_c = lcam_forward(f_h, params.lcam, halve=halve_lcam)
    f_lc = ops.mul(f_h, g_c)
    g_p = lpam_forward(f_lc, params.lpam)
    return f_h, g_c, f_lc, g_p, ops.mul(f_lc, g_p)


def fatm_forward(p: Tensor, params: FatmParams, bn_mode: str = "infer", halve_lcam: bool = False) -> Tensor:
    return fatm_gates(p, params, bn_mode, halve_lcam)[-1]

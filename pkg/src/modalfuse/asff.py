"""Three-stage RGB/IR fusion unit.

Stage 1 gates each modality with CAM, adds the residual, filters it with a
depthwise 3x3 and fuses the sum of both streams with PAM.  Stage 2 is the
modulation block (DFM then FM, each with a residual).  Stage 3 is a channel
shuffle.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .attention import CAM_KERNEL, CamParams, PamParams, cam_forward, pam_forward
from .errors import ConfigError, ShapeError
from .ops import channel_shuffle, shuffle_permutation  # noqa: F401  (re-exported)
from .params import (
    BatchNormParams,
    ConvNoBias,
    ConvParams,
    ParamGroup,
    ParamSpec,
    param_group,
)
from .tensor import ConvSpec, Tensor

DEFAULT_GROUPS = 4


@param_group
@dataclass(frozen=True)
class ModulationScales(ParamGroup):
    """Per-channel weights of the pooled features (alpha) and the variance (beta)."""

    alpha: Tensor  # (1, C, 1, 1)
    beta: Tensor  # (1, C, 1, 1)


@param_group
@dataclass(frozen=True)
class DfmParams(ParamGroup):
    entry: ConvParams  # C -> 2C pointwise
    global_dw: ConvParams  # depthwise 3x3 on the pooled half
    global_mod: ConvParams  # C -> C pointwise at half resolution
    modulate: ModulationScales
    local_dw: ConvParams
    local_expand: ConvParams  # C -> 2C
    local_reduce: ConvParams  # 2C -> C
    exit: ConvParams  # C -> C

    @staticmethod
    def manifest(prefix: str, c: int) -> list[ParamSpec]:
        vec = (1, c, 1, 1)
        return [
            *ConvParams.manifest(prefix + "entry.", (2 * c, c, 1, 1)),
            *ConvParams.manifest(prefix + "global_dw.", (c, 1, 3, 3)),
            *ConvParams.manifest(prefix + "global_mod.", (c, c, 1, 1)),
            ParamSpec(prefix + "modulate.alpha", vec, "ones"),
            ParamSpec(prefix + "modulate.beta", vec, "zeros"),
            *ConvParams.manifest(prefix + "local_dw.", (c, 1, 3, 3)),
            *ConvParams.manifest(prefix + "local_expand.", (2 * c, c, 1, 1)),
            *ConvParams.manifest(prefix + "local_reduce.", (c, 2 * c, 1, 1)),
            *ConvParams.manifest(prefix + "exit.", (c, c, 1, 1)),
        ]


@param_group
@dataclass(frozen=True)
class FmParams(ParamGroup):
    expand: ConvParams  # C -> 2C pointwise
    cbs1: ConvNoBias  # C/2 -> C/2 pointwise
    cbs1_bn: BatchNormParams
    dw: ConvNoBias  # depthwise 3x3 on C/2
    dw_bn: BatchNormParams
    cbs2: ConvNoBias
    cbs2_bn: BatchNormParams
    merge: ConvParams  # 2C -> C pointwise

    @staticmethod
    def manifest(prefix: str, c: int) -> list[ParamSpec]:
        h = c // 2
        return [
            *ConvParams.manifest(prefix + "expand.", (2 * c, c, 1, 1)),
            *ConvNoBias.manifest(prefix + "cbs1.", (h, h, 1, 1)),
            *BatchNormParams.manifest(prefix + "cbs1_bn.", h),
            *ConvNoBias.manifest(prefix + "dw.", (h, 1, 3, 3)),
            *BatchNormParams.manifest(prefix + "dw_bn.", h),
            *ConvNoBias.manifest(prefix + "cbs2.", (h, h, 1, 1)),
            *BatchNormParams.manifest(prefix + "cbs2_bn.", h),
            *ConvParams.manifest(prefix + "merge.", (c, 2 * c, 1, 1)),
        ]


@param_group
@dataclass(frozen=True)
class AsffParams(ParamGroup):
    cam_rgb: CamParams
    cam_ir: CamParams
    dw_rgb: ConvParams
    dw_ir: ConvParams
    pam: PamParams
    dfm: DfmParams
    fm: FmParams
    groups: int = DEFAULT_GROUPS

    @property
    def channels(self) -> int:
        return self.dw_rgb.weight.dims[0]

    @staticmethod
    def manifest(c: int, k: int = CAM_KERNEL) -> list[ParamSpec]:
        if c < 2 or c % 2:
            raise ConfigError(f"fusion unit needs an even channel count, got {c}")
        return [
            *CamParams.manifest("cam_rgb.", k),
            *CamParams.manifest("cam_ir.", k),
            *ConvParams.manifest("dw_rgb.", (c, 1, 3, 3)),
            *ConvParams.manifest("dw_ir.", (c, 1, 3, 3)),
            *PamParams.manifest("pam.", c),
            *DfmParams.manifest("dfm.", c),
            *FmParams.manifest("fm.", c),
        ]


def _conv(x: Tensor, spec: ConvSpec, p) -> Tensor:
    return ops.conv2d(x, spec, p.weight, getattr(p, "bias", None))


def _bn(x: Tensor, p: BatchNormParams, mode: str) -> Tensor:
    y = ops.batch_norm(x, p.gamma, p.beta, p.running_mean, p.running_var, mode)
    if mode == "train":
        p.running_mean, p.running_var = ops.update_running_stats(x, p.running_mean, p.running_var)
    return y


def check_pair(p_rgb: Tensor, p_ir: Tensor) -> None:
    if p_rgb.dims != p_ir.dims:
        raise ShapeError(f"modality shapes differ: rgb {p_rgb.dims} vs ir {p_ir.dims}")


def attention_fusion(p_rgb: Tensor, p_ir: Tensor, params: AsffParams) -> Tensor:
    """Stage 1: F_a = PAM(DW(P_rgb + CAM(P_rgb)) + DW(P_ir + CAM(P_ir)))."""
    check_pair(p_rgb, p_ir)
    dw = ConvSpec.depthwise(p_rgb.dims[1])
    m_rgb = _conv(ops.add(p_rgb, cam_forward(p_rgb, params.cam_rgb)), dw, params.dw_rgb)
    m_ir = _conv(ops.add(p_ir, cam_forward(p_ir, params.cam_ir)), dw, params.dw_ir)
    return pam_forward(ops.add(m_rgb, m_ir), params.pam)


def _check_modulation_input(x: Tensor) -> None:
    _, c, h, w = x.dims
    if c % 2:
        raise ConfigError(f"modulation block needs an even channel count, got {c}")
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"modulation block needs even spatial extents >= 2, got {h}x{w}")


def dfm_forward(f_a: Tensor, p: DfmParams) -> Tensor:
    """Dual-branch dynamic modulation; returns F_d with the shape of ``f_a``."""
    _check_modulation_input(f_a)
    _, c, h, w = f_a.dims
    entry = _conv(ops.l2_normalize_channels(f_a), ConvSpec.pointwise(c, 2 * c), p.entry)
    x, y = ops.channel_split(entry, [c, c])

    # global branch, modulated at half resolution then upsampled
    x_s = _conv(ops.adaptive_pool(x, h // 2, w // 2, "max"), ConvSpec.depthwise(c), p.global_dw)
    mixed = ops.add(ops.mul(x_s, p.modulate.alpha), ops.mul(ops.channel_variance(x), p.modulate.beta))
    x_m = _conv(mixed, ConvSpec.pointwise(c, c), p.global_mod)
    x_g = ops.mul(x, ops.upsample_nearest(ops.gelu(x_m), 2))

    y_h = _conv(_conv(y, ConvSpec.depthwise(c), p.local_dw), ConvSpec.pointwise(c, 2 * c), p.local_expand)
    y_l = _conv(ops.gelu(y_h), ConvSpec.pointwise(2 * c, c), p.local_reduce)
    return _conv(ops.add(x_g, y_l), ConvSpec.pointwise(c, c), p.exit)


def _cbs(x: Tensor, conv: ConvNoBias, bn: BatchNormParams, mode: str) -> Tensor:
    c = x.dims[1]
    return ops.silu(_bn(_conv(x, ConvSpec.pointwise(c, c, bias=False), conv), bn, mode))


def fm_forward(f_dr: Tensor, p: FmParams, bn_mode: str = "infer") -> Tensor:
    """Expand, split C/2 | 3C/2, locally encode the narrow part, merge back to C."""
    c = f_dr.dims[1]
    if c % 2:
        raise ConfigError(f"feature mapping needs an even channel count, got {c}")
    half = c // 2
    expanded = ops.gelu(_conv(ops.l2_normalize_channels(f_dr), ConvSpec.pointwise(c, 2 * c), p.expand))
    f1, f2 = ops.channel_split(expanded, [half, 3 * half])
    enc = _cbs(f1, p.cbs1, p.cbs1_bn, bn_mode)
    enc = _bn(_conv(enc, ConvSpec.depthwise(half, bias=False), p.dw), p.dw_bn, bn_mode)
    enc = _cbs(enc, p.cbs2, p.cbs2_bn, bn_mode)
    merged = ops.channel_concat([ops.gelu(enc), f2])
    return _conv(merged, ConvSpec.pointwise(2 * c, c), p.merge)


def fmb_forward(f_a: Tensor, dfm: DfmParams, fm: FmParams, bn_mode: str = "infer") -> Tensor:
    f_dr = ops.add(dfm_forward(f_a, dfm), f_a)
    return ops.add(fm_forward(f_dr, fm, bn_mode), f_dr)


def asff_stages(p_rgb: Tensor, p_ir: Tensor, params: AsffParams, bn_mode: str = "infer"):
    """Return (F_a, F_b, F_c)."""
    f_a = attention_fusion(p_rgb, p_ir, params)
    f_b = fmb_forward(f_a, params.dfm, params.fm, bn_mode)
    return f_a, f_b, channel_shuffle(f_b, params.groups)


def asff_forward(p_rgb: Tensor, p_ir: Tensor, params: AsffParams, bn_mode: str = "infer") -> Tensor:
    check_pair(p_rgb, p_ir)
    c = p_rgb.dims[1]
    if c != params.channels:
        raise ConfigError(f"weights are for {params.channels} channels, inputs have {c}")
    if c % params.groups:
        raise ConfigError(f"{c} channels cannot be split into {params.groups} shuffle groups")
    _check_modulation_input(p_rgb)
    return asff_stages(p_rgb, p_ir, params, bn_mode)[2]

"""Primitive NCHW kernels with reverse-mode rules.

Every public function validates its arguments, then dispatches through
:func:`modalfuse.autograd.apply` so the call is recorded when a tape is
active.  Kernels are sequential numpy code; results are deterministic for
identical inputs.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .autograd import Primitive, apply, decide
from .errors import ConfigError, DataError, ShapeError
from .tensor import ConvSpec, Tensor

BN_EPS = 1e-5
L2_EPS = 1e-6
BN_MOMENTUM = 0.1

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


# --------------------------------------------------------------------------
# convolution


class _Conv2d(Primitive):
    name = "conv2d"

    @staticmethod
    def forward(x, w, b, *, spec: ConvSpec):
        n, c, h, wd = x.shape
        oh, ow = spec.output_hw(h, wd)
        p, s = spec.padding, spec.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = sliding_window_view(xp, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
        cols = cols[:, :, : (oh - 1) * s + 1 : s, : (ow - 1) * s + 1 : s]
        g = spec.groups
        cols = cols.reshape(n, g, c // g, oh, ow, spec.kernel_h, spec.kernel_w)
        wg = w.reshape(g, spec.out_channels // g, c // g, spec.kernel_h, spec.kernel_w)
        out = np.einsum("ngchwij,gocij->ngohw", cols, wg, optimize=True)
        out = out.reshape(n, spec.out_channels, oh, ow)
        if b is not None:
            out = out + b
        return out, (x.shape, xp.shape, cols, wg, spec, b is not None)

    @staticmethod
    def backward(ctx, gy):
        xshape, xpshape, cols, wg, spec, has_bias = ctx
        n, c, h, wd = xshape
        g = spec.groups
        oh, ow = gy.shape[2:]
        gyg = gy.reshape(n, g, spec.out_channels // g, oh, ow)
        gw = np.einsum("ngohw,ngchwij->gocij", gyg, cols, optimize=True).reshape(spec.weight_dims)
        gb = gy.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) if has_bias else None
        gcols = np.einsum("ngohw,gocij->ngchwij", gyg, wg, optimize=True).reshape(
            n, c, oh, ow, spec.kernel_h, spec.kernel_w
        )
        gxp = np.zeros(xpshape, dtype=gy.dtype)
        s = spec.stride
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                gxp[:, :, i : i + (oh - 1) * s + 1 : s, j : j + (ow - 1) * s + 1 : s] += gcols[..., i, j]
        p = spec.padding
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, gw.astype(gy.dtype, copy=False), gb


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation with zero padding, stride and channel groups.

    ``weight`` is (out, in/groups, kh, kw); ``bias`` is (1, out, 1, 1).
    """
    if x.dims[1] != spec.in_channels:
        raise ConfigError(f"input has {x.dims[1]} channels, conv expects {spec.in_channels}")
    if weight.dims != spec.weight_dims:
        raise ConfigError(f"weight dims {weight.dims} != expected {spec.weight_dims}")
    if spec.has_bias != (bias is not None):
        raise ConfigError("bias presence does not match ConvSpec.has_bias")
    if bias is not None and bias.dims != (1, spec.out_channels, 1, 1):
        raise ConfigError(f"bias dims {bias.dims} != (1, {spec.out_channels}, 1, 1)")
    spec.output_hw(x.dims[2], x.dims[3])
    return apply(_Conv2d, x, weight, bias, spec=spec)


class _Conv1d(Primitive):
    name = "conv1d"

    @staticmethod
    def forward(x, w, b, *, k: int):
        shape = x.shape
        seq = x.reshape(shape[0], -1)
        pad = (k - 1) // 2
        win = sliding_window_view(np.pad(seq, ((0, 0), (pad, pad))), k, axis=1)
        taps = w.reshape(k)
        out = win @ taps
        if b is not None:
            out = out + b.reshape(())
        return out.reshape(shape), (shape, win, taps, b is not None)

    @staticmethod
    def backward(ctx, gy):
        shape, win, taps, has_bias = ctx
        g = gy.reshape(shape[0], -1)
        k = taps.size
        pad = (k - 1) // 2
        gw = np.einsum("nl,nlk->k", g, win).reshape(1, 1, 1, k)
        gb = np.full((1, 1, 1, 1), g.sum(), dtype=gy.dtype) if has_bias else None
        length = g.shape[1]
        gpad = np.zeros((g.shape[0], length + 2 * pad), dtype=gy.dtype)
        for t in range(k):
            gpad[:, t : t + length] += g * taps[t]
        gx = gpad[:, pad : pad + length].reshape(shape)
        return gx, gw.astype(gy.dtype, copy=False), gb


def conv1d(x: Tensor, kernel_size: int, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution along a channel-descriptor vector.

    ``x`` is (N, C, 1, 1) or (N, 1, C, 1); the kernel slides over the C
    entries.  ``weight`` is (1, 1, 1, k) and ``bias`` (1, 1, 1, 1).
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {kernel_size}")
    n, c, h, w = x.dims
    if sum(d > 1 for d in (c, h, w)) > 1:
        raise ShapeError(f"conv1d expects a channel-descriptor vector, got {x.dims}")
    if weight.dims != (1, 1, 1, kernel_size):
        raise ConfigError(f"conv1d weight dims {weight.dims} != (1, 1, 1, {kernel_size})")
    if bias is not None and bias.dims != (1, 1, 1, 1):
        raise ConfigError(f"conv1d bias dims {bias.dims} != (1, 1, 1, 1)")
    return apply(_Conv1d, x, weight, bias, k=kernel_size)


# --------------------------------------------------------------------------
# pooling


def _bins(size: int, out: int) -> list[tuple[int, int]]:
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


class _AdaptivePool(Primitive):
    name = "adaptive_pool"

    @staticmethod
    def forward(x, *, out_h: int, out_w: int, mode: str):
        n, c, h, w = x.shape
        if (out_h, out_w) == (h, w):
            return x.copy(), (x.shape, None, None, None, mode)
        hb, wb = _bins(h, out_h), _bins(w, out_w)
        out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
        arg = np.empty((n, c, out_h, out_w), dtype=np.intp) if mode == "max" else None
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                region = x[:, :, h0:h1, w0:w1]
                if mode == "avg":
                    out[:, :, i, j] = region.mean(axis=(2, 3))
                else:
                    flat = region.reshape(n, c, -1)
                    idx = decide(flat.argmax(axis=2))
                    arg[:, :, i, j] = idx
                    out[:, :, i, j] = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]
        return out, (x.shape, hb, wb, arg, mode)

    @staticmethod
    def backward(ctx, gy):
        shape, hb, wb, arg, mode = ctx
        if hb is None:
            return (gy,)
        n, c = shape[:2]
        gx = np.zeros(shape, dtype=gy.dtype)
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                g = gy[:, :, i, j]
                if mode == "avg":
                    gx[:, :, h0:h1, w0:w1] += (g / ((h1 - h0) * (w1 - w0)))[:, :, None, None]
                else:
                    bw = w1 - w0
                    idx = arg[:, :, i, j]
                    hi, wi = h0 + idx // bw, w0 + idx % bw
                    nn_, cc = np.indices((n, c))
                    np.add.at(gx, (nn_, cc, hi, wi), g)
        return (gx,)


def adaptive_pool(x: Tensor, out_h: int, out_w: int, mode: str = "avg") -> Tensor:
    """Adaptive average/max pooling with floor/ceil bin edges."""
    if mode not in ("avg", "max"):
        raise ConfigError(f"unknown pool mode {mode!r}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"pool output extents must be >= 1, got {out_h}x{out_w}")
    if out_h > x.dims[2] or out_w > x.dims[3]:
        raise ShapeError(f"pool output {out_h}x{out_w} exceeds input {x.dims[2]}x{x.dims[3]}")
    return apply(_AdaptivePool, x, out_h=out_h, out_w=out_w, mode=mode)


class _ChannelPool(Primitive):
    name = "channel_pool"

    @staticmethod
    def forward(x, *, mode: str):
        if mode == "mean":
            return x.mean(axis=1, keepdims=True), (x.shape, None)
        idx = decide(x.argmax(axis=1)[:, None])
        return np.take_along_axis(x, idx, axis=1), (x.shape, idx)

    @staticmethod
    def backward(ctx, gy):
        shape, idx = ctx
        if idx is None:
            return (np.broadcast_to(gy / shape[1], shape).copy(),)
        gx = np.zeros(shape, dtype=gy.dtype)
        np.put_along_axis(gx, idx, gy, axis=1)
        return (gx,)


def channel_pool(x: Tensor, mode: str) -> Tensor:
    """Max or mean over the channel axis at every position -> (N, 1, H, W)."""
    if mode not in ("max", "mean"):
        raise ConfigError(f"unknown channel pool mode {mode!r}")
    return apply(_ChannelPool, x, mode=mode)


# --------------------------------------------------------------------------
# activations


def _sigmoid(x):
    # keep gates strictly inside (0, 1) even where float32 would saturate
    fi = np.finfo(x.dtype)
    return np.clip(expit(x), fi.tiny, 1.0 - fi.epsneg)


class _Activation(Primitive):
    name = "activation"

    @staticmethod
    def forward(x, *, kind: str):
        branch = None
        if kind == "sigmoid":
            y = _sigmoid(x)
        elif kind == "relu":
            branch = decide(x > 0)
            y = np.where(branch, x, 0.0)
        elif kind == "gelu":
            y = 0.5 * x * (1.0 + erf(x / _SQRT2))
        elif kind == "silu":
            y = x * _sigmoid(x)
        elif kind == "hardswish":
            # region 0: x < -3, 1: -3 <= x < 3, 2: x >= 3
            branch = decide(np.digitize(x, (-3.0, 3.0)))
            y = np.where(branch == 0, 0.0, np.where(branch == 2, x, x * (x + 3.0) / 6.0))
        else:
            raise ConfigError(f"unknown activation {kind!r}")
        return y.astype(x.dtype, copy=False), (x, y, kind, branch)

    @staticmethod
    def backward(ctx, gy):
        x, y, kind, branch = ctx
        if kind == "sigmoid":
            d = y * (1.0 - y)
        elif kind == "relu":
            d = branch.astype(x.dtype)
        elif kind == "gelu":
            d = 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        elif kind == "silu":
            s = _sigmoid(x)
            d = s * (1.0 + x * (1.0 - s))
        else:
            d = np.where(branch == 0, 0.0, np.where(branch == 2, 1.0, (2.0 * x + 3.0) / 6.0))
        return ((gy * d).astype(gy.dtype, copy=False),)


ACTIVATIONS = ("sigmoid", "relu", "gelu", "silu", "hardswish")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return apply(_Activation, x, kind=kind)


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def gelu(x: Tensor) -> Tensor:
    return activation(x, "gelu")


def silu(x: Tensor) -> Tensor:
    return activation(x, "silu")


def hardswish(x: Tensor) -> Tensor:
    return activation(x, "hardswish")


# --------------------------------------------------------------------------
# normalisation


class _BatchNorm(Primitive):
    name = "batch_norm"

    @staticmethod
    def forward(x, gamma, beta, rmean, rvar, *, mode: str, eps: float):
        if mode == "infer":
            mean, var = rmean, rvar
        else:
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv
        return xhat * gamma + beta, (xhat, inv, gamma, mode)

    @staticmethod
    def backward(ctx, gy):
        xhat, inv, gamma, mode = ctx
        ggamma = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gbeta = gy.sum(axis=(0, 2, 3), keepdims=True)
        if mode == "infer":
            gx = gy * gamma * inv
        else:
            m = gy.shape[0] * gy.shape[2] * gy.shape[3]
            gx = (gamma * inv / m) * (m * gy - gbeta - xhat * ggamma)
        return gx, ggamma, gbeta, None, None


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str = "infer",
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalisation.

    ``infer`` uses the running statistics; ``train`` uses the batch's
    population statistics over (N, H, W).  Running statistics are updated
    separately with :func:`update_running_stats`.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"batch norm mode must be train or infer, got {mode!r}")
    c = x.dims[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.dims != (1, c, 1, 1):
            raise ShapeError(f"batch norm {name} dims {t.dims} != (1, {c}, 1, 1)")
    if (running_var.data < 0).any():
        raise DataError("running variance has negative entries")
    return apply(_BatchNorm, x, gamma, beta, running_mean, running_var, mode=mode, eps=eps)


def update_running_stats(
    x: Tensor, running_mean: Tensor, running_var: Tensor, momentum: float = BN_MOMENTUM
) -> tuple[Tensor, Tensor]:
    """Exponential moving update; the variance estimate is unbiased."""
    a = x.data
    m = a.shape[0] * a.shape[2] * a.shape[3]
    mean = a.mean(axis=(0, 2, 3), keepdims=True)
    var = ((a - mean) ** 2).sum(axis=(0, 2, 3), keepdims=True) / max(m - 1, 1)
    new_mean = (1 - momentum) * running_mean.data + momentum * mean
    new_var = (1 - momentum) * running_var.data + momentum * var
    return Tensor._wrap(new_mean.astype(running_mean.dtype)), Tensor._wrap(new_var.astype(running_var.dtype))


class _L2Normalize(Primitive):
    name = "l2_normalize_channels"

    @staticmethod
    def forward(x, *, eps: float):
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
        active = decide(norm > eps)
        denom = np.where(active, norm, eps)
        y = x / denom
        return y, (y, denom, active)

    @staticmethod
    def backward(ctx, gy):
        y, denom, active = ctx
        proj = (gy * y).sum(axis=1, keepdims=True)
        gx = np.where(active, (gy - y * proj) / denom, gy / denom)
        return (gx,)


def l2_normalize_channels(x: Tensor, eps: float = L2_EPS) -> Tensor:
    """Divide each per-position channel vector by max(||v||_2, eps)."""
    return apply(_L2Normalize, x, eps=eps)


class _ChannelVariance(Primitive):
    name = "channel_variance"

    @staticmethod
    def forward(x):
        centred = x - x.mean(axis=(2, 3), keepdims=True)
        return (centred * centred).mean(axis=(2, 3), keepdims=True), (centred,)

    @staticmethod
    def backward(ctx, gy):
        (centred,) = ctx
        m = centred.shape[2] * centred.shape[3]
        return (gy * (2.0 / m) * centred,)


def channel_variance(x: Tensor) -> Tensor:
    """Population variance over H*W for each (n, c) -> (N, C, 1, 1)."""
    return apply(_ChannelVariance, x)


# --------------------------------------------------------------------------
# resampling


class _Upsample(Primitive):
    name = "upsample_nearest"

    @staticmethod
    def forward(x, *, factor: int):
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3), (factor,)

    @staticmethod
    def backward(ctx, gy):
        (f,) = ctx
        n, c, h, w = gy.shape
        return (gy.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    return apply(_Upsample, x, factor=factor)


# --------------------------------------------------------------------------
# elementwise algebra and channel bookkeeping


class _Elementwise(Primitive):
    name = "elementwise"

    @staticmethod
    def forward(a, b, *, op: str):
        if op == "add":
            out = a + b
        elif op == "sub":
            out = a - b
        else:
            out = a * b
        return out, (a, b, op)

    @staticmethod
    def backward(ctx, gy):
        a, b, op = ctx
        if op == "add":
            ga, gb = gy, gy
        elif op == "sub":
            ga, gb = gy, -gy
        else:
            ga, gb = gy * b, gy * a
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)


def _broadcast_dims(a: tuple, b: tuple) -> tuple:
    out = []
    for da, db in zip(a, b):
        if da != db and 1 not in (da, db):
            raise ShapeError(f"shapes {a} and {b} are not broadcastable")
        out.append(max(da, db))
    return tuple(out)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """``add``, ``sub`` or ``mul`` with unit-extent broadcasting."""
    if op not in ("add", "sub", "mul"):
        raise ConfigError(f"unknown elementwise op {op!r}")
    _broadcast_dims(a.dims, b.dims)
    return apply(_Elementwise, a, b, op=op)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


class _ChannelSlice(Primitive):
    name = "channel_slice"

    @staticmethod
    def forward(x, *, start: int, stop: int):
        return x[:, start:stop].copy(), (x.shape, start, stop)

    @staticmethod
    def backward(ctx, gy):
        shape, start, stop = ctx
        gx = np.zeros(shape, dtype=gy.dtype)
        gx[:, start:stop] = gy
        return (gx,)


def channel_split(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if any(s < 1 for s in sizes) or sum(sizes) != x.dims[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not partition {x.dims[1]} channels")
    parts, start = [], 0
    for s in sizes:
        parts.append(apply(_ChannelSlice, x, start=start, stop=start + s))
        start += s
    return parts


class _ChannelConcat(Primitive):
    name = "channel_concat"

    @staticmethod
    def forward(*parts):
        return np.concatenate(parts, axis=1), tuple(p.shape[1] for p in parts)

    @staticmethod
    def backward(ctx, gy):
        edges = np.cumsum(ctx)[:-1]
        return tuple(np.ascontiguousarray(g) for g in np.split(gy, edges, axis=1))


def channel_concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("channel_concat needs at least one part")
    n, _, h, w = parts[0].dims
    for p in parts[1:]:
        if (p.dims[0], p.dims[2], p.dims[3]) != (n, h, w):
            raise ShapeError(f"cannot concatenate {p.dims} with {parts[0].dims}: N/H/W differ")
    return apply(_ChannelConcat, *parts)


class _ChannelShuffle(Primitive):
    name = "channel_shuffle"

    @staticmethod
    def forward(x, *, groups: int):
        n, c, h, w = x.shape
        out = x.reshape(n, groups, c // groups, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w)
        return out, (groups,)

    @staticmethod
    def backward(ctx, gy):
        (groups,) = ctx
        n, c, h, w = gy.shape
        return (gy.reshape(n, c // groups, groups, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w),)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Reshape channels to (G, C/G), transpose, flatten back."""
    c = x.dims[1]
    if groups < 1 or c % groups:
        raise ConfigError(f"{c} channels cannot be split into {groups} shuffle groups")
    return apply(_ChannelShuffle, x, groups=groups)


def shuffle_permutation(channels: int, groups: int) -> list[int]:
    """Input channel feeding each output channel of :func:`channel_shuffle`."""
    if groups < 1 or channels % groups:
        raise ConfigError(f"{channels} channels cannot be split into {groups} shuffle groups")
    per = channels // groups
    return [(k % groups) * per + k // groups for k in range(channels)]


# --------------------------------------------------------------------------
# reductions used by objectives


class _Mean(Primitive):
    name = "mean_all"

    @staticmethod
    def forward(x):
        return np.full((1, 1, 1, 1), x.mean(), dtype=x.dtype), (x.shape,)

    @staticmethod
    def backward(ctx, gy):
        (shape,) = ctx
        return (np.full(shape, gy.reshape(()) / np.prod(shape), dtype=gy.dtype),)


def mean_all(x: Tensor) -> Tensor:
    return apply(_Mean, x)


class _MSE(Primitive):
    name = "mse_loss"

    @staticmethod
    def forward(pred, target):
        diff = pred - target
        return np.full((1, 1, 1, 1), (diff * diff).mean(), dtype=pred.dtype), (diff,)

    @staticmethod
    def backward(ctx, gy):
        (diff,) = ctx
        g = diff * (2.0 * gy.reshape(()) / diff.size)
        return g, -g


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.dims != target.dims:
        raise ShapeError(f"prediction {pred.dims} and target {target.dims} differ")
    return apply(_MSE, pred, target)

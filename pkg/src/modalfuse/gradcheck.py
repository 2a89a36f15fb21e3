"""Analytic-vs-finite-difference gradient checks for kernels and modules.

The analytic side runs the production float32 path on a tape; the oracle
re-evaluates the same function in float64 with central differences.  The
objective is a random projection ``<v, f(x)>`` so that no output entry is
weighted trivially.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ops
from .asff import AsffParams, DfmParams, FmParams, asff_forward, dfm_forward, fm_forward
from .attention import (
    CamParams,
    LcamParams,
    LpamParams,
    PamParams,
    cam_forward,
    lcam_forward,
    lpam_forward,
    pam_forward,
)
from .autograd import Tape, backward, finite_diff_grad, relative_error
from .config import ModuleConfig
from .fatm import FatmParams, fatm_forward
from .tensor import ConvSpec, Tensor
from .weights import init_weights

DEFAULT_TOL = 1e-3
DEFAULT_STEP = 1e-3
# Inputs to kinked activations are kept this many steps away from the kinks.
KINK_MARGIN = 10


@dataclass
class GradCheckResult:
    name: str
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = DEFAULT_TOL
    probed: int = 0
    kinked: int = 0

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def summary(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.name:<28} worst rel err {self.worst:.2e}  "
            f"probes {self.probed} (kinked {self.kinked})  [{status}]"
        )


Fn = Callable[[Mapping[str, Tensor]], Tensor]


def check_function(
    name: str,
    fn: Fn,
    inputs: Mapping[str, Tensor],
    rng: np.random.Generator,
    samples: int | None = None,
    tol: float = DEFAULT_TOL,
    h: float = DEFAULT_STEP,
    skip: tuple[str, ...] = (),
    pin_branches: bool = True,
) -> GradCheckResult:
    """Compare tape gradients of ``fn`` against central differences.

    ``samples`` caps the number of coordinates probed per input tensor; the
    error is measured over the probed coordinates only.  With
    ``pin_branches`` the oracle differentiates the smooth piece active at
    the base point (the piece reverse mode differentiates); probes whose
    stencil crosses a kink are counted in ``kinked`` either way.
    """
    with Tape() as tape:
        tape.watch_all(inputs)
        out = tape.mark_output(fn(inputs))
    proj = Tensor(rng.standard_normal(out.dims))
    grads = backward(tape, proj)

    wide = {k: v.astype(np.float64) for k, v in inputs.items()}
    result = GradCheckResult(name, tol=tol)
    for key, t in inputs.items():
        if key in skip:
            continue
        def f(v: Tensor, key=key) -> Tensor:
            return fn({**wide, key: v})

        idx = None
        mask = None
        if samples is not None and samples < t.numel:
            idx = np.sort(rng.choice(t.numel, size=samples, replace=False))
            mask = np.zeros(t.numel, dtype=bool)
            mask[idx] = True
        numeric, kinks = finite_diff_grad(
            f, t, h=h, seed=proj, indices=idx, pin_branches=pin_branches, return_kinks=True
        )
        result.probed += t.numel if idx is None else len(idx)
        result.kinked += int(kinks.sum())
        result.errors[key] = relative_error(grads[key], numeric, mask=mask)
    return result


def _normal(rng, dims) -> Tensor:
    return Tensor(rng.standard_normal(dims))


def _away_from(rng, dims, kinks, margin) -> Tensor:
    x = rng.uniform(-5.0, 5.0, size=dims)
    for k in kinks:
        near = np.abs(x - k) < margin
        x = np.where(near, k + np.sign(x - k + 1e-12) * (margin + rng.uniform(0, 0.5, dims)), x)
    return Tensor(x)


def _distinct(rng, dims, gap: float) -> Tensor:
    """Random values whose pairwise gaps all exceed ``gap`` (no max ties)."""
    n = int(np.prod(dims))
    vals = (np.arange(n) * gap * 3 + rng.uniform(0, gap, n)) / (n * gap * 3) * 4.0 - 2.0
    return Tensor(rng.permutation(vals).reshape(dims))


def primitive_checks(seed: int, c: int = 4, hw: int = 6, h: float = DEFAULT_STEP) -> list[GradCheckResult]:
    """Full-coordinate checks of every differentiable kernel."""
    rng = np.random.default_rng(seed)
    n = 2
    results = []

    def run(name, fn, inputs, **kw):
        results.append(check_function(name, fn, inputs, rng, h=h, pin_branches=False, **kw))

    for label, spec in (
        ("conv2d", ConvSpec(c, 2 * c, 3, 3, padding=1)),
        ("conv2d_stride_group", ConvSpec(c, c, 3, 3, stride=2, padding=1, groups=2)),
        ("conv2d_depthwise", ConvSpec.depthwise(c)),
        ("conv2d_pointwise_nobias", ConvSpec.pointwise(c, c, bias=False)),
    ):
        inputs = {"x": _normal(rng, (n, c, hw, hw)), "w": _normal(rng, spec.weight_dims)}
        if spec.has_bias:
            inputs["b"] = _normal(rng, (1, spec.out_channels, 1, 1))
        run(label, lambda m, s=spec: ops.conv2d(m["x"], s, m["w"], m.get("b")), inputs)

    run(
        "conv1d",
        lambda m: ops.conv1d(m["x"], 3, m["w"], m["b"]),
        {"x": _normal(rng, (n, 2 * c, 1, 1)), "w": _normal(rng, (1, 1, 1, 3)), "b": _normal(rng, (1, 1, 1, 1))},
    )
    run("adaptive_pool_avg", lambda m: ops.adaptive_pool(m["x"], 4, 3, "avg"), {"x": _normal(rng, (n, c, hw + 1, hw))})
    run(
        "adaptive_pool_max",
        lambda m: ops.adaptive_pool(m["x"], 3, 2, "max"),
        {"x": _distinct(rng, (n, c, hw, hw), 20 * h)},
    )
    run("channel_pool_max", lambda m: ops.channel_pool(m["x"], "max"), {"x": _distinct(rng, (n, c, hw, hw), 20 * h)})
    run("channel_pool_mean", lambda m: ops.channel_pool(m["x"], "mean"), {"x": _normal(rng, (n, c, hw, hw))})

    margin = KINK_MARGIN * h
    for kind in ("sigmoid", "gelu", "silu"):
        run(kind, lambda m, k=kind: ops.activation(m["x"], k), {"x": _normal(rng, (n, c, hw, hw))})
    run("relu", lambda m: ops.relu(m["x"]), {"x": _away_from(rng, (n, c, hw, hw), [0.0], margin)})
    run("hardswish", lambda m: ops.hardswish(m["x"]), {"x": _away_from(rng, (n, c, hw, hw), [-3.0, 3.0], margin)})

    stats = {
        "x": _normal(rng, (n, c, hw, hw)),
        "gamma": _normal(rng, (1, c, 1, 1)),
        "beta": _normal(rng, (1, c, 1, 1)),
        "mean": _normal(rng, (1, c, 1, 1)),
        "var": Tensor(rng.uniform(0.5, 2.0, (1, c, 1, 1))),
    }
    for mode in ("infer", "train"):
        run(
            f"batch_norm_{mode}",
            lambda m, md=mode: ops.batch_norm(m["x"], m["gamma"], m["beta"], m["mean"], m["var"], md),
            stats,
            skip=("mean", "var"),
        )

    run("upsample_nearest", lambda m: ops.upsample_nearest(m["x"], 2), {"x": _normal(rng, (n, c, 3, 3))})
    run("l2_normalize_channels", lambda m: ops.l2_normalize_channels(m["x"]), {"x": _normal(rng, (n, c, hw, hw))})
    run("channel_variance", lambda m: ops.channel_variance(m["x"]), {"x": _normal(rng, (n, c, hw, hw))})
    for op in ("add", "sub", "mul"):
        run(
            f"elementwise_{op}",
            lambda m, o=op: ops.elementwise(m["a"], m["b"], o),
            {"a": _normal(rng, (n, c, hw, hw)), "b": _normal(rng, (n, c, hw, hw))},
        )
    run(
        "elementwise_broadcast",
        lambda m: ops.mul(ops.mul(m["a"], m["g"]), m["s"]),
        {"a": _normal(rng, (n, c, hw, hw)), "g": _normal(rng, (n, c, 1, 1)), "s": _normal(rng, (n, 1, hw, hw))},
    )
    run(
        "channel_split_concat",
        lambda m: ops.channel_concat(ops.channel_split(m["x"], [1, c - 1])[::-1]),
        {"x": _normal(rng, (n, c, hw, hw))},
    )
    run("channel_shuffle", lambda m: ops.channel_shuffle(m["x"], 2), {"x": _normal(rng, (n, c, hw, hw))})
    run(
        "mse_loss",
        lambda m: ops.mse_loss(m["p"], m["t"]),
        {"p": _normal(rng, (n, c, hw, hw)), "t": _normal(rng, (n, c, hw, hw))},
    )
    run("mean_all", lambda m: ops.mean_all(m["x"]), {"x": _normal(rng, (n, c, hw, hw))})
    return results


def _sub(archive: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k[len(prefix):]: v for k, v in archive.items() if k.startswith(prefix)}


def _learnable(archive: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in archive.items() if not k.endswith((".running_mean", ".running_var"))}


MODULE_NAMES = ("asff", "fatm", "cam", "pam", "lcam", "lpam", "dfm", "fm")


def module_check(
    which: str,
    channels: int = 8,
    size: int = 8,
    seed: int = 0,
    groups: int = 2,
    ratio: int = 4,
    batch: int = 1,
    samples: int | None = 6,
    tol: float = DEFAULT_TOL,
    h: float = DEFAULT_STEP,
) -> GradCheckResult:
    """Check every parameter tensor and input of one composed operator.

    Parameters come from :func:`init_weights`, then biases, modulation scales
    and BN statistics are re-drawn so that no branch sits at a trivial
    operating point (zero biases, identity normalisation).  Running
    statistics are held fixed and are not themselves checked.
    """
    rng = np.random.default_rng(seed)
    cfg = ModuleConfig(channels=channels, height=size, width=size, batch=batch, groups=groups, ratio=ratio)
    kind = "fatm" if which in ("fatm", "lcam", "lpam") else "asff"
    archive = _perturb(init_weights(cfg, kind, seed), rng)
    dims = (batch, channels, size, size)
    stats = {k: v for k, v in archive.items() if k not in _learnable(archive)}

    def with_stats(m):
        return {**stats, **m}

    if which == "asff":
        inputs = {"rgb": _normal(rng, dims), "ir": _normal(rng, dims), **_learnable(archive)}

        def fn(m):
            p = AsffParams.from_mapping(with_stats(m), groups=groups)
            return asff_forward(m["rgb"], m["ir"], p)

    elif which == "fatm":
        inputs = {"x": _normal(rng, dims), **_learnable(archive)}

        def fn(m):
            return fatm_forward(m["x"], FatmParams.from_mapping(with_stats(m)))

    else:
        prefix, forward = _SUBMODULES[which]
        inputs = {"x": _normal(rng, dims), **_learnable(_sub(archive, prefix))}
        sub_stats = _sub(stats, prefix)

        def fn(m):
            return forward(m["x"], {**sub_stats, **m})

    return check_function(which, fn, inputs, rng, samples=samples, tol=tol, h=h)


def _perturb(archive, rng):
    updates = {}
    for name, t in archive.items():
        if name.endswith(".bias") or name.endswith(".beta") or name.endswith(".alpha"):
            updates[name] = Tensor(rng.standard_normal(t.dims) * 0.5)
        elif name.endswith(".gamma"):
            updates[name] = Tensor(rng.uniform(0.5, 1.5, t.dims))
        elif name.endswith(".running_mean"):
            updates[name] = Tensor(rng.standard_normal(t.dims) * 0.1)
        elif name.endswith(".running_var"):
            updates[name] = Tensor(rng.uniform(0.5, 1.5, t.dims))
    return archive.replace(updates)


_SUBMODULES = {
    "cam": ("cam_rgb.", lambda x, m: cam_forward(x, CamParams.from_mapping(m))),
    "pam": ("pam.", lambda x, m: pam_forward(x, PamParams.from_mapping(m))),
    "lcam": ("lcam.", lambda x, m: lcam_forward(x, LcamParams.from_mapping(m))),
    "lpam": ("lpam.", lambda x, m: lpam_forward(x, LpamParams.from_mapping(m))),
    "dfm": ("dfm.", lambda x, m: dfm_forward(x, DfmParams.from_mapping(m))),
    "fm": ("fm.", lambda x, m: fm_forward(x, FmParams.from_mapping(m))),
}

"""Analytic parameter and multiply-accumulate counts.

The layer tables below are written out from the layer formulas, not derived
from the weight manifests, so that comparing them against the tensors
allocated by :func:`modalfuse.weights.init_weights` is a genuine check.
Layers that own parameters are named after their archive prefix
(``dfm.entry``, ``fm.cbs1_bn``, ...).

Counting rules: a convolution costs ``positions * out * (in / groups) * kh *
kw`` MACs; pooling, normalisation, activations and elementwise arithmetic
cost one non-MAC op per output element (per input element for reductions);
split, concat, upsample and shuffle are data movement and cost nothing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .config import ModuleConfig


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    params: int = 0
    macs: int = 0
    other_ops: int = 0
    buffers: int = 0  # non-learnable state (BN running statistics)
    scaling: str = "area"  # how MACs grow with H, W: area | strip | none


@dataclass(frozen=True)
class CostReport:
    module: str
    config: ModuleConfig
    layers: tuple[LayerCost, ...] = field(default_factory=tuple)

    @property
    def params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    @property
    def other_ops(self) -> int:
        return sum(layer.other_ops for layer in self.layers)

    @property
    def buffers(self) -> int:
        return sum(layer.buffers for layer in self.layers)

    @property
    def gflops(self) -> float:
        return 2.0 * self.macs / 1e9

    def layer(self, name: str) -> LayerCost:
        for entry in self.layers:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "module": self.module,
            "config": asdict(self.config),
            "layers": [asdict(layer) for layer in self.layers],
            "totals": {
                "params": self.params,
                "macs": self.macs,
                "other_ops": self.other_ops,
                "buffers": self.buffers,
                "gflops": self.gflops,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        head = f"{'layer':<24} {'kind':<10} {'params':>12} {'macs':>15} {'other_ops':>13}"
        rows = [head, "-" * len(head)]
        for layer in self.layers:
            rows.append(
                f"{layer.name:<24} {layer.kind:<10} {layer.params:>12} {layer.macs:>15} {layer.other_ops:>13}"
            )
        rows.append("-" * len(head))
        rows.append(f"{'total':<24} {'':<10} {self.params:>12} {self.macs:>15} {self.other_ops:>13}")
        rows.append(f"buffers {self.buffers}  gflops {self.gflops:.6f}")
        return "\n".join(rows)


class _Table:
    """Accumulates layers for one module at batch ``n``."""

    def __init__(self, n: int, prefix: str = ""):
        self.n = n
        self.prefix = prefix
        self.rows: list[LayerCost] = []

    def conv(self, name, cin, cout, k, h, w, groups=1, bias=True, scaling="area"):
        params = cout * (cin // groups) * k * k + (cout if bias else 0)
        macs = self.n * h * w * cout * (cin // groups) * k * k
        self.rows.append(LayerCost(self.prefix + name, "conv", params, macs, 0, 0, scaling))

    def bn(self, name, c, h, w):
        self.rows.append(LayerCost(self.prefix + name, "batchnorm", 2 * c, 0, self.n * c * h * w, 2 * c))

    def op(self, name, kind, elements, params=0, scaling="area"):
        self.rows.append(LayerCost(self.prefix + name, kind, params, 0, self.n * elements, 0, scaling))


def _asff_rows(t: _Table, c: int, h: int, w: int, k: int) -> None:
    hw = h * w
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    for m in ("rgb", "ir"):
        t.op(f"cam_{m}.pool", "pool", c * hw)
        t.rows.append(LayerCost(t.prefix + f"cam_{m}", "conv1d", k + 1, t.n * c * k, 0, 0, "none"))
        t.op(f"cam_{m}.sigmoid", "act", c, scaling="none")
        t.op(f"cam_{m}.gate", "mul", c * hw)
        t.op(f"residual_{m}", "add", c * hw)
        t.conv(f"dw_{m}", c, c, 3, h, w, groups=c)
    t.op("stream_sum", "add", c * hw)
    t.op("pam.pool_h", "pool", c * hw)
    t.op("pam.pool_v", "pool", c * hw)
    t.conv("pam.h", c, c, 1, h, 1, scaling="strip")
    t.conv("pam.v", c, c, 1, 1, w, scaling="strip")
    t.op("pam.sigmoid", "act", c * (h + w), scaling="strip")
    t.op("pam.gate", "mul", 2 * c * hw)

    t.op("dfm.l2norm", "norm", c * hw)
    t.conv("dfm.entry", c, 2 * c, 1, h, w)
    t.op("dfm.maxpool", "pool", c * hw)
    t.conv("dfm.global_dw", c, c, 3, h2, w2, groups=c)
    t.op("dfm.variance", "reduce", c * hw)
    t.op("dfm.modulate", "mix", 2 * c * h2 * w2 + c, params=2 * c)
    t.conv("dfm.global_mod", c, c, 1, h2, w2)
    t.op("dfm.gelu_global", "act", c * h2 * w2)
    t.op("dfm.upsample", "resample", 0)
    t.op("dfm.gate", "mul", c * hw)
    t.conv("dfm.local_dw", c, c, 3, h, w, groups=c)
    t.conv("dfm.local_expand", c, 2 * c, 1, h, w)
    t.op("dfm.gelu_local", "act", 2 * c * hw)
    t.conv("dfm.local_reduce", 2 * c, c, 1, h, w)
    t.op("dfm.sum", "add", c * hw)
    t.conv("dfm.exit", c, c, 1, h, w)
    t.op("dfm.residual", "add", c * hw)

    half = c // 2
    t.op("fm.l2norm", "norm", c * hw)
    t.conv("fm.expand", c, 2 * c, 1, h, w)
    t.op("fm.gelu_expand", "act", 2 * c * hw)
    t.conv("fm.cbs1", half, half, 1, h, w, bias=False)
    t.bn("fm.cbs1_bn", half, h, w)
    t.op("fm.silu1", "act", half * hw)
    t.conv("fm.dw", half, half, 3, h, w, groups=half, bias=False)
    t.bn("fm.dw_bn", half, h, w)
    t.conv("fm.cbs2", half, half, 1, h, w, bias=False)
    t.bn("fm.cbs2_bn", half, h, w)
    t.op("fm.silu2", "act", half * hw)
    t.op("fm.gelu_encoded", "act", half * hw)
    t.conv("fm.merge", 2 * c, c, 1, h, w)
    t.op("fm.residual", "add", c * hw)
    t.op("shuffle", "permute", 0)


def _fatm_rows(t: _Table, c: int, h: int, w: int, r: int) -> None:
    hw = h * w
    hidden = c // r
    t.conv("cbh", c, c, 3, h, w, bias=False)
    t.bn("cbh_bn", c, h, w)
    t.op("hardswish", "act", c * hw)
    t.op("lcam.avgpool", "pool", c * hw)
    t.op("lcam.maxpool", "pool", c * hw)
    # the bottleneck runs once per pooled branch
    t.rows.append(LayerCost(t.prefix + "lcam.fc1", "conv", c * hidden + hidden, 2 * t.n * c * hidden, 0, 0, "none"))
    t.op("lcam.relu", "act", 2 * hidden, scaling="none")
    t.rows.append(LayerCost(t.prefix + "lcam.fc2", "conv", hidden * c + c, 2 * t.n * hidden * c, 0, 0, "none"))
    t.op("lcam.sigmoid", "act", 2 * c, scaling="none")
    t.op("lcam.sum", "add", c, scaling="none")
    t.op("lcam.gate", "mul", c * hw)
    t.op("lpam.channel_max", "pool", c * hw)
    t.op("lpam.channel_mean", "pool", c * hw)
    t.conv("lpam", 2, 1, 3, h, w)
    t.op("lpam.sigmoid", "act", hw)
    t.op("lpam.gate", "mul", c * hw)


def _report(config: ModuleConfig, which: str) -> CostReport:
    config.validate(which)
    t = _Table(config.batch)
    if which == "asff":
        _asff_rows(t, config.channels, config.height, config.width, config.cam_kernel)
    else:
        _fatm_rows(t, config.channels, config.height, config.width, config.ratio)
    return CostReport(which, config, tuple(t.rows))


def count_params(config: ModuleConfig, which: str) -> CostReport:
    """Per-layer parameter counts (the report also carries MAC columns)."""
    return _report(config, which)


def count_flops(config: ModuleConfig, which: str) -> CostReport:
    """Per-layer MAC and non-MAC op counts; ``gflops`` is 2 * MACs / 1e9."""
    return _report(config, which)


def compare_fusion_baselines(config: ModuleConfig, n_fusion_units: int) -> tuple[CostReport, CostReport]:
    """One fusion unit versus one per pyramid level.

    Unit ``i`` sits ``i`` levels deeper: channels ``C * 2**i`` and spatial
    extents ``ceil(H / 2**i)``.  Layer names of the multi-unit report carry a
    ``unit{i}.`` prefix.
    """
    if n_fusion_units < 1:
        raise ValueError("need at least one fusion unit")
    single = _report(config, "asff")
    rows: list[LayerCost] = []
    for i in range(n_fusion_units):
        scale = 2**i
        h, w = -(-config.height // scale), -(-config.width // scale)
        level = ModuleConfig(
            channels=config.channels * scale, height=h, width=w, batch=config.batch,
            groups=config.groups, ratio=config.ratio, cam_kernel=config.cam_kernel,
        ).validate("asff")
        t = _Table(config.batch, prefix=f"unit{i}." if n_fusion_units > 1 else "")
        _asff_rows(t, level.channels, h, w, level.cam_kernel)
        rows.extend(t.rows)
    return single, CostReport("asff", config, tuple(rows))

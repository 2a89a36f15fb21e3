"""Reverse-mode differentiation tape and the finite-difference oracle.

Every kernel in :mod:`modalfuse.ops` is a :class:`Primitive`: a pure
``forward`` over numpy arrays plus a ``backward`` that maps the output
cotangent to input cotangents.  When a :class:`Tape` is active, each kernel
call appends a node; nothing is recorded otherwise.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import InternalError, ShapeError
from .tensor import Tensor

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)
_BRANCHES: contextvars.ContextVar["BranchLog | None"] = contextvars.ContextVar("branches", default=None)


class BranchLog:
    """Discrete decisions (argmax indices, sign masks) taken by non-smooth kernels.

    In record mode decisions are appended in call order.  In replay mode the
    recorded decisions are handed back in the same order, pinning the
    function to one smooth piece; any disagreement with the decision the
    kernel would have made naturally sets ``crossed``.
    """

    def __init__(self, replay: list[np.ndarray] | None = None, pin: bool = True):
        self.decisions: list[np.ndarray] = []
        self.replay = replay
        self.pin = pin
        self.crossed = False
        self._pos = 0

    def __enter__(self) -> "BranchLog":
        self._token = _BRANCHES.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _BRANCHES.reset(self._token)

    def take(self, natural: np.ndarray) -> np.ndarray:
        if self.replay is None:
            self.decisions.append(natural.copy())
            return natural
        if self._pos >= len(self.replay):
            raise InternalError("branch replay ran past the recorded decisions")
        pinned = self.replay[self._pos]
        self._pos += 1
        if pinned.shape != natural.shape:
            raise InternalError(f"branch replay shape {pinned.shape} != {natural.shape}")
        if not np.array_equal(pinned, natural):
            self.crossed = True
        return pinned if self.pin else natural


def decide(natural: np.ndarray) -> np.ndarray:
    """Route a kernel's discrete decision through the active :class:`BranchLog`."""
    log = _BRANCHES.get()
    return natural if log is None else log.take(natural)


class Primitive:
    """A differentiable kernel.

    Subclasses implement ``forward(*arrays, **attrs) -> (out, ctx)`` and
    ``backward(ctx, grad_out) -> tuple`` with one entry per array input
    (``None`` for inputs that receive no gradient).
    """

    name = "primitive"

    @staticmethod
    def forward(*arrays, **attrs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError


@dataclass
class Node:
    prim: type[Primitive]
    inputs: tuple[Tensor | None, ...]
    attrs: dict[str, Any]
    output: Tensor
    ctx: Any


def apply(prim: type[Primitive], *inputs: Tensor | None, **attrs) -> Tensor:
    arrays = [None if t is None else t.data for t in inputs]
    out, ctx = prim.forward(*arrays, **attrs)
    result = Tensor._wrap(out)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.nodes.append(Node(prim, tuple(inputs), attrs, result, ctx))
    return result


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; leaves are registered by name with
    :meth:`watch` so that :func:`backward` can report gradients by name.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: dict[str, Tensor] = field(default_factory=dict)
    outputs: list[Tensor] = field(default_factory=list)
    _token: Any = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def watch(self, name: str, t: Tensor) -> Tensor:
        self.leaves[name] = t
        return t

    def watch_all(self, tensors: Mapping[str, Tensor], prefix: str = "") -> None:
        for name, t in tensors.items():
            self.watch(prefix + name, t)

    def mark_output(self, t: Tensor) -> Tensor:
        self.outputs.append(t)
        return t

    @property
    def terminal(self) -> Tensor:
        if self.outputs:
            return self.outputs[-1]
        if not self.nodes:
            raise InternalError("tape is empty")
        return self.nodes[-1].output

    def replay(self, overrides: Mapping[str, Tensor] | None = None) -> list[Tensor]:
        """Re-run every node from the leaves.

        Without overrides the replayed outputs must equal the recorded ones
        bit for bit; with overrides the new terminal values are returned.
        """
        env: dict[int, np.ndarray] = {}
        if overrides:
            for name, t in overrides.items():
                if name not in self.leaves:
                    raise KeyError(name)
                env[id(self.leaves[name])] = t.data
        for node in self.nodes:
            arrays = [None if t is None else env.get(id(t), t.data) for t in node.inputs]
            out, _ = node.prim.forward(*arrays, **node.attrs)
            if not overrides and out.tobytes() != node.output.data.tobytes():
                raise InternalError(f"replay of {node.prim.name} diverged from the recorded output")
            env[id(node.output)] = out
        wanted = self.outputs or [self.terminal]
        return [Tensor._wrap(env.get(id(t), t.data)) for t in wanted]


def backward(tape: Tape, seed_grad: Tensor, output: Tensor | None = None) -> dict[str, Tensor]:
    """Gradient of <seed_grad, output> w.r.t. every watched leaf."""
    out = tape.terminal if output is None else output
    if seed_grad.dims != out.dims:
        raise ShapeError(f"seed gradient {seed_grad.dims} does not match output {out.dims}")
    grads: dict[int, np.ndarray] = {id(out): seed_grad.data.astype(out.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.prim.backward(node.ctx, g)
        if len(in_grads) != len(node.inputs):
            raise InternalError(f"{node.prim.name} returned {len(in_grads)} gradients for {len(node.inputs)} inputs")
        for t, gi in zip(node.inputs, in_grads):
            if t is None or gi is None:
                continue
            if gi.shape != t.dims:
                raise InternalError(f"{node.prim.name} gradient shape {gi.shape} != input {t.dims}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for name, t in tape.leaves.items():
        g = grads.get(id(t))
        result[name] = Tensor._wrap(np.zeros(t.dims, t.dtype) if g is None else g.astype(t.dtype))
    return result


def finite_diff_grad(
    f: Callable[[Tensor], Tensor | float],
    at: Tensor,
    h: float = 1e-3,
    seed: Tensor | None = None,
    indices: Sequence[int] | None = None,
    pin_branches: bool = False,
    return_kinks: bool = False,
):
    """Central-difference gradient of ``<seed, f(x)>`` at ``x = at``.

    ``f`` is evaluated on float64 tensors. ``seed`` defaults to all ones.
    When ``indices`` (flat positions) is given, only those entries are
    estimated and the rest of the result is zero.

    ``pin_branches`` evaluates every stencil point with the discrete
    decisions of non-smooth kernels frozen at their values at ``at``, i.e.
    differentiates the active smooth piece.  ``return_kinks`` additionally
    returns a boolean array marking coordinates whose stencil would have
    changed one of those decisions.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    base = at.data.astype(np.float64).ravel()
    seed_arr = None if seed is None else seed.data.astype(np.float64)

    def reduce(y) -> float:
        if isinstance(y, Tensor):
            y = y.data.astype(np.float64)
            return float(np.sum(y if seed_arr is None else y * seed_arr))
        return float(y)

    def evaluate(flat: np.ndarray) -> tuple[float, bool]:
        with BranchLog(replay=recorded, pin=pin_branches) as log:
            value = reduce(f(Tensor._wrap(flat.reshape(at.dims))))
        return value, log.crossed

    with BranchLog() as base_log:
        f(Tensor._wrap(base.reshape(at.dims)))
    recorded = base_log.decisions

    grad = np.zeros(base.size, dtype=np.float64)
    kinks = np.zeros(base.size, dtype=bool)
    positions = range(base.size) if indices is None else indices
    work = base.copy()
    for i in positions:
        work[i] = base[i] + h
        fp, cp = evaluate(work)
        work[i] = base[i] - h
        fm, cm = evaluate(work)
        work[i] = base[i]
        grad[i] = (fp - fm) / (2.0 * h)
        kinks[i] = cp or cm
    result = Tensor._wrap(grad.reshape(at.dims))
    return (result, kinks.reshape(at.dims)) if return_kinks else result


def relative_error(analytic: Tensor | np.ndarray, numeric: Tensor | np.ndarray, floor: float = 1e-6,
                   mask: np.ndarray | None = None) -> float:
    """Max-norm relative discrepancy ``|a-b|_inf / max(|a|_inf, |b|_inf)``.

    Elements where both magnitudes are below ``floor`` are excluded; an
    optional boolean ``mask`` restricts the comparison further.
    """
    a = np.asarray(analytic.data if isinstance(analytic, Tensor) else analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric.data if isinstance(numeric, Tensor) else numeric, dtype=np.float64).ravel()
    keep = (np.abs(a) >= floor) | (np.abs(b) >= floor)
    if mask is not None:
        keep &= np.asarray(mask).ravel()
    if not keep.any():
        return 0.0
    a, b = a[keep], b[keep]
    scale = max(np.abs(a).max(), np.abs(b).max())
    return float(np.abs(a - b).max() / scale)

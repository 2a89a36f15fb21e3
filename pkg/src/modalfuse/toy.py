"""Synthetic two-modality regression task and a full-batch gradient-descent trainer.

Both modalities are i.i.d. uniform on [0, 1); the target is their
elementwise maximum, so neither modality alone determines it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .asff import asff_forward
from .autograd import Tape, backward
from .config import ModuleConfig
from .errors import ConfigError, TrainingError
from .serialize import WeightArchive
from .tensor import Tensor
from .weights import _is_running_stat, asff_params, init_weights


@dataclass(frozen=True)
class ToyTask:
    seed: int
    samples: int = 64
    channels: int = 8
    height: int = 8
    width: int = 8

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.samples, self.channels, self.height, self.width)

    def generate(self) -> tuple[Tensor, Tensor, Tensor]:
        """Return (rgb, ir, target); a pure function of ``seed``."""
        rng = np.random.default_rng(self.seed)
        rgb = rng.random(self.shape)
        ir = rng.random(self.shape)
        return Tensor(rgb), Tensor(ir), Tensor(np.maximum(rgb, ir))


@dataclass
class TrainResult:
    losses: list[float]
    weights: WeightArchive


def train_toy(
    task: ToyTask,
    config: ModuleConfig,
    epochs: int = 200,
    learning_rate: float = 1e-2,
    seed: int = 0,
) -> TrainResult:
    """Minimise the MSE between the fused output and the task target.

    Each epoch is one full-batch step ``w <- w - lr * grad``; batch norm runs
    in train mode so its running statistics track the data.  ``losses[e]`` is
    the loss evaluated before the update of epoch ``e``.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if config.channels != task.channels:
        raise ConfigError(f"config has {config.channels} channels, task has {task.channels}")
    config.validate("asff")
    rgb, ir, target = task.generate()
    archive = init_weights(config, "asff", seed)
    losses: list[float] = []
    for epoch in range(epochs):
        params = asff_params(archive, config.groups)
        learnable = {k: v for k, v in params.tensors().items() if not _is_running_stat(k)}
        # overflow on a diverging run surfaces below as a non-finite loss
        with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
            tape.watch_all(learnable)
            loss = ops.mse_loss(asff_forward(rgb, ir, params, bn_mode="train"), target)
        value = float(loss.data.ravel()[0])
        if not np.isfinite(value):
            raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch)
        losses.append(value)
        with np.errstate(over="ignore", invalid="ignore"):
            grads = backward(tape, Tensor.ones(loss.dims))
        updates = params.tensors()  # carries the refreshed running statistics
        if learning_rate != 0.0:
            for name, w in learnable.items():
                updates[name] = Tensor._wrap((w.data - np.float32(learning_rate) * grads[name].data).astype(np.float32))
        archive = archive.replace(updates)
    return TrainResult(losses, archive)


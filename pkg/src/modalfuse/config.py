from __future__ import annotations

from dataclasses import dataclass

from .asff import DEFAULT_GROUPS
from .attention import CAM_KERNEL, LCAM_RATIO
from .errors import ConfigError

MODULES = ("asff", "fatm")


@dataclass(frozen=True)
class ModuleConfig:
    """Structural hyperparameters of one fusion unit or transformation block.

    Only the constraints relevant to ``which`` are enforced by
    :meth:`validate`: the shuffle groups and CAM kernel matter for the fusion
    unit, the LCAM ratio for the transformation block.
    """

    channels: int
    height: int = 8
    width: int = 8
    batch: int = 1
    groups: int = DEFAULT_GROUPS
    ratio: int = LCAM_RATIO
    cam_kernel: int = CAM_KERNEL

    def validate(self, which: str) -> "ModuleConfig":
        if which not in MODULES:
            raise ConfigError(f"unknown module {which!r}; expected one of {MODULES}")
        for name in ("channels", "height", "width", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        c = self.channels
        if which == "asff":
            if c % 2:
                raise ConfigError(f"fusion unit needs an even channel count, got {c}")
            if self.groups < 1 or c % self.groups:
                raise ConfigError(f"shuffle groups {self.groups} do not divide {c} channels")
            if self.cam_kernel < 1 or self.cam_kernel % 2 == 0:
                raise ConfigError(f"CAM kernel must be odd, got {self.cam_kernel}")
        else:
            if self.ratio < 1 or c % self.ratio:
                raise ConfigError(f"LCAM ratio {self.ratio} does not divide {c} channels")
        return self

"""Manifests, deterministic initialisation and archive -> parameter binding."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .asff import AsffParams
from .config import ModuleConfig
from .errors import FormatError
from .fatm import FatmParams
from .params import ParamSpec, check_manifest
from .serialize import WeightArchive
from .tensor import Tensor


def manifest(config: ModuleConfig, which: str) -> list[ParamSpec]:
    config.validate(which)
    if which == "asff":
        return AsffParams.manifest(config.channels, config.cam_kernel)
    return FatmParams.manifest(config.channels, config.ratio)


def init_weights(config: ModuleConfig, which: str, seed: int) -> WeightArchive:
    """Allocate every manifest entry in order from a seeded PCG64 stream.

    Conv weights and biases are uniform in +-sqrt(1/fan_in); BN gamma and
    running variance start at 1, BN beta and running mean at 0; the
    modulation scales start at alpha=1, beta=0.
    """
    rng = np.random.default_rng(seed)
    archive = WeightArchive()
    for spec in manifest(config, which):
        if spec.init == "uniform":
            bound = np.sqrt(1.0 / spec.fan_in)
            arr = rng.uniform(-bound, bound, size=spec.dims)
        elif spec.init == "ones":
            arr = np.ones(spec.dims)
        else:
            arr = np.zeros(spec.dims)
        archive.add(spec.name, Tensor(arr.astype(np.float32)))
    return archive


def zero_learnables(archive: Mapping[str, Tensor], prefixes: tuple[str, ...] = ("",)) -> WeightArchive:
    """Zero every learnable entry under ``prefixes``; running statistics are kept."""
    updates = {
        name: Tensor.zeros(t.dims, dtype=t.dtype)
        for name, t in archive.items()
        if name.startswith(prefixes) and not _is_running_stat(name)
    }
    return WeightArchive(archive).replace(updates)


def _is_running_stat(name: str) -> bool:
    return name.endswith((".running_mean", ".running_var"))


def infer_config(archive: Mapping[str, Tensor], which: str, groups: int | None = None) -> ModuleConfig:
    """Recover structural hyperparameters from entry shapes."""
    try:
        return _infer_config(archive, which, groups)
    except KeyError as exc:
        raise FormatError(f"archive lacks {exc.args[0]!r}; is it a {which} archive?") from None


def _infer_config(archive, which, groups):
    if which == "asff":
        c = archive["dw_rgb.weight"].dims[0]
        k = archive["cam_rgb.weight"].dims[3]
        cfg = ModuleConfig(channels=c, cam_kernel=k, groups=groups or ModuleConfig(c).groups)
    else:
        c = archive["cbh.weight"].dims[0]
        cfg = ModuleConfig(channels=c, ratio=c // archive["lcam.fc1.weight"].dims[0])
    return cfg


def asff_params(archive: Mapping[str, Tensor], groups: int) -> AsffParams:
    cfg = infer_config(archive, "asff", groups).validate("asff")
    check_manifest(archive, manifest(cfg, "asff"))
    return AsffParams.from_mapping(archive, groups=groups)


def fatm_params(archive: Mapping[str, Tensor]) -> FatmParams:
    cfg = infer_config(archive, "fatm").validate("fatm")
    check_manifest(archive, manifest(cfg, "fatm"))
    return FatmParams.from_mapping(archive)


def tie_modalities(archive: Mapping[str, Tensor]) -> WeightArchive:
    """Copy every RGB-branch entry over its IR counterpart (symmetric fusion)."""
    updates = {name.replace("_rgb.", "_ir."): t for name, t in archive.items() if "_rgb." in name}
    return WeightArchive(archive).replace(updates)

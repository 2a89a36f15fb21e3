"""Named parameter containers shared by the attention and fusion modules.

Parameter groups are dataclasses whose Tensor fields map to archive entry
names ``<prefix><field>``; nested groups extend the prefix with
``<field>.``.  The same names are used on the tape, in weight archives and
by the cost model's manifest cross-check.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Mapping

from .errors import ConfigError, FormatError
from .tensor import Tensor


@dataclass(frozen=True)
class ParamSpec:
    """One entry of a module manifest."""

    name: str
    dims: tuple[int, int, int, int]
    init: str  # "uniform" | "ones" | "zeros"
    fan_in: int = 0
    learnable: bool = True

    @property
    def numel(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


def conv_entries(prefix: str, weight_dims, bias: bool) -> list[ParamSpec]:
    out, cin_g, kh, kw = weight_dims
    fan_in = cin_g * kh * kw
    specs = [ParamSpec(prefix + "weight", tuple(weight_dims), "uniform", fan_in)]
    if bias:
        specs.append(ParamSpec(prefix + "bias", (1, out, 1, 1), "uniform", fan_in))
    return specs


def bn_entries(prefix: str, channels: int) -> list[ParamSpec]:
    dims = (1, channels, 1, 1)
    return [
        ParamSpec(prefix + "gamma", dims, "ones"),
        ParamSpec(prefix + "beta", dims, "zeros"),
        ParamSpec(prefix + "running_mean", dims, "zeros", learnable=False),
        ParamSpec(prefix + "running_var", dims, "ones", learnable=False),
    ]


class ParamGroup:
    """Mixin giving dataclass parameter groups a flat, ordered name view."""

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                yield prefix + f.name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_tensors(f"{prefix}{f.name}.")

    def tensors(self, prefix: str = "") -> dict[str, Tensor]:
        return dict(self.named_tensors(prefix))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Tensor], prefix: str = "", **extra):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in extra:
                kwargs[f.name] = extra[f.name]
                continue
            sub = _GROUP_TYPES.get(f.type)
            if f.type != "Tensor" and sub is None:
                continue  # plain config field; dataclass default applies
            if sub is not None:
                kwargs[f.name] = sub.from_mapping(mapping, f"{prefix}{f.name}.")
            else:
                key = prefix + f.name
                if key not in mapping:
                    raise FormatError(f"weight archive is missing entry {key!r}")
                kwargs[f.name] = mapping[key]
        return cls(**kwargs)


_GROUP_TYPES: dict[str, type] = {}


def param_group(cls):
    """Register a dataclass as a nested parameter group type."""
    _GROUP_TYPES[cls.__name__] = cls
    return cls


@param_group
@dataclass
class BatchNormParams(ParamGroup):
    """Affine parameters and running statistics of one batch-norm layer.

    Mutable: train-mode forwards replace the running statistics in place.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor

    @staticmethod
    def manifest(prefix: str, channels: int) -> list[ParamSpec]:
        return bn_entries(prefix, channels)


@param_group
@dataclass(frozen=True)
class ConvParams(ParamGroup):
    weight: Tensor
    bias: Tensor

    @staticmethod
    def manifest(prefix: str, weight_dims) -> list[ParamSpec]:
        return conv_entries(prefix, weight_dims, bias=True)


@param_group
@dataclass(frozen=True)
class ConvNoBias(ParamGroup):
    weight: Tensor

    @staticmethod
    def manifest(prefix: str, weight_dims) -> list[ParamSpec]:
        return conv_entries(prefix, weight_dims, bias=False)


def check_manifest(mapping: Mapping[str, Tensor], manifest: list[ParamSpec]) -> None:
    """Raise if names or dims differ from the manifest (order-insensitive)."""
    expected = {s.name: s.dims for s in manifest}
    missing = sorted(set(expected) - set(mapping))
    extra = sorted(set(mapping) - set(expected))
    if missing or extra:
        raise ConfigError(f"archive does not match manifest: missing={missing} unexpected={extra}")
    for name, dims in expected.items():
        if mapping[name].dims != dims:
            raise ConfigError(f"entry {name!r} has dims {mapping[name].dims}, manifest expects {dims}")

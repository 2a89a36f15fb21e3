"""Dense NCHW tensor value type and convolution geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

# float64 exists only for widened-precision gradient checks; files and
# weights are always float32.
_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Immutable 4-D array in (N, C, H, W) order.

    The backing buffer is a read-only, C-contiguous numpy array, so a Tensor
    can be shared between threads and recorded on a tape without copying.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype=np.float32):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        self._data = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Trusted constructor for kernel outputs: no copy when already owned.
        t = cls.__new__(cls)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        t._data = _freeze(np.ascontiguousarray(arr))
        return t

    @classmethod
    def zeros(cls, dims, dtype=np.float32) -> "Tensor":
        return cls._wrap(np.zeros(dims, dtype=dtype))

    @classmethod
    def ones(cls, dims, dtype=np.float32) -> "Tensor":
        return cls._wrap(np.ones(dims, dtype=dtype))

    @classmethod
    def full(cls, dims, value: float, dtype=np.float32) -> "Tensor":
        return cls._wrap(np.full(dims, value, dtype=dtype))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self._data.shape

    shape = dims

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def numel(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the buffer."""
        return self._data.copy()

    def astype(self, dtype) -> "Tensor":
        if np.dtype(dtype) == self.dtype:
            return self
        return Tensor._wrap(self._data.astype(dtype))

    def bit_equal(self, other: "Tensor") -> bool:
        return (
            self.dims == other.dims
            and self.dtype == other.dtype
            and self._data.tobytes() == other._data.tobytes()
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._data).all())

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype.name})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 4:
        raise ShapeError(f"tensors are 4-D (N, C, H, W); got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all extents must be >= 1; got {arr.shape}")
    if arr.dtype not in _ALLOWED_DTYPES:
        raise ShapeError(f"unsupported dtype {arr.dtype}")
    arr.setflags(write=False)
    return arr


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float32
    return Tensor(value, dtype=dtype)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.padding < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}"
            )

    @classmethod
    def pointwise(cls, cin: int, cout: int, bias: bool = True) -> "ConvSpec":
        return cls(cin, cout, 1, 1, has_bias=bias)

    @classmethod
    def depthwise(cls, channels: int, k: int = 3, bias: bool = True) -> "ConvSpec":
        return cls(channels, channels, k, k, padding=k // 2, groups=channels, has_bias=bias)

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    @property
    def fan_in(self) -> int:
        return (self.in_channels // self.groups) * self.kernel_h * self.kernel_w

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv output would be {oh}x{ow} for input {h}x{w}, "
                f"kernel {self.kernel_h}x{self.kernel_w}, padding {self.padding}, stride {self.stride}"
            )
        return oh, ow

    def param_count(self) -> int:
        n = self.out_channels * self.fan_in
        return n + self.out_channels if self.has_bias else n

"""Dense rank-4 tensor container used throughout the framework.

Values always live in a contiguous (batch, channels, height, width) numpy
array. The optional gradient buffer mirrors the value array elementwise.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


class Tensor:
    """A (N, C, H, W) value array with an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray, grad: np.ndarray | None = None):
        data = np.ascontiguousarray(data)
        if data.ndim != 4:
            raise ValueError(f"tensor must be rank 4 (N,C,H,W), got shape {data.shape}")
        if grad is not None and grad.shape != data.shape:
            raise ValueError(f"grad shape {grad.shape} != data shape {data.shape}")
        self.data = data
        self.grad = grad

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        return cls(np.asarray(arr))

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def check_finite(self, name: str = "tensor") -> None:
        """Raise NumericalError if values (or gradient) contain NaN/Inf."""
        if not np.isfinite(self.data).all():
            raise NumericalError(f"non-finite values in {name}")
        if self.grad is not None and not np.isfinite(self.grad).all():
            raise NumericalError(f"non-finite gradient in {name}")

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={'yes' if self.grad is not None else 'no'})"


def as_nchw(x, dtype=None) -> np.ndarray:
    """Coerce a Tensor or array-like to a rank-4 numpy array."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if arr.ndim != 4:
        raise ValueError(f"expected rank-4 (N,C,H,W) input, got shape {arr.shape}")
    return arr

"""Seeded weight initializers."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from transferlab.autodiff.tensor import Tensor
from transferlab.errors import InvalidArgument, InvalidShape


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if not shape or any(n <= 0 for n in shape):
        raise InvalidShape(f"every dimension must be positive, got {shape}")
    return shape


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape: Sequence[int], seed: int, dtype=np.float32,
                requires_grad: bool = True) -> Tensor:
    """Glorot-uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out)).

    1-D shapes (biases) come back as zeros.  Sampling happens in float64 and is
    cast afterwards, so a given (shape, seed) yields the same bits in either
    precision's source stream.
    """
    shape = _check_shape(shape)
    if len(shape) == 1:
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)
    if len(shape) != 2:
        raise InvalidShape(f"xavier_init expects (fan_in, fan_out) or 1-D, got {shape}")
    b = xavier_bound(*shape)
    rng = np.random.default_rng(seed)
    data = rng.uniform(-b, b, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


def uniform_init(shape: Sequence[int], seed: int, half_width: float, dtype=np.float32,
                 requires_grad: bool = True) -> Tensor:
    if not half_width > 0:
        raise InvalidArgument(f"half_width must be positive, got {half_width}")
    shape = _check_shape(shape)
    rng = np.random.default_rng(seed)
    data = rng.uniform(-half_width, half_width, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)

"""Velocity field handles.

A field is anything callable as ``field(x, t, cond, scale)`` that returns a
velocity of the same shape as ``x``. ``x`` may be one latent (d,) or a batch
(n, d). Evaluation must be pure.

The analytic fields here ignore condition and guidance; they exist for
integrator and sampler checks where the exact answer is known by hand.
"""

from typing import Any, Protocol, runtime_checkable

import numpy as np

from src.core.domain_models import Condition, Latent


@runtime_checkable
class VelocityField(Protocol):
    @property
    def dim(self) -> int: ...

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent: ...


class ConstantField:
    """v(x, t) = c everywhere."""

    def __init__(self, value: Any) -> None:
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def dim(self) -> int:
        return int(self.value.size)

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent:
        return np.broadcast_to(self.value, np.shape(x)).copy()


class ZeroField(ConstantField):
    def __init__(self, dim: int) -> None:
        super().__init__(np.zeros(dim))


class LinearField:
    """v(x, t) = M x + b, with Jacobian M."""

    def __init__(self, matrix: Any, offset: Any | None = None) -> None:
        self.matrix = np.asarray(matrix, dtype=np.float64)
        d = self.matrix.shape[0]
        self.offset = np.zeros(d) if offset is None else np.asarray(offset, dtype=np.float64)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent:
        out: Latent = np.asarray(x) @ self.matrix.T + self.offset
        return out


def combine_guidance(v_uncond: Latent, v_cond: Latent, scale: float) -> Latent:
    """Classifier-free guidance v_u + s (v_c - v_u), exact at s = 0 and s = 1."""
    if scale == 0.0:
        return v_uncond
    if scale == 1.0:
        return v_cond
    out: Latent = v_uncond + scale * (v_cond - v_uncond)
    return out

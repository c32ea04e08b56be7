"""Latent-anchor algebra behind the AnchorFlow update.

F_t(x) = x + (1 - t) v(x, t) estimates the noise endpoint a trajectory through
(x, t) would reach. For per-step source and target reconstructions s_t and
g_t, the strong objective sum_t ||s_t - A||^2 + ||g_t - A||^2 is minimised by
the mean midpoint, and splits exactly into the alignment loss plus a
midpoint-spread term. The sampler only uses the alignment loss, whose
gradient is approximated Jacobian-free by (2 - t)(g_t - s_t).
"""

from collections.abc import Callable

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, model_validator

from src.core.domain_models import Condition, FloatArray, Latent
from src.flow.fields import VelocityField

DEFAULT_JACOBIAN_EPS = 1e-5


class AnchorSeries(BaseModel):
    """Source reconstructions s_t and target reconstructions g_t, one row per step."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    s_list: FloatArray
    g_list: FloatArray

    @model_validator(mode="after")
    def validate_series(self) -> "AnchorSeries":
        if self.s_list.ndim != 2 or self.s_list.shape[0] < 1:
            raise ValueError(f"s_list must be a non-empty (steps, d) array: {self.s_list.shape}")
        if self.g_list.shape != self.s_list.shape:
            raise ValueError(f"g_list shape {self.g_list.shape} != s_list {self.s_list.shape}")
        return self

    @property
    def length(self) -> int:
        return int(self.s_list.shape[0])

    @property
    def dim(self) -> int:
        return int(self.s_list.shape[1])

    def shifted(self, offset: Latent) -> "AnchorSeries":
        return AnchorSeries(s_list=self.s_list + offset, g_list=self.g_list + offset)

    def scaled(self, factor: float) -> "AnchorSeries":
        return AnchorSeries(s_list=self.s_list * factor, g_list=self.g_list * factor)


def single_step_inversion(
    field: VelocityField, x: Latent, t: float, cond: Condition, s: float
) -> Latent:
    """F_t(x) = x + (1 - t) v(x, t, cond, s)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return inversion_from_velocity(x, field(x, t, cond, s), t)


def inversion_from_velocity(x: Latent, v: Latent, t: float) -> Latent:
    """F_t given an already evaluated velocity at (x, t)."""
    out: Latent = x + (1.0 - t) * v
    return out


def _sq_norms(diff: NDArray[np.float64]) -> NDArray[np.float64]:
    out: NDArray[np.float64] = np.sum(diff**2, axis=-1)
    return out


def midpoints(series: AnchorSeries) -> NDArray[np.float64]:
    out: NDArray[np.float64] = 0.5 * (series.s_list + series.g_list)
    return out


def strong_objective(series: AnchorSeries, A: Latent) -> float:
    """sum_t ||s_t - A||^2 + ||g_t - A||^2."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (series.dim,):
        raise ValueError(f"anchor has shape {A.shape}, expected ({series.dim},)")
    return float(np.sum(_sq_norms(series.s_list - A)) + np.sum(_sq_norms(series.g_list - A)))


def strong_objective_gradient(series: AnchorSeries, A: Latent) -> Latent:
    out: Latent = 2.0 * np.sum(2.0 * np.asarray(A) - series.s_list - series.g_list, axis=0)
    return out


def optimal_anchor(series: AnchorSeries) -> Latent:
    """Minimiser of the strong objective: the mean of all midpoints."""
    out: Latent = np.mean(midpoints(series), axis=0)
    return out


def alignment_loss(series: AnchorSeries) -> float:
    """1/2 sum_t ||g_t - s_t||^2."""
    return 0.5 * float(np.sum(_sq_norms(series.g_list - series.s_list)))


def decomposed_objective(series: AnchorSeries, A: Latent) -> float:
    """Right-hand side of the parallelogram split of the strong objective at A."""
    spread = np.sum(_sq_norms(np.asarray(A) - midpoints(series)))
    return alignment_loss(series) + 2.0 * float(spread)


def reduced_objective(series: AnchorSeries) -> float:
    """Strong objective at its optimum: alignment loss plus midpoint spread."""
    return decomposed_objective(series, optimal_anchor(series))


def minimize_strong_objective(
    series: AnchorSeries, tol: float = 1e-10, max_iter: int = 10_000
) -> Latent:
    """Plain gradient descent on the strong objective, started from the origin.

    Independent of the closed form; used to cross-check ``optimal_anchor``.
    """
    A = np.zeros(series.dim)
    # Hessian is 4 * steps * I, so this step halves the error every iteration
    lr = 1.0 / (8.0 * series.length)
    for it in range(max_iter):
        grad = strong_objective_gradient(series, A)
        if float(np.linalg.norm(grad)) <= tol * series.length:
            logger.debug(f"strong objective minimised in {it} iterations")
            return A
        A = A - lr * grad
    return A


def finite_difference_gradient(
    func: Callable[[Latent], float], x: Latent, eps: float = 1e-3
) -> Latent:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eps
        grad[j] = (func(x + step) - func(x - step)) / (2.0 * eps)
    return grad


def anchor_gradient(g_inv: Latent, s_inv: Latent, t: float) -> Latent:
    """Jacobian-free alignment gradient (2 - t)(g_inv - s_inv)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    out: Latent = (2.0 - t) * (g_inv - s_inv)
    return out


def gradient_expansion(
    x_fe: Latent, x_src_0: Latent, v_tar: Latent, v_src: Latent, t: float
) -> Latent:
    """(2 - t)[(X^FE - x_src) + (1 - t)(v_tar - v_src)], the anchor gradient expanded."""
    out: Latent = (2.0 - t) * ((x_fe - x_src_0) + (1.0 - t) * (v_tar - v_src))
    return out


def field_jacobian(
    field: VelocityField,
    x: Latent,
    t: float,
    cond: Condition,
    s: float,
    eps: float = DEFAULT_JACOBIAN_EPS,
) -> NDArray[np.float64]:
    """d x d Jacobian of the field at x by central differences; column j is dv/dx_j."""
    d = x.size
    stencil = np.concatenate([x + eps * np.eye(d), x - eps * np.eye(d)])
    v = field(stencil, t, cond, s)
    out: NDArray[np.float64] = ((v[:d] - v[d:]) / (2.0 * eps)).T
    return out


def anchor_gradient_exact(
    field: VelocityField,
    x_fe: Latent,
    x_src_t: Latent,
    x_src_0: Latent,
    t: float,
    s_src: float,
    s_tar: float,
    eps: float = DEFAULT_JACOBIAN_EPS,
    conds: tuple[Condition, Condition] = (Condition.SRC, Condition.TAR),
) -> Latent:
    """Alignment gradient with the field Jacobian kept: [I + (1 - t) J]^T (g - s)."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    src_cond, tar_cond = conds
    x_tar_t = x_fe + x_src_t - x_src_0
    residual = single_step_inversion(field, x_tar_t, t, tar_cond, s_tar) - single_step_inversion(
        field, x_src_t, t, src_cond, s_src
    )
    jac = field_jacobian(field, x_tar_t, t, tar_cond, s_tar, eps)
    out: Latent = residual + (1.0 - t) * (jac.T @ residual)
    return out


def direction_cosine(a: Latent, b: Latent) -> float:
    """Cosine similarity of two directions; NaN when either is zero."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return float("nan")
    return float(np.dot(a, b) / (na * nb))

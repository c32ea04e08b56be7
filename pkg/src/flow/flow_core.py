"""Time discretization, forward noising and Euler integration.

Generation runs backward in time, X_{t_{i-1}} = X_{t_i} - delta_i * v(X_{t_i}, t_i),
from i = T down to 1. Inversion runs the same grid forward.
"""

from collections.abc import Callable

import numpy as np
from loguru import logger

from src.core.domain_models import (
    Condition,
    Latent,
    Schedule,
    ScheduleKind,
    TimeGrid,
    check_dim,
)
from src.core.errors import NumericFailureError
from src.flow.fields import VelocityField

# Called after every Euler step with (grid index, t, state before, velocity, update)
StepCallback = Callable[[int, float, Latent, Latent, Latent], None]


def make_grid_and_schedule(
    T: int, kind: ScheduleKind = ScheduleKind.LINEAR
) -> tuple[TimeGrid, Schedule]:
    """Uniform time grid with T steps and its noise schedule.

    The linear schedule is the identity sigma_{t_i} = t_i, so every step size
    is 1 / T.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    t_values = np.arange(T + 1, dtype=np.float64) / T
    grid = TimeGrid(T=T, t_values=t_values)
    if kind == ScheduleKind.LINEAR:
        schedule = Schedule(kind=kind, sigma_values=t_values)
    else:
        raise ValueError(f"Unknown schedule kind: {kind}")
    return grid, schedule


def noisy_interpolate(x0: Latent, noise: Latent, t: float) -> Latent:
    """Point on the straight path between data ``x0`` (t=0) and ``noise`` (t=1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    # Exact endpoints, no 0 * inf or rounding at the boundaries
    if t == 0.0:
        return np.array(x0, dtype=np.float64, copy=True)
    if t == 1.0:
        return np.array(noise, dtype=np.float64, copy=True)
    return (1.0 - t) * x0 + t * noise


def _checked_velocity(
    field: VelocityField, x: Latent, t: float, cond: Condition, s: float, step: int
) -> Latent:
    v = field(x, t, cond, s)
    if not np.all(np.isfinite(v)):
        raise NumericFailureError(f"non-finite velocity at t={t:.4f}", step_index=step)
    return v


def euler_generate(
    field: VelocityField,
    cond: Condition,
    s: float,
    noise: Latent,
    grid: TimeGrid,
    sched: Schedule,
    on_step: StepCallback | None = None,
) -> Latent:
    """Integrate from noise at t=1 down to data at t=0.

    ``noise`` may be a single latent or an (n, d) batch.
    """
    check_dim(noise, field.dim, "noise")
    x = np.array(noise, dtype=np.float64, copy=True)
    for i in range(grid.T, 0, -1):
        t_i = float(grid.t_values[i])
        v = _checked_velocity(field, x, t_i, cond, s, i)
        update = -sched.delta(i) * v
        if on_step is not None:
            on_step(i, t_i, x, v, update)
        x = x + update
    logger.debug(f"euler_generate finished {grid.T} steps (cond={cond}, s={s})")
    return x


def euler_invert(
    field: VelocityField,
    cond: Condition,
    s: float,
    x0: Latent,
    grid: TimeGrid,
    sched: Schedule,
    on_step: StepCallback | None = None,
) -> Latent:
    """Naive Euler inversion from data at t=0 up to noise at t=1."""
    check_dim(x0, field.dim, "x0")
    x = np.array(x0, dtype=np.float64, copy=True)
    for i in range(1, grid.T + 1):
        t_prev = float(grid.t_values[i - 1])
        v = _checked_velocity(field, x, t_prev, cond, s, i)
        update = sched.delta(i) * v
        if on_step is not None:
            on_step(i, t_prev, x, v, update)
        x = x + update
    logger.debug(f"euler_invert finished {grid.T} steps (cond={cond}, s={s})")
    return x

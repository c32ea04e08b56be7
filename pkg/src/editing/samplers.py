"""Editing samplers: direct, inversion, FlowEdit and AnchorFlow.

The inversion-free samplers keep an editing state X^FE, starting at x_src.
At every active grid index i (n_max down to n_min) they noise x_src to
X^src_t, shift it by the current edit to get X^tar_t, and step X^FE against
the averaged direction. FlowEdit steps along the velocity difference;
AnchorFlow steps along the anchor-alignment gradient. Outside the active
window X^FE does not move.
"""

import time
from collections.abc import Callable

import numpy as np
from loguru import logger

from src.config.models import EditConfig
from src.core.domain_models import (
    Condition,
    EditMethod,
    EditResult,
    EditTask,
    Latent,
    Schedule,
    TimeGrid,
    TrajectoryStep,
    as_latent,
    check_dim,
)
from src.core.errors import NumericFailureError
from src.editing.noise import GENERATION_STEP, NoiseSource, derive_noise
from src.flow.anchor_math import anchor_gradient, inversion_from_velocity
from src.flow.fields import VelocityField
from src.flow.flow_core import (
    euler_generate,
    euler_invert,
    make_grid_and_schedule,
    noisy_interpolate,
)

GradientFn = Callable[[Latent, Latent, float], Latent]
ScheduleFactory = Callable[[int], tuple[TimeGrid, Schedule]]

# Inversion runs at unit guidance under the source condition
INVERSION_SCALE = 1.0


class _TrajectoryRecorder:
    """Collects Euler steps of the generation baselines."""

    def __init__(self, sched: Schedule) -> None:
        self.sched = sched
        self.steps: list[TrajectoryStep] = []

    def __call__(self, i: int, t: float, x: Latent, v: Latent, update: Latent) -> None:
        self.steps.append(
            TrajectoryStep(
                step_idx=i, t=t, delta=self.sched.delta(i), x_fe=x, direction=v, update=update
            )
        )


class EditEngine:
    """Runs editing samplers for one field and task.

    The noise source, anchor gradient and schedule are injectable so the
    verification suite can swap in faulty versions.
    """

    def __init__(
        self,
        field: VelocityField,
        task: EditTask,
        noise: NoiseSource = derive_noise,
        gradient: GradientFn = anchor_gradient,
        schedule: ScheduleFactory = make_grid_and_schedule,
    ) -> None:
        if field.dim != task.dim:
            raise ValueError(f"field dimension {field.dim} != task dimension {task.dim}")
        self.field = field
        self.task = task
        self.noise = noise
        self.gradient = gradient
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.task.dim

    def _velocity(self, x: Latent, t: float, cond: Condition, s: float, step: int) -> Latent:
        v = self.field(x, t, cond, s)
        if not np.all(np.isfinite(v)):
            raise NumericFailureError(f"non-finite {cond} velocity at t={t:.4f}", step_index=step)
        return v

    # --- Generation baselines ---

    def direct(
        self, cfg: EditConfig, sample_idx: int = 0, noise_override: Latent | None = None
    ) -> EditResult:
        """Generate under the target condition from fresh noise, ignoring the source."""
        start = time.perf_counter()
        grid, sched = self.schedule(cfg.T)
        if noise_override is not None:
            noise = as_latent(noise_override)
            check_dim(noise, self.dim, "noise")
        else:
            noise = self.noise(cfg.seed, sample_idx, GENERATION_STEP, 0, self.dim)
        recorder = _TrajectoryRecorder(sched)
        edited = euler_generate(self.field, Condition.TAR, cfg.s_tar, noise, grid, sched, recorder)
        return EditResult(
            method=EditMethod.DIRECT,
            edited=edited,
            trajectory=recorder.steps,
            wall_time_s=time.perf_counter() - start,
        )

    def inversion(self, cfg: EditConfig, x_src: Latent) -> EditResult:
        """Invert x_src to noise under the source condition, then regenerate under the target."""
        start = time.perf_counter()
        x_src = as_latent(x_src)
        check_dim(x_src, self.dim, "x_src")
        grid, sched = self.schedule(cfg.T)
        recorder = _TrajectoryRecorder(sched)
        inverted = euler_invert(
            self.field, Condition.SRC, INVERSION_SCALE, x_src, grid, sched, recorder
        )
        edited = euler_generate(
            self.field, Condition.TAR, cfg.s_tar, inverted, grid, sched, recorder
        )
        return EditResult(
            method=EditMethod.INVERSION,
            edited=edited,
            x_src=x_src,
            trajectory=recorder.steps,
            wall_time_s=time.perf_counter() - start,
        )

    # --- Inversion-free samplers ---

    def flowedit(self, cfg: EditConfig, x_src: Latent, sample_idx: int = 0) -> EditResult:
        return self._inversion_free(cfg, x_src, sample_idx, EditMethod.FLOWEDIT, cfg.fixed_anchor)

    def fixed_anchor(self, cfg: EditConfig, x_src: Latent, sample_idx: int = 0) -> EditResult:
        """FlowEdit with the noise of the first active step reused at every step."""
        return self._inversion_free(cfg, x_src, sample_idx, EditMethod.FIXED_ANCHOR, True)

    def anchorflow(self, cfg: EditConfig, x_src: Latent, sample_idx: int = 0) -> EditResult:
        return self._inversion_free(
            cfg, x_src, sample_idx, EditMethod.ANCHORFLOW, cfg.fixed_anchor
        )

    def _inversion_free(
        self,
        cfg: EditConfig,
        x_src: Latent,
        sample_idx: int,
        method: EditMethod,
        fixed_noise: bool,
    ) -> EditResult:
        start = time.perf_counter()
        x_src = as_latent(x_src)
        check_dim(x_src, self.dim, "x_src")
        grid, sched = self.schedule(cfg.T)
        anchored = method == EditMethod.ANCHORFLOW

        anchor_noise: list[Latent] = []
        if fixed_noise:
            anchor_noise = [
                self.noise(cfg.seed, sample_idx, cfg.n_max, rep, self.dim)
                for rep in range(cfg.n_avg)
            ]

        x_fe = np.array(x_src, copy=True)
        steps: list[TrajectoryStep] = []
        for i in cfg.active_steps:
            t = float(grid.t_values[i])
            directions = []
            first_rep: tuple[Latent, Latent, Latent, Latent] | None = None
            for rep in range(cfg.n_avg):
                if fixed_noise:
                    noise = anchor_noise[rep]
                else:
                    noise = self.noise(cfg.seed, sample_idx, i, rep, self.dim)
                x_src_t = noisy_interpolate(x_src, noise, t)
                # Shift by the edit so far; exactly x_src_t while X^FE = x_src
                x_tar_t = x_src_t + (x_fe - x_src)
                v_tar = self._velocity(x_tar_t, t, Condition.TAR, cfg.s_tar, i)
                v_src = self._velocity(x_src_t, t, Condition.SRC, cfg.s_src, i)
                if anchored:
                    direction = self.gradient(
                        inversion_from_velocity(x_tar_t, v_tar, t),
                        inversion_from_velocity(x_src_t, v_src, t),
                        t,
                    )
                    if cfg.squared_factor:
                        direction = (2.0 - t) * direction
                else:
                    direction = v_tar - v_src
                directions.append(direction)
                if first_rep is None:
                    first_rep = (x_src_t, x_tar_t, v_src, v_tar)

            mean_direction = np.mean(np.stack(directions), axis=0)
            update = -sched.delta(i) * mean_direction
            assert first_rep is not None
            x_src_t0, x_tar_t0, v_src0, v_tar0 = first_rep
            steps.append(
                TrajectoryStep(
                    step_idx=i,
                    t=t,
                    delta=sched.delta(i),
                    x_fe=x_fe,
                    direction=mean_direction,
                    update=update,
                    x_src_t=x_src_t0,
                    x_tar_t=x_tar_t0,
                    v_src=v_src0,
                    v_tar=v_tar0,
                )
            )
            x_fe = x_fe + update

        logger.debug(
            f"{method} sample {sample_idx}: {len(steps)} active steps, "
            f"|edit|={float(np.linalg.norm(x_fe - x_src)):.4f}"
        )
        return EditResult(
            method=method,
            edited=x_fe,
            x_src=x_src,
            trajectory=steps,
            wall_time_s=time.perf_counter() - start,
        )

    def run(self, cfg: EditConfig, x_src: Latent, sample_idx: int = 0) -> EditResult:
        """Dispatch on ``cfg.method``."""
        if cfg.method == EditMethod.DIRECT:
            return self.direct(cfg, sample_idx)
        if cfg.method == EditMethod.INVERSION:
            return self.inversion(cfg, x_src)
        if cfg.method == EditMethod.FLOWEDIT:
            return self.flowedit(cfg, x_src, sample_idx)
        if cfg.method == EditMethod.FIXED_ANCHOR:
            return self.fixed_anchor(cfg, x_src, sample_idx)
        return self.anchorflow(cfg, x_src, sample_idx)


# --- Functional entry points ---


def direct_edit(
    field: VelocityField,
    task: EditTask,
    cfg: EditConfig,
    noise_override: Latent | None = None,
    sample_idx: int = 0,
) -> EditResult:
    return EditEngine(field, task).direct(cfg, sample_idx, noise_override)


def inversion_edit(
    field: VelocityField, task: EditTask, cfg: EditConfig, x_src: Latent
) -> EditResult:
    return EditEngine(field, task).inversion(cfg, x_src)


def flowedit_sample(
    field: VelocityField, task: EditTask, cfg: EditConfig, x_src: Latent, sample_idx: int = 0
) -> EditResult:
    return EditEngine(field, task).flowedit(cfg, x_src, sample_idx)


def anchorflow_sample(
    field: VelocityField, task: EditTask, cfg: EditConfig, x_src: Latent, sample_idx: int = 0
) -> EditResult:
    return EditEngine(field, task).anchorflow(cfg, x_src, sample_idx)


def run_edit(
    field: VelocityField, task: EditTask, cfg: EditConfig, x_src: Latent, sample_idx: int = 0
) -> EditResult:
    return EditEngine(field, task).run(cfg, x_src, sample_idx)

"""Verification suite.

Runs the exact identities and determinism contracts the samplers rely on and
reports pass/fail per check. Three seeded faults can be injected to confirm
the suite notices a broken build:

- ``anchor-sign``: the anchor gradient with its sign flipped
- ``sigma-squared``: a sigma = t^2 schedule in place of sigma = t
- ``shared-rng``: all noise drawn from one stateful generator

The ``claims`` group holds directional comparisons between methods whose
outcome depends on the task and sample size; it runs only on request. On the
paired two-mode task with the exact field, AnchorFlow stops between the modes,
so the under-editing, fixed-anchor and sweep-identity comparisons do not hold
and a claims run fails on them.
"""

import time
from collections.abc import Callable
from enum import StrEnum
from pathlib import Path

import numpy as np
import polars as pl
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from src.analysis.metrics import MetricsEngine, energy_distance
from src.config.models import EditConfig
from src.config.settings import identity_two_mode, paired_two_mode
from src.core.domain_models import (
    Condition,
    EditMethod,
    EditTask,
    Latent,
    Schedule,
    TimeGrid,
)
from src.core.errors import OracleDegenerateError, VerificationError
from src.core.rng import RngStream
from src.data_mgmt.registry import RunRegistry
from src.editing.noise import NoiseSource, derive_noise
from src.editing.samplers import EditEngine, GradientFn, ScheduleFactory
from src.flow.anchor_math import (
    AnchorSeries,
    alignment_loss,
    anchor_gradient,
    anchor_gradient_exact,
    decomposed_objective,
    direction_cosine,
    gradient_expansion,
    minimize_strong_objective,
    optimal_anchor,
    reduced_objective,
    strong_objective,
)
from src.flow.fields import ConstantField, LinearField, VelocityField
from src.flow.flow_core import euler_generate, make_grid_and_schedule, noisy_interpolate
from src.flow.gmm_oracle import (
    GmmOracleField,
    cfg_velocity,
    marginal_velocity,
    mc_velocity_oracle,
    responsibilities,
    sample_mixture,
    sample_mixture_batch,
)
from src.flow.learned_field import init_mlp, numeric_grad_check, sample_training_batch

VERIFY_SEED = 20240917
IDENTITY_TOL = 1e-12
ANCHOR_TOL = 1e-9
MINIMIZER_TOL = 1e-8
BACKPROP_TOL = 1e-4
ORACLE_SAMPLES = 100_000
ORACLE_SE_BOUND = 3.0
ORACLE_SE_HARD_BOUND = 4.5
ORACLE_MIN_WITHIN = 0.95
GENERATION_SAMPLES = 20_000
GENERATION_STEPS = 50
GENERATION_MEAN_TOL = 0.1
# Reference-run energy distance 0.00129 plus 20% slack
GENERATION_ENERGY_BOUND = 1.2 * 0.00129

SWEEP_POINTS = ((35, 5.0), (37, 6.0), (41, 7.5))
N_AVG_LEVELS = (1, 2, 4, 8)

CheckOutcome = tuple[bool, str]

COSINE_SCHEMA = {
    "sample_idx": pl.Int64,
    "step_idx": pl.Int64,
    "t": pl.Float64,
    "cosine": pl.Float64,
}


class Fault(StrEnum):
    ANCHOR_SIGN = "anchor-sign"
    SIGMA_SQUARED = "sigma-squared"
    SHARED_RNG = "shared-rng"


class CheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    detail: str
    seconds: float


class ClaimResult(BaseModel):
    """Outcome of one directional comparison and the averages behind it."""

    model_config = ConfigDict(frozen=True)

    holds: bool
    values: dict[str, float]
    detail: str


def _as_check(claim: Callable[[], ClaimResult]) -> Callable[[], CheckOutcome]:
    def check() -> CheckOutcome:
        result = claim()
        return result.holds, result.detail

    return check


class VerifyReport(BaseModel):
    """Ordered check results of one verify run."""

    model_config = ConfigDict(frozen=True)

    results: list[CheckResult]
    fault: Fault | None = None
    claims: bool = False

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def first_failure(self) -> CheckResult | None:
        return next((r for r in self.results if not r.passed), None)

    def render(self) -> str:
        lines = [
            "anchorflow-bench verify",
            f"fault: {self.fault or 'none'}",
            f"claims: {'on' if self.claims else 'off'}",
            "",
        ]
        width = max((len(r.name) for r in self.results), default=0)
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{status}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
        n_ok = sum(r.passed for r in self.results)
        failure = self.first_failure
        verdict = "PASS" if failure is None else f"FAIL (first failure: {failure.name})"
        lines += ["", f"result: {verdict} ({n_ok}/{len(self.results)} checks passed)"]
        return "\n".join(lines) + "\n"

    def raise_for_failure(self) -> None:
        failure = self.first_failure
        if failure is not None:
            raise VerificationError(failure.name, failure.detail)


# --- Faults ---


class SharedGeneratorNoise:
    """Faulty noise source: ignores the key and advances one shared generator."""

    def __init__(self, seed: int) -> None:
        self.generator = np.random.default_rng(seed)

    def __call__(self, seed: int, sample_idx: int, step_idx: int, rep_idx: int, d: int) -> Latent:
        return self.generator.standard_normal(d)


def _flipped_anchor_gradient(g_inv: Latent, s_inv: Latent, t: float) -> Latent:
    out: Latent = -anchor_gradient(g_inv, s_inv, t)
    return out


def _squared_schedule(T: int) -> tuple[TimeGrid, Schedule]:
    grid, _ = make_grid_and_schedule(T)
    return grid, Schedule(sigma_values=grid.t_values**2)


def _max_abs(a: Latent) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


# --- Engine ---


class VerifyEngine:
    """Runs the check suite against one (possibly faulty) sampler configuration."""

    def __init__(self, fault: Fault | None = None, seed: int = VERIFY_SEED) -> None:
        self.fault = fault
        self.seed = seed
        self.noise: NoiseSource = derive_noise
        self.gradient: GradientFn = anchor_gradient
        self.schedule: ScheduleFactory = make_grid_and_schedule
        if fault == Fault.ANCHOR_SIGN:
            self.gradient = _flipped_anchor_gradient
        elif fault == Fault.SIGMA_SQUARED:
            self.schedule = _squared_schedule
        elif fault == Fault.SHARED_RNG:
            self.noise = SharedGeneratorNoise(seed)
        self.task = paired_two_mode()
        self.field = GmmOracleField(self.task)
        if fault is not None:
            logger.warning(f"Verifying with injected fault '{fault}'")

    def stream(self, *path: int) -> RngStream:
        return RngStream(seed=self.seed, path=path)

    def engine(self, field: VelocityField, task: EditTask) -> EditEngine:
        return EditEngine(
            field, task, noise=self.noise, gradient=self.gradient, schedule=self.schedule
        )

    def checks(self) -> list[tuple[str, Callable[[], CheckOutcome]]]:
        return [
            ("schedule", self.check_schedule),
            ("constant-field transport", self.check_constant_transport),
            ("euler convergence", self.check_convergence),
            ("responsibilities", self.check_responsibilities),
            ("guidance affine", self.check_guidance_affine),
            ("anchor identities", self.check_anchor_identities),
            ("anchor minimizer", self.check_minimizer),
            ("relaxation lower bound", self.check_lower_bound),
            ("gradient expansion identity", self.check_gradient_expansion),
            ("first active step", self.check_first_active_step),
            ("identity-edit invariance", self.check_identity_invariance),
            ("determinism", self.check_determinism),
            ("oracle equivalence", self.check_oracle_equivalence),
            ("generation fidelity", self.check_generation_fidelity),
            ("backprop", self.check_backprop),
        ]

    def claims(self) -> list[tuple[str, Callable[[], ClaimResult]]]:
        return [
            ("claim: inversion beats direct on identity", self.claim_inversion_vs_direct),
            ("claim: anchorflow edits further than flowedit", self.claim_under_editing),
            ("claim: fixed anchor over-edits", self.claim_fixed_anchor),
            ("claim: n_avg stabilizes edits", self.claim_n_avg),
            ("claim: sweep trades fidelity for strength", self.claim_sweep_trend),
        ]

    def claim_checks(self) -> list[tuple[str, Callable[[], CheckOutcome]]]:
        return [(name, _as_check(claim)) for name, claim in self.claims()]

    # --- Integrator ---

    def check_schedule(self) -> CheckOutcome:
        for T in (1, 7, 50):
            grid, sched = self.schedule(T)
            if not np.array_equal(sched.sigma_values, grid.t_values):
                return False, f"T={T}: sigma differs from t"
            err = _max_abs(sched.deltas - 1.0 / T)
            if err > IDENTITY_TOL:
                return False, f"T={T}: step sizes deviate from 1/T by {err:.2e}"
        return True, "sigma = t, delta = 1/T"

    def check_constant_transport(self) -> CheckOutcome:
        c = np.array([0.7, -1.3, 2.0])
        field = ConstantField(c)
        noise = self.stream(1).normals(3)
        for T in (1, 10, 50):
            grid, sched = self.schedule(T)
            x0 = euler_generate(field, Condition.TAR, 1.0, noise, grid, sched)
            err = _max_abs(x0 - (noise - c))
            if err > IDENTITY_TOL:
                return False, f"T={T}: endpoint off by {err:.2e}"
        return True, "x_0 = noise - c"

    def check_convergence(self) -> CheckOutcome:
        """Euler endpoint error shrinks at least twofold from T to 4T to 16T."""
        field = LinearField(0.7 * np.eye(2))
        noise = np.array([1.0, -0.5])
        ends = {}
        for T in (10, 40, 160):
            grid, sched = self.schedule(T)
            ends[T] = euler_generate(field, Condition.TAR, 1.0, noise, grid, sched)
        coarse = float(np.linalg.norm(ends[10] - ends[40]))
        fine = float(np.linalg.norm(ends[40] - ends[160]))
        exact = noise * np.exp(-0.7)
        if fine > 0.5 * coarse:
            return False, f"|X_4T - X_16T|={fine:.3e} > half of |X_T - X_4T|={coarse:.3e}"
        if np.linalg.norm(ends[160] - exact) >= np.linalg.norm(ends[10] - exact):
            return False, "refinement did not approach the exact solution"
        return True, f"ratio {fine / coarse:.3f}"

    # --- Mixture fields ---

    def check_responsibilities(self) -> CheckOutcome:
        gmm = self.task.unconditional
        u = self.stream(2).uniforms(50)
        x = self.stream(3).batch_normals(50, gmm.dim) * 4.0
        for i in range(50):
            gamma = responsibilities(gmm, x[i], float(u[i]))
            if abs(float(gamma.sum()) - 1.0) > IDENTITY_TOL:
                return False, f"point {i}: sum {gamma.sum():.17g}"
        if not np.array_equal(responsibilities(gmm, x[0], 1.0), gmm.weights):
            return False, "t=1 does not return the prior weights"
        return True, "sum to 1, prior at t=1"

    def check_guidance_affine(self) -> CheckOutcome:
        u = self.stream(4).uniforms(20)
        x = self.stream(5).batch_normals(20, self.task.dim) * 3.0
        for i in range(20):
            t = 0.05 + 0.9 * float(u[i])
            v0 = cfg_velocity(self.task, x[i], t, Condition.TAR, 0.0)
            v1 = cfg_velocity(self.task, x[i], t, Condition.TAR, 1.0)
            if not np.array_equal(v0, marginal_velocity(self.task.unconditional, x[i], t)):
                return False, f"point {i}: s=0 is not the unconditional velocity"
            if not np.array_equal(v1, marginal_velocity(self.task.target, x[i], t)):
                return False, f"point {i}: s=1 is not the conditional velocity"
            s = 7.5
            vs = cfg_velocity(self.task, x[i], t, Condition.TAR, s)
            scale = max(1.0, _max_abs(v0), s * _max_abs(v1 - v0))
            err = _max_abs(vs - (v0 + s * (v1 - v0)))
            if err > IDENTITY_TOL * scale:
                return False, f"point {i}: affine error {err:.2e}"
        return True, "exact at s=0 and s=1, affine in s"

    # --- Anchor algebra ---

    def _random_series(self, case: int) -> AnchorSeries:
        stream = self.stream(6, case)
        length = 1 + min(int(stream.child(0).uniforms(1)[0] * 64), 63)
        d = (1, 2, 8)[case % 3]
        return AnchorSeries(
            s_list=3.0 * stream.child(1).batch_normals(length, d),
            g_list=3.0 * stream.child(2).batch_normals(length, d),
        )

    def check_anchor_identities(self) -> CheckOutcome:
        for case in range(100):
            series = self._random_series(case)
            a_star = optimal_anchor(series)
            at_opt = strong_objective(series, a_star)
            reduced = reduced_objective(series)
            if abs(at_opt - reduced) > ANCHOR_TOL * max(1.0, abs(reduced)):
                return False, f"case {case}: objective at A* {at_opt:.17g} != {reduced:.17g}"
            point = self.stream(7, case).normals(series.dim) * 2.0
            strong = strong_objective(series, point)
            split = decomposed_objective(series, point)
            if abs(strong - split) > ANCHOR_TOL * max(1.0, abs(strong)):
                return False, f"case {case}: parallelogram split off by {abs(strong - split):.2e}"
        return True, "100 random series"

    def check_minimizer(self) -> CheckOutcome:
        for case in range(100):
            series = self._random_series(case)
            err = _max_abs(minimize_strong_objective(series) - optimal_anchor(series))
            if err > MINIMIZER_TOL:
                return False, f"case {case}: numeric minimizer off by {err:.2e}"
        return True, "gradient descent matches closed form"

    def check_lower_bound(self) -> CheckOutcome:
        for case in range(100):
            series = self._random_series(case)
            loss, reduced = alignment_loss(series), reduced_objective(series)
            tol = ANCHOR_TOL * max(1.0, reduced)
            if loss > reduced + tol:
                return False, f"case {case}: alignment loss above reduced objective"
            coincide = series.length == 1
            if not coincide and reduced - loss <= tol:
                return False, f"case {case}: bound tight although midpoints differ"
            # Reflect through a common center so every midpoint coincides
            center = self.stream(8, case).normals(series.dim)
            tight = AnchorSeries(s_list=series.s_list, g_list=2.0 * center - series.s_list)
            gap = reduced_objective(tight) - alignment_loss(tight)
            if abs(gap) > ANCHOR_TOL * max(1.0, alignment_loss(tight)):
                return False, f"case {case}: bound not tight for coinciding midpoints"
        return True, "strict unless midpoints coincide"

    # --- Samplers ---

    def _source_point(self, *path: int) -> Latent:
        return sample_mixture(self.task.source, self.stream(*path))

    def check_gradient_expansion(self) -> CheckOutcome:
        engine = self.engine(self.field, self.task)
        worst = 0.0
        for run in range(50):
            cfg = EditConfig(seed=self.seed + run)
            x_src = self._source_point(9, run)
            result = engine.anchorflow(cfg, x_src, sample_idx=run)
            for step in result.trajectory:
                assert step.v_tar is not None and step.v_src is not None
                assert step.x_tar_t is not None and step.x_src_t is not None
                expected = gradient_expansion(step.x_fe, x_src, step.v_tar, step.v_src, step.t)
                scale = max(
                    1.0,
                    _max_abs(step.x_tar_t),
                    _max_abs(step.x_src_t),
                    (1.0 - step.t) * _max_abs(step.v_tar),
                    (1.0 - step.t) * _max_abs(step.v_src),
                )
                err = _max_abs(step.direction - expected) / scale
                worst = max(worst, err)
                if err > IDENTITY_TOL:
                    return False, f"run {run}, step {step.step_idx}: scaled error {err:.2e}"
        return True, f"50 runs, worst scaled error {worst:.1e}"

    def check_first_active_step(self) -> CheckOutcome:
        engine = self.engine(self.field, self.task)
        cfg = EditConfig(seed=self.seed)
        for sample in range(10):
            x_src = self._source_point(10, sample)
            anchored = engine.anchorflow(cfg, x_src, sample).trajectory[0]
            if not np.array_equal(anchored.x_tar_t, anchored.x_src_t):
                return False, f"sample {sample}: target state shifted before any edit"
            assert anchored.v_tar is not None and anchored.v_src is not None
            t = anchored.t
            expected = (2.0 - t) * (1.0 - t) * (anchored.v_tar - anchored.v_src)
            scale = max(1.0, _max_abs(anchored.x_src_t), _max_abs(expected))
            err = _max_abs(anchored.direction - expected)
            if err > IDENTITY_TOL * scale:
                return False, f"sample {sample}: first anchor step off by {err:.2e}"
        return True, "first step is the scaled velocity difference"

    def check_identity_invariance(self) -> CheckOutcome:
        task = identity_two_mode()
        engine = self.engine(GmmOracleField(task), task)
        sources = sample_mixture_batch(task.source, self.stream(11), 100)
        for n_avg in (1, 4):
            for method in (EditMethod.FLOWEDIT, EditMethod.ANCHORFLOW):
                cfg = EditConfig(seed=self.seed + n_avg, n_avg=n_avg, method=method)
                for i, x_src in enumerate(sources):
                    err = _max_abs(engine.run(cfg, x_src, i).edited - x_src)
                    if err > IDENTITY_TOL:
                        return False, f"{method} n_avg={n_avg} sample {i}: moved by {err:.2e}"
        return True, "100 sources, n_avg 1 and 4"

    def check_determinism(self) -> CheckOutcome:
        cfg = EditConfig(seed=self.seed, n_avg=2)
        x_src = self._source_point(12)
        engine = self.engine(self.field, self.task)
        first = engine.anchorflow(cfg, x_src, 3)
        if not first.same_output(engine.anchorflow(cfg, x_src, 3)):
            return False, "repeated run differs"
        other = self.engine(self.field, self.task)
        other.anchorflow(cfg, x_src, 4)
        if not first.same_output(other.anchorflow(cfg, x_src, 3)):
            return False, "result depends on previously run samples"
        single = engine.anchorflow(cfg.model_copy(update={"n_avg": 1}), x_src, 3)
        wide = engine.anchorflow(cfg.model_copy(update={"n_avg": 4}), x_src, 3)
        if not np.array_equal(single.trajectory[0].x_src_t, wide.trajectory[0].x_src_t):
            return False, "first repetition noise depends on n_avg"
        return True, "bit-identical reruns, n_avg prefix-consistent"

    # --- Oracles ---

    def check_oracle_equivalence(self) -> CheckOutcome:
        gmm = self.task.unconditional
        z_scores = []
        for idx in range(20):
            stream = self.stream(13, idx)
            t = 0.1 + 0.8 * float(stream.child(0).uniforms(1)[0])
            x0 = sample_mixture(gmm, stream.child(1))
            x = noisy_interpolate(x0, stream.child(2).normals(gmm.dim), t)
            try:
                estimate, std_err = mc_velocity_oracle(
                    gmm, x, t, ORACLE_SAMPLES, stream.child(3)
                )
            except OracleDegenerateError as e:
                return False, f"point {idx}: {e}"
            exact = marginal_velocity(gmm, x, t)
            z_scores.extend(np.abs(exact - estimate) / np.maximum(std_err, 1e-300))
        z = np.array(z_scores)
        within = float(np.mean(z <= ORACLE_SE_BOUND))
        detail = f"{within:.0%} within {ORACLE_SE_BOUND} SE, max {z.max():.2f} SE"
        ok = within >= ORACLE_MIN_WITHIN and float(z.max()) <= ORACLE_SE_HARD_BOUND
        return ok, detail

    def check_generation_fidelity(self) -> CheckOutcome:
        target = self.task.target
        grid, sched = self.schedule(GENERATION_STEPS)
        noise = self.stream(18).batch_normals(GENERATION_SAMPLES, target.dim)
        samples = euler_generate(self.field, Condition.TAR, 1.0, noise, grid, sched)
        gaps = np.linalg.norm(samples[:, None, :] - target.means[None, :, :], axis=2)
        nearest = np.argmin(gaps, axis=1)
        worst_mean = 0.0
        for k in range(target.n_components):
            members = samples[nearest == k]
            if len(members) == 0:
                return False, f"no samples near component {k}"
            worst_mean = max(worst_mean, _max_abs(members.mean(axis=0) - target.means[k]))
        reference = sample_mixture_batch(target, self.stream(19), GENERATION_SAMPLES)
        energy = energy_distance(samples, reference)
        detail = f"worst component mean error {worst_mean:.4f}, energy distance {energy:.5f}"
        ok = worst_mean < GENERATION_MEAN_TOL and energy < GENERATION_ENERGY_BOUND
        return ok, detail

    def check_backprop)(self) -> CheckOutcome:
        worst = 0.0
        for seed in range(3):
            mlp = init_mlp(self.task.dim, self.seed + seed, hidden_width=16)
            batch = sample_training_batch(self.task, 64, self.stream(14, seed))
            worst = max(worst, numeric_grad_check(mlp, batch, seed=seed))
        return worst < BACKPROP_TOL, f"max relative error {worst:.2e}"

    # --- Claims ---

    def _method_scores(
        self, cfg: EditConfig, sources: NDArray[np.float64], metrics: MetricsEngine
    ) -> dict[str, float]:
        engine = self.engine(self.field, self.task)
        identity, target, ratio = [], [], []
        for i, x_src in enumerate(sources):
            result = engine.run(cfg, x_src, i)
            scores = metrics.score(x_src, result.edited, result.trajectory)
            identity.append(scores.identity_error)
            target.append(scores.target_loglik)
            ratio.append(scores.cancel_ratio)
        return {
            "identity": float(np.mean(identity)),
            "target": float(np.mean(target)),
            "ratio": float(np.nanmean(ratio)),
        }

    def _claim_sources(self, n: int = 200) -> NDArray[np.float64]:
        return sample_mixture_batch(self.task.source, self.stream(15), n)

    def claim_inversion_vs_direct(self) -> ClaimResult:
        metrics, sources = MetricsEngine(self.task), self._claim_sources()
        inv = self._method_scores(EditConfig(method=EditMethod.INVERSION), sources, metrics)
        direct = self._method_scores(EditConfig(method=EditMethod.DIRECT), sources, metrics)
        return ClaimResult(
            holds=inv["identity"] < direct["identity"],
            values={"inversion_identity": inv["identity"], "direct_identity": direct["identity"]},
            detail=f"identity {inv['identity']:.4f} vs {direct['identity']:.4f}",
        )

    def claim_under_editing(self) -> ClaimResult:
        metrics, sources = MetricsEngine(self.task), self._claim_sources()
        anchored = self._method_scores(EditConfig(method=EditMethod.ANCHORFLOW), sources, metrics)
        plain = self._method_scores(EditConfig(method=EditMethod.FLOWEDIT), sources, metrics)
        return ClaimResult(
            holds=anchored["target"] > plain["target"] and anchored["ratio"] >= plain["ratio"],
            values={
                "anchorflow_target": anchored["target"],
                "flowedit_target": plain["target"],
                "anchorflow_ratio": anchored["ratio"],
                "flowedit_ratio": plain["ratio"],
            },
            detail=(
                f"target loglik {anchored['target']:.4f} vs {plain['target']:.4f}, "
                f"cancel ratio {anchored['ratio']:.4f} vs {plain['ratio']:.4f}"
            ),
        )

    def claim_fixed_anchor(self) -> ClaimResult:
        metrics, sources = MetricsEngine(self.task), self._claim_sources()
        fixed = self._method_scores(EditConfig(method=EditMethod.FIXED_ANCHOR), sources, metrics)
        anchored = self._method_scores(EditConfig(method=EditMethod.ANCHORFLOW), sources, metrics)
        return ClaimResult(
            holds=fixed["identity"] > anchored["identity"],
            values={
                "fixed_identity": fixed["identity"],
                "anchorflow_identity": anchored["identity"],
            },
            detail=f"identity {fixed['identity']:.4f} vs {anchored['identity']:.4f}",
        )

    def claim_n_avg(self) -> ClaimResult:
        x_src = self._source_point(16)
        engine = self.engine(self.field, self.task)
        parts = []
        values: dict[str, float] = {}
        holds = True
        for method in (EditMethod.FLOWEDIT, EditMethod.ANCHORFLOW):
            spreads = []
            for n_avg in N_AVG_LEVELS:
                edits = np.stack(
                    [
                        engine.run(
                            EditConfig(seed=self.seed + s, n_avg=n_avg, method=method), x_src, 0
                        ).edited
                        for s in range(32)
                    ]
                )
                spreads.append(float(np.sqrt(np.sum(np.var(edits, axis=0)))))
                values[f"{method}_spread_{n_avg}"] = spreads[-1]
            holds = holds and all(b < a for a, b in zip(spreads, spreads[1:], strict=False))
            parts.append(f"{method}: " + " > ".join(f"{s:.4f}" for s in spreads))
        return ClaimResult(holds=holds, values=values, detail="; ".join(parts))

    def claim_sweep_trend(self) -> ClaimResult:
        metrics, sources = MetricsEngine(self.task), self._claim_sources()
        values: dict[str, float] = {}
        target, identity = [], []
        for n_max, s_tar in SWEEP_POINTS:
            row = self._method_scores(EditConfig(n_max=n_max, s_tar=s_tar), sources, metrics)
            target.append(row["target"])
            identity.append(row["identity"])
            values[f"target_{n_max}"] = row["target"]
            values[f"identity_{n_max}"] = row["identity"]
        holds = all(b >= a for a, b in zip(target, target[1:], strict=False)) and all(
            b >= a for a, b in zip(identity, identity[1:], strict=False)
        )
        detail = "target " + ", ".join(f"{v:.3f}" for v in target)
        detail += "; identity " + ", ".join(f"{v:.3f}" for v in identity)
        return ClaimResult(holds=holds, values=values, detail=detail)

    # --- Runner ---

    def run(self, claims: bool = False, progress: bool = False) -> VerifyReport:
        checks = self.checks() + (self.claim_checks() if claims else [])
        results = []
        for name, check in tqdm(checks, desc="verify", disable=not progress):
            start = time.perf_counter()
            passed, detail = check()
            seconds = time.perf_counter() - start
            results.append(CheckResult(name=name, passed=passed, detail=detail, seconds=seconds))
            if passed:
                logger.info(f"PASS {name}: {detail}")
            else:
                logger.error(f"FAIL {name}: {detail}")
        return VerifyReport(results=results, fault=self.fault, claims=claims)


def anchor_cosine_table(
    task: EditTask | None = None, samples: int = 10, seed: int = VERIFY_SEED
) -> pl.DataFrame:
    """Cosine between the Jacobian-free and the exact alignment gradient at every logged step."""
    task = task or paired_two_mode()
    field = GmmOracleField(task)
    engine = EditEngine(field, task)
    cfg = EditConfig(seed=seed)
    sources = sample_mixture_batch(task.source, RngStream(seed=seed).child(17), samples)
    records: dict[str, list[float | int]] = {name: [] for name in COSINE_SCHEMA}
    for i, x_src in enumerate(sources):
        for step in engine.anchorflow(cfg, x_src, i).trajectory:
            assert step.x_src_t is not None
            exact = anchor_gradient_exact(
                field, step.x_fe, step.x_src_t, x_src, step.t, cfg.s_src, cfg.s_tar
            )
            records["sample_idx"].append(i)
            records["step_idx"].append(step.step_idx)
            records["t"].append(step.t)
            records["cosine"].append(direction_cosine(exact, step.direction))
    return pl.DataFrame(records, schema=COSINE_SCHEMA)


def run_verify(
    fault: Fault | None = None,
    claims: bool = False,
    out_dir: Path | None = None,
    diagnostics: bool = False,
    progress: bool = False,
) -> VerifyReport:
    """Run the suite; write verify.txt (and anchor_cosine.csv) when ``out_dir`` is given."""
    report = VerifyEngine(fault).run(claims=claims, progress=progress)
    if out_dir is not None:
        registry = RunRegistry(Path(out_dir))
        registry.write_verify(report.render())
        if diagnostics:
            registry.write_anchor_cosine(anchor_cosine_table())
    if report.passed:
        logger.success(f"All {len(report.results)} checks passed")
    return report

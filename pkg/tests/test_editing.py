"""Editing samplers on the exact two-mode fields."""

import numpy as np
import pytest

from src.analysis.metrics import MetricsEngine
from src.config.models import EditConfig
from src.core.domain_models import EditMethod, EditTask, Latent
from src.core.errors import NumericFailureError
from src.core.rng import RngStream
from src.editing.noise import derive_noise
from src.editing.samplers import EditEngine, direct_edit, run_edit
from src.flow.anchor_math import gradient_expansion
from src.flow.fields import ConstantField, VelocityField
from src.flow.gmm_oracle import GmmOracleField, sample_mixture_batch

SHORT = {"T": 20, "n_max": 16, "n_min": 2}


def _sources(task: EditTask, n: int) -> np.ndarray:
    return sample_mixture_batch(task.source, RngStream(seed=1).child(1), n)


def test_noise_is_keyed() -> None:
    a = derive_noise(3, 4, 5, 0, 2)
    assert np.array_equal(a, derive_noise(3, 4, 5, 0, 2))
    assert not np.array_equal(a, derive_noise(3, 4, 5, 1, 2))
    assert not np.array_equal(a, derive_noise(3, 4, 6, 0, 2))


@pytest.mark.parametrize("method", [EditMethod.FLOWEDIT, EditMethod.ANCHORFLOW])
@pytest.mark.parametrize("n_avg", [1, 4])
def test_identity_task_leaves_sources_unchanged(
    identity_task: EditTask, method: EditMethod, n_avg: int
) -> None:
    engine = EditEngine(GmmOracleField(identity_task), identity_task)
    cfg = EditConfig(method=method, n_avg=n_avg, **SHORT)
    for idx, x_src in enumerate(_sources(identity_task, 10)):
        result = engine.run(cfg, x_src, idx)
        assert np.array_equal(result.edited, x_src)
        assert result.identity_gap() == 0.0


def test_active_window(paired_field: GmmOracleField, paired_task: EditTask) -> None:
    cfg = EditConfig(method=EditMethod.FLOWEDIT, T=10, n_max=7, n_min=3)
    result = run_edit(paired_field, paired_task, cfg, np.array([-3.0, 1.0]))
    assert result.step_indices == [7, 6, 5, 4, 3]
    assert [s.delta for s in result.trajectory] == pytest.approx([0.1] * 5)
    assert result.trajectory[0].t == pytest.approx(0.7)


def test_first_step_has_no_shift(paired_field: GmmOracleField, paired_task: EditTask) -> None:
    cfg = EditConfig(method=EditMethod.ANCHORFLOW, **SHORT)
    first = run_edit(paired_field, paired_task, cfg, np.array([-3.0, -1.0])).trajectory[0]
    assert first.x_tar_t is not None
    assert np.array_equal(first.x_tar_t, first.x_src_t)


def test_flowedit_direction_is_velocity_difference(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    cfg = EditConfig(method=EditMethod.FLOWEDIT, **SHORT)
    result = run_edit(paired_field, paired_task, cfg, np.array([-3.0, 1.0]))
    for step in result.trajectory:
        assert step.v_tar is not None and step.v_src is not None
        assert np.array_equal(step.direction, step.v_tar - step.v_src)
        assert np.allclose(step.update, -step.delta * step.direction, rtol=0.0, atol=0.0)


def test_anchorflow_matches_gradient_expansion(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    cfg = EditConfig(method=EditMethod.ANCHORFLOW, **SHORT)
    x_src = np.array([-2.5, 0.8])
    result = run_edit(paired_field, paired_task, cfg, x_src)
    for step in result.trajectory:
        assert step.v_tar is not None and step.v_src is not None
        expected = gradient_expansion(step.x_fe, x_src, step.v_tar, step.v_src, step.t)
        scale = 1.0 + float(np.max(np.abs(expected)))
        assert np.max(np.abs(step.direction - expected)) <= 1e-10 * scale


def test_squared_factor_scales_first_direction(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    x_src = np.array([-3.0, 1.0])
    plain = run_edit(paired_field, paired_task, EditConfig(**SHORT), x_src).trajectory[0]
    squared = run_edit(
        paired_field, paired_task, EditConfig(squared_factor=True, **SHORT), x_src
    ).trajectory[0]
    assert np.allclose(squared.direction, (2.0 - plain.t) * plain.direction, rtol=1e-14)


def test_fixed_anchor_reuses_noise(paired_field: GmmOracleField, paired_task: EditTask) -> None:
    x_src = np.array([-3.0, -1.0])
    cfg = EditConfig(method=EditMethod.FIXED_ANCHOR, **SHORT)
    result = run_edit(paired_field, paired_task, cfg, x_src)
    recovered = [
        (step.x_src_t - (1.0 - step.t) * x_src) / step.t
        for step in result.trajectory
        if step.x_src_t is not None
    ]
    expected = derive_noise(cfg.seed, 0, cfg.n_max, 0, 2)
    for noise in recovered:
        assert np.allclose(noise, expected, rtol=1e-10, atol=1e-10)


def test_runs_are_deterministic(paired_field: GmmOracleField, paired_task: EditTask) -> None:
    cfg = EditConfig(n_avg=3, seed=9, **SHORT)
    x_src = np.array([-3.2, 0.9])
    a = run_edit(paired_field, paired_task, cfg, x_src, sample_idx=4)
    b = run_edit(paired_field, paired_task, cfg, x_src, sample_idx=4)
    assert a.same_output(b)
    c = run_edit(paired_field, paired_task, cfg, x_src, sample_idx=5)
    assert not a.same_output(c)


def test_n_avg_prefix_shares_first_noise(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    x_src = np.array([-3.0, 1.0])
    one = run_edit(paired_field, paired_task, EditConfig(n_avg=1, **SHORT), x_src)
    four = run_edit(paired_field, paired_task, EditConfig(n_avg=4, **SHORT), x_src)
    assert np.array_equal(one.trajectory[0].x_src_t, four.trajectory[0].x_src_t)


def test_direct_ignores_source(paired_field: GmmOracleField, paired_task: EditTask) -> None:
    cfg = EditConfig(method=EditMethod.DIRECT, **SHORT)
    a = run_edit(paired_field, paired_task, cfg, np.array([-3.0, 1.0]), sample_idx=2)
    b = run_edit(paired_field, paired_task, cfg, np.array([9.0, 9.0]), sample_idx=2)
    assert np.array_equal(a.edited, b.edited)
    assert np.isnan(a.identity_gap())
    assert a.step_indices == list(range(20, 0, -1))


def test_direct_with_noise_override(paired_task: EditTask) -> None:
    field = ConstantField([1.0, 2.0])
    cfg = EditConfig(method=EditMethod.DIRECT, **SHORT)
    result = direct_edit(field, paired_task, cfg, noise_override=np.array([0.0, 0.0]))
    assert np.allclose(result.edited, [-1.0, -2.0], atol=1e-12)


def test_inversion_round_trips_constant_field(paired_task: EditTask) -> None:
    cfg = EditConfig(method=EditMethod.INVERSION, **SHORT)
    x_src = np.array([0.5, -0.5])
    result = run_edit(ConstantField([0.3, 0.1]), paired_task, cfg, x_src)
    assert np.allclose(result.edited, x_src, atol=1e-12)
    assert len(result.trajectory) == 2 * cfg.T


def test_anchorflow_stops_short_of_paired_target(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    # With the exact field the anchor pull stalls between the modes: from x=-3 the
    # edit ends near x=0.6 while FlowEdit overshoots the paired target (3, 1)
    x_src = np.array([-3.0, 1.0])
    metrics = MetricsEngine(paired_task)
    anchored, plain = [], []
    for seed in range(20):
        anchored.append(run_edit(paired_field, paired_task, EditConfig(seed=seed), x_src).edited)
        cfg = EditConfig(seed=seed, method=EditMethod.FLOWEDIT)
        plain.append(run_edit(paired_field, paired_task, cfg, x_src).edited)
    anchored_x = float(np.mean([e[0] for e in anchored]))
    assert 0.4 < anchored_x < 0.8
    identity = np.mean([metrics.identity_error(x_src, e)[0] for e in anchored])
    assert 2.2 < identity < 2.6
    assert float(np.mean([e[0] for e in plain])) > 3.5
    anchored_score = np.mean([metrics.semantic_score(e) for e in anchored])
    assert anchored_score < np.mean([metrics.semantic_score(e) for e in plain])


def test_first_update_vanishes_at_pure_noise(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    cfg = EditConfig(T=20, n_max=20, n_min=2)
    first = run_edit(paired_field, paired_task, cfg, np.array([-3.0, 1.0])).trajectory[0]
    assert first.t == 1.0
    assert np.array_equal(first.update, np.zeros(2))


def test_zero_leading_update_does_not_change_window(
    paired_field: GmmOracleField, paired_task: EditTask
) -> None:
    x_src = np.array([-2.8, -1.1])
    full = run_edit(paired_field, paired_task, EditConfig(T=20, n_max=20, n_min=2), x_src)
    short = run_edit(paired_field, paired_task, EditConfig(T=20, n_max=19, n_min=2), x_src)
    assert np.array_equal(full.edited, short.edited)
    for a, b in zip(full.trajectory[1:], short.trajectory, strict=True):
        assert np.array_equal(a.update, b.update)


class RecordingNoise:
    """Keyed noise that remembers every key it was asked for."""

    def __init__(self, rep_offset: int = 0) -> None:
        self.rep_offset = rep_offset
        self.keys: list[tuple[int, int]] = []

    def __call__(self, seed: int, sample_idx: int, step_idx: int, rep_idx: int, d: int) -> Latent:
        self.keys.append((step_idx, rep_idx))
        return derive_noise(seed, sample_idx, step_idx, rep_idx + self.rep_offset, d)


@pytest.mark.parametrize("method", [EditMethod.FLOWEDIT, EditMethod.ANCHORFLOW])
def test_averaged_update_is_mean_of_single_reps(
    paired_field: GmmOracleField, paired_task: EditTask, method: EditMethod
) -> None:
    m = 4
    x_src = np.array([-3.1, 0.7])
    recorder = RecordingNoise()
    engine = EditEngine(paired_field, paired_task, noise=recorder)
    averaged = engine.run(EditConfig(method=method, n_avg=m, **SHORT), x_src, 2).trajectory[0]
    assert recorder.keys[:m] == [(SHORT["n_max"], rep) for rep in range(m)]

    singles = []
    for rep in range(m):
        single = EditEngine(paired_field, paired_task, noise=RecordingNoise(rep_offset=rep))
        cfg = EditConfig(method=method, n_avg=1, **SHORT)
        singles.append(single.run(cfg, x_src, 2).trajectory[0].update)
    expected = np.mean(np.stack(singles), axis=0)
    scale = max(1.0, float(np.max(np.abs(expected))))
    assert np.max(np.abs(averaged.update - expected)) <= 1e-15 * scale


def test_non_finite_field_reports_step(paired_task: EditTask, nan_field: VelocityField) -> None:
    cfg = EditConfig(method=EditMethod.FLOWEDIT, **SHORT)
    with pytest.raises(NumericFailureError, match="step 16"):
        run_edit(nan_field, paired_task, cfg, np.zeros(2))


def test_dimension_mismatch(paired_task: EditTask) -> None:
    with pytest.raises(ValueError):
        EditEngine(ConstantField([1.0, 2.0, 3.0]), paired_task)
    engine = EditEngine(ConstantField([1.0, 2.0]), paired_task)
    with pytest.raises(ValueError):
        engine.flowedit(EditConfig(**SHORT), np.zeros(3))

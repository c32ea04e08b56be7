"""Time grid, forward noising and Euler integration."""

import numpy as np
import pytest

from src.core.domain_models import Condition, EditTask, GaussianMixture
from src.core.errors import NumericFailureError
from src.core.rng import RngStream
from src.flow.fields import ConstantField, LinearField, VelocityField, ZeroField
from src.flow.flow_core import (
    euler_generate,
    euler_invert,
    make_grid_and_schedule,
    noisy_interpolate,
)
from src.flow.gmm_oracle import GmmOracleField


def test_grid_and_schedule() -> None:
    grid, sched = make_grid_and_schedule(50)
    assert grid.T == 50
    assert grid.t_values[0] == 0.0
    assert grid.t_values[-1] == 1.0
    assert grid.t_values[41] == pytest.approx(0.82, abs=1e-15)
    assert np.array_equal(sched.sigma_values, grid.t_values)
    assert np.allclose(sched.deltas, 0.02, rtol=0.0, atol=1e-15)
    assert sched.delta(1) == pytest.approx(0.02)


def test_single_step_grid() -> None:
    grid, sched = make_grid_and_schedule(1)
    assert list(grid.t_values) == [0.0, 1.0]
    assert sched.delta(1) == 1.0


def test_zero_steps_rejected() -> None:
    with pytest.raises(ValueError):
        make_grid_and_schedule(0)


def test_noisy_interpolate_endpoints() -> None:
    x0 = np.array([1.0, -2.0])
    noise = np.array([0.3, 0.4])
    assert np.array_equal(noisy_interpolate(x0, noise, 0.0), x0)
    assert np.array_equal(noisy_interpolate(x0, noise, 1.0), noise)
    assert np.allclose(noisy_interpolate(x0, noise, 0.5), [0.65, -0.8])
    with pytest.raises(ValueError):
        noisy_interpolate(x0, noise, 1.5)


def test_constant_field_transport() -> None:
    c = np.array([0.5, -1.0, 2.0])
    noise = np.array([1.0, 1.0, 1.0])
    grid, sched = make_grid_and_schedule(50)
    x0 = euler_generate(ConstantField(c), Condition.TAR, 1.0, noise, grid, sched)
    assert np.allclose(x0, noise - c, rtol=0.0, atol=1e-12)


def test_zero_field_is_identity() -> None:
    noise = np.array([0.1, 0.2])
    grid, sched = make_grid_and_schedule(7)
    x0 = euler_generate(ZeroField(2), Condition.SRC, 1.0, noise, grid, sched)
    assert np.array_equal(x0, noise)


def test_batch_generation_matches_rows() -> None:
    field = LinearField([[0.3, 0.1], [-0.2, 0.5]], offset=[0.1, 0.0])
    grid, sched = make_grid_and_schedule(20)
    noise = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
    batch = euler_generate(field, Condition.TAR, 1.0, noise, grid, sched)
    for i in range(3):
        single = euler_generate(field, Condition.TAR, 1.0, noise[i], grid, sched)
        assert np.allclose(batch[i], single, rtol=0.0, atol=1e-14)


def test_on_step_sees_every_step_in_order() -> None:
    grid, sched = make_grid_and_schedule(5)
    seen: list[int] = []
    euler_generate(
        ConstantField([1.0]), Condition.TAR, 1.0, np.array([0.0]), grid, sched,
        lambda i, t, x, v, u: seen.append(i),
    )
    assert seen == [5, 4, 3, 2, 1]
    seen.clear()
    euler_invert(
        ConstantField([1.0]), Condition.SRC, 1.0, np.array([0.0]), grid, sched,
        lambda i, t, x, v, u: seen.append(i),
    )
    assert seen == [1, 2, 3, 4, 5]


def test_invert_then_generate_matches_exact_product(standard_normal_task: EditTask) -> None:
    """For N(0, I) data v = a(t) x, so the round trip scales x by a known product."""
    field = GmmOracleField(standard_normal_task)
    T = 20
    grid, sched = make_grid_and_schedule(T)
    x0 = np.array([0.7, -1.2])
    noise = euler_invert(field, Condition.SRC, 1.0, x0, grid, sched)
    back = euler_generate(field, Condition.SRC, 1.0, noise, grid, sched)

    def a(t: float) -> float:
        return (2.0 * t - 1.0) / ((1.0 - t) ** 2 + t**2)

    t = grid.t_values
    factor = 1.0
    for i in range(1, T + 1):
        factor *= (1.0 + sched.delta(i) * a(t[i - 1])) * (1.0 - sched.delta(i) * a(t[i]))
    assert np.allclose(back, factor * x0, rtol=1e-12, atol=1e-14)


def test_euler_converges_first_order(paired_task: EditTask) -> None:
    field = GmmOracleField(paired_task)
    noise = np.array([0.4, -0.3])
    ends = {}
    for T in (25, 100, 400):
        grid, sched = make_grid_and_schedule(T)
        ends[T] = euler_generate(field, Condition.TAR, 1.0, noise, grid, sched)
    coarse = np.linalg.norm(ends[25] - ends[100])
    fine = np.linalg.norm(ends[100] - ends[400])
    assert fine <= 0.5 * coarse


def test_generation_preserves_gaussian_mean() -> None:
    gmm = GaussianMixture.isotropic(weights=[1.0], means=[[3.0, 0.0]], variance=1.0)
    task = EditTask(name="shifted-normal", source=gmm, target=gmm, pairing=(0,))
    grid, sched = make_grid_and_schedule(50)
    noise = RngStream(seed=21).batch_normals(20_000, 2)
    samples = euler_generate(GmmOracleField(task), Condition.TAR, 1.0, noise, grid, sched)
    assert samples.mean(axis=0) == pytest.approx([3.0, 0.0], abs=0.05)


@pytest.mark.slow
def test_generation_recovers_component_means(paired_task: EditTask) -> None:
    target = paired_task.target
    grid, sched = make_grid_and_schedule(50)
    noise = RngStream(seed=22).batch_normals(20_000, 2)
    samples = euler_generate(GmmOracleField(paired_task), Condition.TAR, 1.0, noise, grid, sched)
    gaps = np.linalg.norm(samples[:, None, :] - target.means[None, :, :], axis=2)
    nearest = np.argmin(gaps, axis=1)
    for k in range(target.n_components):
        members = samples[nearest == k]
        assert len(members) == pytest.approx(10_000, rel=0.05)
        assert members.mean(axis=0) == pytest.approx(target.means[k], abs=0.1)


def test_non_finite_velocity_raises(nan_field: VelocityField) -> None:
    grid, sched = make_grid_and_schedule(10)
    with pytest.raises(NumericFailureError, match="step 10"):
        euler_generate(nan_field, Condition.TAR, 1.0, np.zeros(2), grid, sched)

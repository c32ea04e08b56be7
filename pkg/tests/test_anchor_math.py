"""Anchor objective algebra and the alignment gradient."""

import numpy as np
import pytest

from src.core.domain_models import Condition
from src.core.rng import RngStream
from src.flow.anchor_math import (
    AnchorSeries,
    alignment_loss,
    anchor_gradient,
    anchor_gradient_exact,
    decomposed_objective,
    direction_cosine,
    field_jacobian,
    finite_difference_gradient,
    gradient_expansion,
    inversion_from_velocity,
    minimize_strong_objective,
    optimal_anchor,
    reduced_objective,
    single_step_inversion,
    strong_objective,
    strong_objective_gradient,
)
from src.flow.fields import ConstantField, LinearField


def _series(seed: int, steps: int, d: int) -> AnchorSeries:
    stream = RngStream(seed=seed)
    return AnchorSeries(
        s_list=stream.child(0).batch_normals(steps, d) * 2.0,
        g_list=stream.child(1).batch_normals(steps, d) * 2.0 + 1.0,
    )


def test_series_validation() -> None:
    with pytest.raises(ValueError):
        AnchorSeries(s_list=np.zeros((3, 2)), g_list=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        AnchorSeries(s_list=np.zeros((0, 2)), g_list=np.zeros((0, 2)))


def test_single_point_example() -> None:
    series = AnchorSeries(s_list=np.array([[0.0, 0.0]]), g_list=np.array([[2.0, 0.0]]))
    assert np.array_equal(optimal_anchor(series), [1.0, 0.0])
    assert alignment_loss(series) == 2.0
    assert reduced_objective(series) == 2.0
    assert strong_objective(series, np.array([1.0, 0.0])) == 2.0


@pytest.mark.parametrize("steps,d", [(1, 1), (5, 2), (64, 8)])
def test_decomposition_holds_everywhere(steps: int, d: int) -> None:
    series = _series(steps, steps, d)
    for k in range(5):
        A = RngStream(seed=k).normals(d) * 3.0
        strong = strong_objective(series, A)
        assert decomposed_objective(series, A) == pytest.approx(strong, rel=1e-9)
        assert alignment_loss(series) <= strong + 1e-9
    best = optimal_anchor(series)
    assert strong_objective(series, best) == pytest.approx(reduced_objective(series), rel=1e-9)


def test_lower_bound_is_tight_for_reflected_series() -> None:
    s = RngStream(seed=3).batch_normals(6, 2)
    series = AnchorSeries(s_list=s, g_list=-s)
    assert np.allclose(optimal_anchor(series), 0.0, atol=1e-15)
    assert strong_objective(series, np.zeros(2)) == pytest.approx(alignment_loss(series))


def test_gradient_descent_finds_closed_form() -> None:
    series = _series(11, 20, 3)
    found = minimize_strong_objective(series)
    assert np.allclose(found, optimal_anchor(series), atol=1e-8)


def test_objective_gradient_matches_finite_differences() -> None:
    series = _series(2, 7, 4)
    A = np.array([0.5, -1.0, 2.0, 0.0])
    numeric = finite_difference_gradient(lambda a: strong_objective(series, a), A)
    assert np.allclose(strong_objective_gradient(series, A), numeric, rtol=1e-6, atol=1e-6)


def test_translation_moves_anchor_and_keeps_loss() -> None:
    series = _series(5, 9, 2)
    offset = np.array([4.0, -2.0])
    moved = series.shifted(offset)
    assert np.allclose(optimal_anchor(moved), optimal_anchor(series) + offset)
    assert alignment_loss(moved) == pytest.approx(alignment_loss(series))
    assert alignment_loss(series.scaled(2.0)) == pytest.approx(4.0 * alignment_loss(series))


def test_single_step_inversion() -> None:
    field = ConstantField([1.0, -1.0])
    x = np.array([0.0, 0.0])
    assert np.allclose(single_step_inversion(field, x, 0.25, Condition.SRC, 1.0), [0.75, -0.75])
    assert np.array_equal(single_step_inversion(field, x, 1.0, Condition.SRC, 1.0), x)
    with pytest.raises(ValueError):
        single_step_inversion(field, x, 2.0, Condition.SRC, 1.0)


def test_anchor_gradient_factor() -> None:
    g = np.array([3.0, 1.0])
    s = np.array([1.0, 1.0])
    assert np.allclose(anchor_gradient(g, s, 0.5), [3.0, 0.0])
    assert np.array_equal(anchor_gradient(g, s, 1.0), g - s)
    with pytest.raises(ValueError):
        anchor_gradient(g, s, -0.5)


def test_expansion_equals_gradient_of_reconstructions() -> None:
    stream = RngStream(seed=21)
    for k in range(20):
        x_fe, x_src_0, x_src_t, v_tar, v_src = stream.child(k).batch_normals(5, 3)
        t = float(stream.child(k, 9).uniforms(1)[0])
        x_tar_t = x_src_t + (x_fe - x_src_0)
        g = inversion_from_velocity(x_tar_t, v_tar, t)
        s = inversion_from_velocity(x_src_t, v_src, t)
        assert np.allclose(
            anchor_gradient(g, s, t),
            gradient_expansion(x_fe, x_src_0, v_tar, v_src, t),
            rtol=1e-12,
            atol=1e-12,
        )


def test_jacobian_of_linear_field() -> None:
    M = np.array([[0.3, -0.2], [0.5, 0.1]])
    field = LinearField(M, offset=[1.0, 2.0])
    jac = field_jacobian(field, np.array([0.4, -0.7]), 0.5, Condition.TAR, 1.0)
    assert np.allclose(jac, M, atol=1e-8)


def test_exact_gradient_keeps_jacobian() -> None:
    M = np.array([[0.3, -0.2], [0.5, 0.1]])
    field = LinearField(M)
    t = 0.4
    x_fe = np.array([1.0, 2.0])
    x_src_0 = np.array([-1.0, 0.5])
    x_src_t = np.array([0.2, 0.3])
    factor = np.eye(2) + (1.0 - t) * M
    expected = factor.T @ (factor @ (x_fe - x_src_0))
    exact = anchor_gradient_exact(field, x_fe, x_src_t, x_src_0, t, 1.0, 1.0)
    assert np.allclose(exact, expected, atol=1e-8)
    with pytest.raises(ValueError):
        anchor_gradient_exact(field, x_fe, x_src_t, x_src_0, t, 1.0, 1.0, eps=1.0)


def test_direction_cosine() -> None:
    assert direction_cosine(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(1.0)
    assert direction_cosine(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)
    assert np.isnan(direction_cosine(np.zeros(2), np.ones(2)))

"""Closed-form velocity fields of Gaussian-mixture data under the straight path.

With X_t = (1 - t) X_0 + t N, X_0 from the mixture and N ~ N(0, I)
independent, component k marginalises to N((1 - t) mu_k, C_k) with
C_k = (1 - t)^2 Sigma_k + t^2 I, and the posterior means are

    E[x_0 | x_t, k] = mu_k + (1 - t) Sigma_k C_k^{-1} (x - (1 - t) mu_k)
    E[x_1 | x_t, k] = t C_k^{-1} (x - (1 - t) mu_k)

The marginal velocity is the responsibility-weighted sum of
E[x_1 - x_0 | x_t, k]. C_k^{-1} is only ever applied through Cholesky
triangular solves.
"""

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg
from scipy.special import logsumexp

from src.core.domain_models import Condition, EditTask, GaussianMixture, Latent, check_dim
from src.core.errors import NumericFailureError, OracleDegenerateError
from src.core.rng import RngStream, extend_keys, normals_for_keys, uniforms_for_keys
from src.flow.fields import combine_guidance

MIN_EFFECTIVE_SAMPLES = 50.0
MIN_ORACLE_SAMPLES = 1000

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_batch(x: Latent, d: int) -> tuple[NDArray[np.float64], bool]:
    arr = np.asarray(x, dtype=np.float64)
    check_dim(arr, d)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _check_time(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def _component_terms(
    gmm: GaussianMixture, x: NDArray[np.float64], t: float
) -> tuple[NDArray[np.float64], list[NDArray[np.float64]]]:
    """Per-component log densities of x_t (n, K) and C_k^{-1} residuals (n, d) each."""
    d = gmm.dim
    eye = np.eye(d)
    log_dens = np.empty((x.shape[0], gmm.n_components))
    solves: list[NDArray[np.float64]] = []
    for k in range(gmm.n_components):
        cov_t = (1.0 - t) ** 2 * gmm.covariances[k] + t**2 * eye
        try:
            chol = linalg.cholesky(cov_t, lower=True)
        except linalg.LinAlgError as e:
            raise NumericFailureError(f"singular path covariance for component {k} at t={t}") from e
        resid = x - (1.0 - t) * gmm.means[k]
        z = linalg.solve_triangular(chol, resid.T, lower=True)
        log_dens[:, k] = (
            -0.5 * np.sum(z**2, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * d * _LOG_2PI
        )
        solves.append(linalg.solve_triangular(chol.T, z, lower=False).T)
    return log_dens, solves


def _log_responsibilities(
    gmm: GaussianMixture, log_dens: NDArray[np.float64]
) -> NDArray[np.float64]:
    with np.errstate(divide="ignore"):
        log_joint = np.log(gmm.weights)[None, :] + log_dens
    out: NDArray[np.float64] = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
    return out


def mixture_logpdf(gmm: GaussianMixture, x: Latent) -> float | NDArray[np.float64]:
    """log sum_k w_k N(x; mu_k, Sigma_k); a float for one latent, an array for a batch."""
    batch, single = _as_batch(x, gmm.dim)
    log_dens, _ = _component_terms(gmm, batch, 0.0)
    with np.errstate(divide="ignore"):
        log_joint = np.log(gmm.weights)[None, :] + log_dens
    values: NDArray[np.float64] = logsumexp(log_joint, axis=1)
    return float(values[0]) if single else values


def sample_from_keys(gmm: GaussianMixture, keys: NDArray[np.uint64]) -> NDArray[np.float64]:
    u = uniforms_for_keys(keys, 1)[:, 0]
    cumulative = np.cumsum(gmm.weights)
    comps = np.minimum(np.searchsorted(cumulative, u, side="right"), gmm.n_components - 1)
    z = normals_for_keys(extend_keys(keys, 1), gmm.dim)
    chol = gmm.cov_cholesky[comps]
    out: NDArray[np.float64] = gmm.means[comps] + np.einsum("nij,nj->ni", chol, z)
    return out


def sample_mixture(gmm: GaussianMixture, stream: RngStream) -> Latent:
    """One draw: pick a component by weight, then mu_k + L_k z."""
    return sample_from_keys(gmm, np.atleast_1d(stream.key))[0]


def sample_mixture_batch(gmm: GaussianMixture, stream: RngStream, n: int) -> NDArray[np.float64]:
    """n draws; row i equals ``sample_mixture(gmm, stream.child(i))``."""
    if n == 0:
        return np.zeros((0, gmm.dim))
    return sample_from_keys(gmm, stream.child_keys(n))


def responsibilities(gmm: GaussianMixture, x: Latent, t: float) -> NDArray[np.float64]:
    """Posterior over components given x_t = x; shape (K,) or (n, K)."""
    _check_time(t)
    batch, single = _as_batch(x, gmm.dim)
    if t == 1.0:
        # Every component marginal is N(0, I) under pure noise
        gamma = np.broadcast_to(gmm.weights, (batch.shape[0], gmm.n_components)).copy()
    else:
        log_dens, _ = _component_terms(gmm, batch, t)
        gamma = np.exp(_log_responsibilities(gmm, log_dens))
    return gamma[0] if single else gamma


def marginal_velocity(gmm: GaussianMixture, x: Latent, t: float) -> Latent:
    """Exact v(x, t) = E[x_1 - x_0 | x_t = x] for mixture data."""
    _check_time(t)
    batch, single = _as_batch(x, gmm.dim)
    log_dens, solves = _component_terms(gmm, batch, t)
    gamma = np.exp(_log_responsibilities(gmm, log_dens))
    v = np.zeros_like(batch)
    for k, sol in enumerate(solves):
        e_x1 = t * sol
        e_x0 = gmm.means[k] + (1.0 - t) * sol @ gmm.covariances[k].T
        v += gamma[:, k : k + 1] * (e_x1 - e_x0)
    return v[0] if single else v


def cfg_velocity(task: EditTask, x: Latent, t: float, cond: Condition, s: float) -> Latent:
    """Classifier-free guided velocity v_u + s (v_c - v_u).

    The unconditional model is the union mixture of source and target.
    """
    v_u = marginal_velocity(task.unconditional, x, t)
    if cond == Condition.UNCOND or s == 0.0:
        return v_u
    v_c = marginal_velocity(task.mixture(cond), x, t)
    return combine_guidance(v_u, v_c, s)


def mc_velocity_oracle(
    gmm: GaussianMixture, x: Latent, t: float, n: int, stream: RngStream
) -> tuple[Latent, Latent]:
    """Brute-force E[x_1 - x_0 | x_t = x] by self-normalised importance sampling.

    Draws x_0 from the data prior, weights each draw by N(x; (1 - t) x_0, t^2 I)
    and recovers x_1 = (x - (1 - t) x_0) / t. Returns the weighted mean and its
    per-coordinate standard error.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    if n < MIN_ORACLE_SAMPLES:
        raise ValueError(f"need at least {MIN_ORACLE_SAMPLES} samples, got {n}")
    x = np.asarray(x, dtype=np.float64)
    check_dim(x, gmm.dim)

    x0 = sample_mixture_batch(gmm, stream, n)
    resid = x[None, :] - (1.0 - t) * x0
    log_w = -0.5 * np.sum(resid**2, axis=1) / t**2
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    ess = 1.0 / float(np.sum(w**2))
    if ess < MIN_EFFECTIVE_SAMPLES:
        raise OracleDegenerateError(
            f"effective sample size {ess:.1f} below {MIN_EFFECTIVE_SAMPLES}"
        )

    u = resid / t - x0
    estimate = w @ u
    std_err = np.sqrt(w**2 @ (u - estimate) ** 2)
    logger.debug(f"mc oracle at t={t:.3f}: ess={ess:.0f}")
    return estimate, std_err


class GmmOracleField:
    """Exact guided velocity field of an edit task."""

    def __init__(self, task: EditTask) -> None:
        self.task = task

    @property
    def dim(self) -> int:
        return self.task.dim

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent:
        return cfg_velocity(self.task, x, t, cond, scale)

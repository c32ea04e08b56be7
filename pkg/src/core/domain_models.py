"""Domain models for flows, mixtures, edit tasks and edit results.

Time convention used everywhere: t = 1 is pure noise, t = 0 is data, and
generation integrates backward from t = 1 to t = 0. Many flow codebases use the
opposite direction; do not mix them.

Arrays inside the models are copied to float64 and marked read-only, so a
frozen model really is immutable.
"""

from enum import StrEnum
from functools import cached_property
from typing import Annotated, Any

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, PlainValidator, model_validator
from scipy import linalg

from src.core.errors import NumericFailureError

# A latent is a fixed-dimension float64 vector (or a (n, d) batch of them).
Latent = NDArray[np.float64]

WEIGHT_SUM_TOLERANCE = 1e-12


def to_array(value: Any) -> NDArray[np.float64]:
    """Copy into a read-only float64 array."""
    arr = np.array(value, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def as_latent(value: Any) -> Latent:
    """Validate a single latent: 1-D and finite."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"latent must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("latent contains non-finite values")
    return arr


def check_dim(x: Latent, d: int, what: str = "latent") -> None:
    if x.shape[-1] != d:
        raise ValueError(f"{what} has dimension {x.shape[-1]}, expected {d}")


FloatArray = Annotated[NDArray[np.float64], PlainValidator(to_array)]


# --- Enums ---


class Condition(StrEnum):
    """Conditioning signal of a velocity field evaluation."""

    SRC = "src"
    TAR = "tar"
    UNCOND = "uncond"


class EditMethod(StrEnum):
    """Editing samplers."""

    DIRECT = "direct"
    INVERSION = "inversion"
    FLOWEDIT = "flowedit"
    ANCHORFLOW = "anchorflow"
    # FlowEdit with one noise draw reused across all active steps
    FIXED_ANCHOR = "fixed_anchor"


class ScheduleKind(StrEnum):
    LINEAR = "linear"


# --- Time discretization ---


class TimeGrid(BaseModel):
    """Nodes t_i = i / T for i = 0..T."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    T: int = Field(..., ge=1)
    t_values: FloatArray

    @model_validator(mode="after")
    def validate_nodes(self) -> "TimeGrid":
        t = self.t_values
        if t.shape != (self.T + 1,):
            raise ValueError(f"grid needs {self.T + 1} nodes, got {t.shape}")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid must be strictly increasing")
        return self


class Schedule(BaseModel):
    """Noise levels sigma_{t_i}, one per grid node."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ScheduleKind = ScheduleKind.LINEAR
    sigma_values: FloatArray

    @model_validator(mode="after")
    def validate_levels(self) -> "Schedule":
        sigma = self.sigma_values
        if sigma.ndim != 1 or sigma.size < 2:
            raise ValueError("schedule needs at least two levels")
        if sigma[0] != 0.0 or sigma[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(sigma) < 0):
            raise ValueError("schedule must be nondecreasing")
        return self

    @cached_property
    def deltas(self) -> NDArray[np.float64]:
        """Step sizes; entry i - 1 holds delta_i = sigma_i - sigma_{i-1}."""
        return to_array(np.diff(self.sigma_values))

    def delta(self, i: int) -> float:
        """delta_i for grid index i in 1..T."""
        return float(self.deltas[i - 1])


# --- Gaussian mixtures ---


class GaussianMixture(BaseModel):
    """Weights, means (K, d) and covariances (K, d, d) of a Gaussian mixture."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: FloatArray
    means: FloatArray
    covariances: FloatArray

    @model_validator(mode="after")
    def validate_mixture(self) -> "GaussianMixture":
        w, mu, cov = self.weights, self.means, self.covariances
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if mu.ndim != 2 or mu.shape[0] != w.size:
            raise ValueError(f"means must have shape ({w.size}, d), got {mu.shape}")
        d = mu.shape[1]
        if cov.shape != (w.size, d, d):
            raise ValueError(f"covariances must have shape ({w.size}, {d}, {d}), got {cov.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"weights sum to {w.sum():.15f}, expected 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0.0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariances must be positive definite")
        return self

    @classmethod
    def isotropic(
        cls, weights: list[float], means: list[list[float]], variance: float | list[float]
    ) -> "GaussianMixture":
        """Convenience constructor with variance * I covariances."""
        mu = np.asarray(means, dtype=np.float64)
        k, d = mu.shape
        var = np.broadcast_to(np.asarray(variance, dtype=np.float64), (k,))
        cov = var[:, None, None] * np.eye(d)[None, :, :]
        return cls(weights=weights, means=mu, covariances=cov)

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @cached_property
    def cov_cholesky(self) -> NDArray[np.float64]:
        """Lower Cholesky factors of every covariance, shape (K, d, d)."""
        try:
            factors = np.stack([linalg.cholesky(c, lower=True) for c in self.covariances])
        except linalg.LinAlgError as e:
            raise NumericFailureError(f"singular covariance: {e}") from e
        return to_array(factors)

    def same_as(self, other: "GaussianMixture") -> bool:
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )

    def shifted(self, offset: Any) -> "GaussianMixture":
        """Same mixture translated by ``offset``."""
        return GaussianMixture(
            weights=self.weights,
            means=self.means + np.asarray(offset, dtype=np.float64)[None, :],
            covariances=self.covariances,
        )


class EditTask(BaseModel):
    """Source and target mixtures plus the component pairing between them.

    ``pairing[k]`` is the target component that source component k maps to.
    The unconditional model is the equal-weight union of both mixtures.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = "task"
    source: GaussianMixture
    target: GaussianMixture
    pairing: tuple[int, ...]

    @model_validator(mode="after")
    def validate_task(self) -> "EditTask":
        k = self.source.n_components
        if self.target.n_components != k:
            raise ValueError("source and target must have the same component count")
        if self.target.dim != self.source.dim:
            raise ValueError("source and target must have the same dimension")
        if sorted(self.pairing) != list(range(k)):
            raise ValueError(f"pairing must be a permutation of 0..{k - 1}, got {self.pairing}")
        return self

    @property
    def dim(self) -> int:
        return self.source.dim

    @cached_property
    def unconditional(self) -> GaussianMixture:
        # Identical mixtures keep the same object so guided fields cancel bit-exactly
        if self.source.same_as(self.target):
            return self.source
        return GaussianMixture(
            weights=np.concatenate([self.source.weights, self.target.weights]) / 2.0,
            means=np.concatenate([self.source.means, self.target.means]),
            covariances=np.concatenate([self.source.covariances, self.target.covariances]),
        )

    def mixture(self, cond: Condition) -> GaussianMixture:
        if cond == Condition.SRC:
            return self.source
        if cond == Condition.TAR:
            return self.target
        return self.unconditional

    def translated(self, offset: Any) -> "EditTask":
        # Built fresh: model_copy would carry over the cached union mixture
        return EditTask(
            name=self.name,
            source=self.source.shifted(offset),
            target=self.target.shifted(offset),
            pairing=self.pairing,
        )


# --- Edit results ---


class TrajectoryStep(BaseModel):
    """One logged step of a sampler.

    ``update`` is the displacement actually applied to the state at this step.
    For the inversion-free samplers ``direction`` is the averaged velocity
    difference (FlowEdit) or anchor gradient (AnchorFlow); for the generation
    baselines it is the field velocity.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    step_idx: int
    t: float
    delta: float
    x_fe: FloatArray
    direction: FloatArray
    update: FloatArray
    x_src_t: FloatArray | None = None
    x_tar_t: FloatArray | None = None
    v_src: FloatArray | None = None
    v_tar: FloatArray | None = None


class EditResult(BaseModel):
    """Edited latent, per-step log and wall time of one sampler run."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    method: EditMethod
    edited: FloatArray
    x_src: FloatArray | None = None
    trajectory: list[TrajectoryStep] = Field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def updates(self) -> NDArray[np.float64]:
        """Applied updates stacked in step order, shape (steps, d)."""
        if not self.trajectory:
            return np.zeros((0, self.edited.size))
        return np.stack([step.update for step in self.trajectory])

    @property
    def step_indices(self) -> list[int]:
        return [step.step_idx for step in self.trajectory]

    def same_output(self, other: "EditResult") -> bool:
        """Bitwise equality of everything except wall time."""
        if not np.array_equal(self.edited, other.edited):
            return False
        if len(self.trajectory) != len(other.trajectory):
            return False
        return all(
            a.step_idx == b.step_idx
            and np.array_equal(a.x_fe, b.x_fe)
            and np.array_equal(a.update, b.update)
            for a, b in zip(self.trajectory, other.trajectory, strict=True)
        )

    def identity_gap(self) -> float:
        """||edited - x_src||; NaN for methods that never see the source."""
        if self.x_src is None:
            return float("nan")
        return float(np.linalg.norm(self.edited - self.x_src))

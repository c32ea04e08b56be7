"""Shared fixtures: preset tasks, their exact fields and a small bench spec."""

import numpy as np
import pytest

from src.config.models import BenchSpec
from src.config.settings import identity_two_mode, paired_two_mode
from src.core.domain_models import Condition, EditTask, GaussianMixture, Latent
from src.flow.gmm_oracle import GmmOracleField


class NanField:
    """Field that always returns NaN, to provoke numeric failures."""

    def __init__(self, dim: int = 2) -> None:
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent:
        return np.full(np.shape(x), np.nan)


@pytest.fixture
def paired_task() -> EditTask:
    return paired_two_mode()


@pytest.fixture
def identity_task() -> EditTask:
    return identity_two_mode()


@pytest.fixture
def paired_field(paired_task: EditTask) -> GmmOracleField:
    return GmmOracleField(paired_task)


@pytest.fixture
def standard_normal_task() -> EditTask:
    """Source = target = N(0, I) in two dimensions."""
    gmm = GaussianMixture.isotropic(weights=[1.0], means=[[0.0, 0.0]], variance=1.0)
    return EditTask(name="standard-normal", source=gmm, target=gmm, pairing=(0,))


@pytest.fixture
def small_spec(paired_task: EditTask) -> BenchSpec:
    """A fast bench: short grid, few samples, all four main methods."""
    return BenchSpec(
        name="small",
        task=paired_task,
        T=10,
        n_max=8,
        n_min=1,
        samples=20,
        reference_samples=50,
        seed=11,
    )


@pytest.fixture
def nan_field() -> NanField:
    return NanField()

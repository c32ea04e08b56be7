"""Keyed noise for the editing samplers.

Every noise vector is addressed by (seed, sample_idx, step_idx, rep_idx), so
a sampler never shares generator state with anything else and the same key
always yields the same bits.
"""

from typing import Protocol

from src.core.domain_models import Latent
from src.core.rng import RngStream

# Grid index 0 is never an active editing step; direct generation uses it
GENERATION_STEP = 0


class NoiseSource(Protocol):
    def __call__(
        self, seed: int, sample_idx: int, step_idx: int, rep_idx: int, d: int
    ) -> Latent: ...


def derive_noise(seed: int, sample_idx: int, step_idx: int, rep_idx: int, d: int) -> Latent:
    """Standard normal vector of length d for one key."""
    return RngStream(seed=seed, path=(sample_idx, step_idx, rep_idx)).normals(d)

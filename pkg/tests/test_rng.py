"""Counter-based random streams."""

import numpy as np

from src.core.rng import RngStream, derive_key, extend_keys, to_u64


def test_same_key_same_bits() -> None:
    a = RngStream(seed=42, path=(1, 2, 3)).normals(16)
    b = RngStream(seed=42, path=(1, 2, 3)).normals(16)
    assert np.array_equal(a, b)


def test_different_paths_differ() -> None:
    keys = {int(derive_key(7, i, j)) for i in range(20) for j in range(20)}
    assert len(keys) == 400
    assert derive_key(7, 1, 2) != derive_key(7, 2, 1)
    assert derive_key(7) != derive_key(8)


def test_child_equals_extended_path() -> None:
    stream = RngStream(seed=5)
    assert stream.child(3).child(4).key == stream.child(3, 4).key
    assert stream.child(3, 4).key == derive_key(5, 3, 4)


def test_batch_rows_match_children() -> None:
    stream = RngStream(seed=9, path=(2,))
    batch = stream.batch_normals(6, 4)
    for i in range(6):
        assert np.array_equal(batch[i], stream.child(i).normals(4))
    uniforms = stream.batch_uniforms(3, 5)
    assert np.array_equal(uniforms[2], stream.child(2).uniforms(5))


def test_extend_keys_matches_child() -> None:
    stream = RngStream(seed=1)
    keys = stream.child_keys(4)
    extended = extend_keys(keys, 1)
    for i in range(4):
        assert extended[i] == stream.child(i, 1).key


def test_prefix_is_stable_under_longer_draws() -> None:
    stream = RngStream(seed=3)
    assert np.array_equal(stream.normals(10)[:4], stream.normals(4))


def test_uniforms_strictly_inside_unit_interval() -> None:
    u = RngStream(seed=0).uniforms(100_000)
    assert u.min() > 0.0
    assert u.max() < 1.0


def test_normal_moments() -> None:
    z = RngStream(seed=123).normals(50_000)
    assert abs(float(z.mean())) < 0.03
    assert abs(float(z.std()) - 1.0) < 0.03


def test_large_seed_wraps_into_u64() -> None:
    assert to_u64(-1) == np.uint64(2**64 - 1)
    assert RngStream(seed=2**64 - 1).normals(3).shape == (3,)

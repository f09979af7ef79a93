import numpy as np
from scipy import stats

from estfuse import rng


def test_stable_hash_is_deterministic():
    assert rng.stable_hash("a", 1, 2.0) == rng.stable_hash("a", 1, 2.0)
    assert rng.stable_hash("a", 1, 2.0) != rng.stable_hash("a", 1, 2.5)
    assert 0 <= rng.stable_hash("x") < 2 ** 64


def test_streams_replay_and_differ():
    a = rng.uniforms(rng.stream(1, 2, 3, 0), 100)
    b = rng.uniforms(rng.stream(1, 2, 3, 0), 100)
    assert np.array_equal(a, b)
    for other in (rng.stream(9, 2, 3, 0), rng.stream(1, 9, 3, 0), rng.stream(1, 2, 9, 0),
                  rng.stream(1, 2, 3, 9)):
        assert not np.array_equal(a, rng.uniforms(other, 100))


def test_uniforms_in_open_interval():
    u = rng.uniforms(rng.stream(0, 0, 0), 100_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normals():
    z = rng.normals(rng.stream(0, 1, 0), (2, 50_000))
    assert z.shape == (2, 50_000)
    assert np.all(np.isfinite(z))
    assert stats.kstest(z.ravel(), "norm").pvalue > 1e-3


def test_large_seed_accepted():
    rng.uniforms(rng.stream(2 ** 64 - 1, 2 ** 64 - 1, 2 ** 40, 7), 4)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ordquant.errors import InfeasibleSampleError
from ordquant.sampling import (
    kraemer_sample,
    kraemer_samples,
    largest_remainder,
    make_rng,
    sample_indices,
)


def test_make_rng_streams_are_reproducible_and_distinct():
    a = make_rng(5, 1, 2).random(4)
    np.testing.assert_array_equal(a, make_rng(5, 1, 2).random(4))
    assert not np.array_equal(a, make_rng(5, 1, 3).random(4))


def test_kraemer_sample_on_simplex():
    p = kraemer_sample(5, make_rng(0))
    assert p.shape == (5,)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1, abs=1e-12)


def test_kraemer_moments():
    S = kraemer_samples(5, 100_000, make_rng(1))
    np.testing.assert_allclose(S.mean(axis=0), 0.2, atol=0.005)
    np.testing.assert_allclose(S.var(axis=0), 4 / 150, rtol=0.1)


def test_largest_remainder_examples():
    np.testing.assert_array_equal(largest_remainder([0.2] * 5, 500), [100] * 5)
    np.testing.assert_array_equal(largest_remainder([0.33, 0.33, 0.34, 0, 0], 100), [33, 33, 34, 0, 0])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8).filter(lambda v: sum(v) > 1e-3),
       st.integers(1, 1000))
def test_largest_remainder_properties(raw, size):
    p = np.array(raw) / sum(raw)
    counts = largest_remainder(p, size)
    assert counts.sum() == size
    assert np.all(np.abs(counts - p * size) < 1)


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 10_000), st.integers(1, 300))
def test_sample_indices_hits_target_counts(seed, size):
    labels = np.repeat(np.arange(1, 6), 40)
    rng = make_rng(seed)
    target = kraemer_sample(5, rng)
    idx = sample_indices(labels, target, size, rng, 5)
    counts = np.bincount(labels[idx] - 1, minlength=5)
    np.testing.assert_array_equal(counts, largest_remainder(target, size))
    for c in range(5):
        chosen = idx[labels[idx] == c + 1]
        if chosen.size <= 40:
            assert np.unique(chosen).size == chosen.size


def test_sample_indices_infeasible():
    labels = np.array([1, 1, 2, 2])
    with pytest.raises(InfeasibleSampleError):
        sample_indices(labels, [0.5, 0, 0.5, 0, 0], 10, make_rng(0), 5)

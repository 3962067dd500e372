import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from reshuffle_opt import (
    ConfigurationError,
    RngStream,
    permutation_digest,
    sample_ball,
    sample_permutation,
    sample_permutations,
    sample_with_replacement,
)


def test_same_stream_replays_identically():
    a = RngStream(31, 4).generator.random(100)
    b = RngStream(31, 4).generator.random(100)
    assert np.array_equal(a, b)


def test_distinct_stream_ids_differ():
    a = RngStream(31, 0).generator.random(100)
    b = RngStream(31, 1).generator.random(100)
    assert not np.array_equal(a, b)


def test_permutation_is_one_based():
    perm = sample_permutation(RngStream(0, 0), 5)
    assert perm.dtype == np.int64
    assert sorted(perm) == [1, 2, 3, 4, 5]


@settings(deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_sampled_permutations_are_bijections(seed, n):
    perm = sample_permutation(RngStream(seed, 0), n)
    assert np.array_equal(np.sort(perm), np.arange(1, n + 1))


def test_batched_permutations_are_bijections_row_by_row():
    rows = sample_permutations(RngStream(8, 0), 6, 50)
    assert rows.shape == (50, 6)
    target = np.arange(1, 7)
    for row in rows:
        assert np.array_equal(np.sort(row), target)


def test_batched_permutations_zero_count():
    rows = sample_permutations(RngStream(8, 0), 6, 0)
    assert rows.shape == (0, 6)


def test_small_n_permutations_pass_chi_square():
    # exhaustive cell test at n=3: 60000 draws over 6 permutations
    perms = sample_permutations(RngStream(5, 0), 3, 60000)
    codes = (perms - 1) @ np.array([9, 3, 1])
    counts = np.bincount(codes, minlength=27)
    observed = counts[counts > 0]
    assert observed.size == 6
    stat = float(((observed - 10000.0) ** 2 / 10000.0).sum())
    assert stats.chi2.sf(stat, 5) >= 0.001


def test_with_replacement_bounds_and_replay():
    draws = sample_with_replacement(RngStream(2, 0), 3, 10000)
    again = sample_with_replacement(RngStream(2, 0), 3, 10000)
    assert np.array_equal(draws, again)
    assert draws.min() >= 1 and draws.max() <= 3
    assert set(np.unique(draws)) == {1, 2, 3}


def test_ball_draws_stay_inside_and_follow_radius_law():
    rng = RngStream(17, 0)
    radius = 0.5
    points = np.array([sample_ball(rng, 2, radius) for _ in range(100000)])
    norms = np.linalg.norm(points, axis=1)
    assert norms.max() <= radius
    # uniform law on the disk: P(|X| <= r) = (r/R)^2
    result = stats.kstest(norms, lambda r: (r / radius) ** 2)
    assert result.pvalue >= 0.001


def test_ball_zero_radius_is_origin():
    point = sample_ball(RngStream(0, 0), 3, 0.0)
    assert np.array_equal(point, np.zeros(3))


def test_digest_is_stable_and_dtype_insensitive():
    assert permutation_digest([1, 2, 3]) == "10c571e30a37781d"
    assert permutation_digest(np.array([2, 1, 4, 3])) == "e494c52b1b7c6be0"
    as_int32 = permutation_digest(np.array([2, 1, 4, 3], dtype=np.int32))
    assert as_int32 == "e494c52b1b7c6be0"
    assert permutation_digest([1, 2, 3]) != permutation_digest([3, 2, 1])


@pytest.mark.parametrize(
    "call",
    [
        lambda rng: sample_permutation(rng, 0),
        lambda rng: sample_permutations(rng, 0, 5),
        lambda rng: sample_permutations(rng, 3, -1),
        lambda rng: sample_with_replacement(rng, 0, 5),
        lambda rng: sample_with_replacement(rng, 3, -1),
        lambda rng: sample_ball(rng, 0, 1.0),
        lambda rng: sample_ball(rng, 2, -1.0),
    ],
)
def test_invalid_arguments_are_rejected(call):
    with pytest.raises(ConfigurationError):
        call(RngStream(0, 0))

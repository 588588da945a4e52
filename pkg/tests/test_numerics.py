import math

import numpy as np
import pytest

from gyver.ualk.exceptions import ArgumentError, BesselRangeError, DecompositionError
from gyver.ualk.numerics import (
    RngState,
    as_matrix,
    bessel_i,
    bessel_ratio,
    cholesky_factor,
    cholesky_sample,
    is_unit,
    knn_distance,
    knn_distances,
    knn_rank,
    log_bessel_i,
    log_gaussian_density,
    normalize_rows,
    top_singular_vectors,
)
from gyver.ualk.utils import ordered_map
from gyver.ualk.utils.parallel import THREADS_ENV, thread_count


def test_rng_is_deterministic_per_seed_and_stream():
    first = RngState(7).normal((4, 3))
    second = RngState(7).normal((4, 3))
    other = RngState(8).normal((4, 3))

    assert np.array_equal(first, second)
    assert not np.array_equal(first, other)


def test_spawned_streams_are_reproducible_and_distinct():
    root = RngState(3)

    assert np.array_equal(root.spawn('a').uniform(5), RngState(3).spawn('a').uniform(5))
    assert not np.array_equal(root.spawn('a').uniform(5), root.spawn('b').uniform(5))
    assert not np.array_equal(root.spawn(1).uniform(5), root.spawn(2).uniform(5))


def test_rng_rejects_out_of_range_seeds():
    with pytest.raises(ArgumentError):
        RngState(-1)
    with pytest.raises(ArgumentError):
        RngState(2**64)


def test_box_muller_normals_have_unit_moments():
    draws = RngState(11).normal(200_000)

    assert abs(draws.mean()) < 0.01
    assert abs(draws.std() - 1.0) < 0.01


def test_normal_handles_odd_counts():
    assert RngState(0).normal(5).shape == (5,)
    assert RngState(0).normal((3, 3)).shape == (3, 3)


def test_as_matrix_promotes_vectors_and_rejects_nan():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)

    with pytest.raises(ArgumentError):
        as_matrix([[1.0, math.nan]])
    with pytest.raises(ArgumentError):
        as_matrix(np.zeros((2, 2, 2)))


def test_normalize_rows_rejects_zero_rows():
    assert is_unit(normalize_rows(np.array([[3.0, 4.0]])))

    with pytest.raises(ArgumentError):
        normalize_rows(np.zeros((1, 3)))


@pytest.mark.parametrize('shape', [(8, 5), (20, 20), (64, 12), (12, 64)])
def test_top_singular_vectors_match_dense_solver(shape):
    m = RngState(shape[0] * 100 + shape[1]).normal(shape)
    k = min(3, *shape)

    vectors, values = top_singular_vectors(m, k)
    _, expected, vt = np.linalg.svd(m)

    assert np.allclose(values, expected[:k], atol=1e-8)
    for row, reference in zip(vectors, vt[:k]):
        assert abs(abs(row @ reference) - 1.0) < 1e-8
    assert np.allclose(vectors @ vectors.T, np.eye(k), atol=1e-10)


def test_top_singular_vectors_fix_the_sign():
    vectors, _ = top_singular_vectors(-np.array([[1.0, 2.0], [2.0, 4.0]]), 1)
    first = vectors[0][np.flatnonzero(np.abs(vectors[0]) > 1e-14)[0]]

    assert first > 0


def test_top_singular_vectors_of_rank_one_matrix():
    u = np.array([0.6, 0.8])
    m = np.outer([1.0, -2.0, 3.0], u)

    vectors, values = top_singular_vectors(m, 2)

    assert abs(vectors[0] @ u) == pytest.approx(1.0, abs=1e-10)
    assert values[1] == pytest.approx(0.0, abs=1e-6)


def test_top_singular_vectors_validate_k():
    with pytest.raises(ArgumentError):
        top_singular_vectors(np.eye(3), 4)
    with pytest.raises(ArgumentError):
        top_singular_vectors(np.eye(3), 0)


def test_cholesky_factor_reconstructs_covariance():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    factor = cholesky_factor(cov)

    assert np.allclose(factor @ factor.T, cov)
    assert np.allclose(np.triu(factor, 1), 0.0)


def test_cholesky_factor_handles_singular_psd_and_zero():
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])

    factor = cholesky_factor(singular)

    assert np.allclose(factor @ factor.T, singular, atol=1e-8)
    assert not np.any(cholesky_factor(np.zeros((2, 2))))


def test_cholesky_factor_rejects_indefinite_and_asymmetric():
    with pytest.raises(DecompositionError):
        cholesky_factor(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(DecompositionError):
        cholesky_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_sample_matches_covariance():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    draws = cholesky_sample(np.array([1.0, -1.0]), cov, 100_000, RngState(5))

    assert np.allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.02)
    assert np.allclose(np.cov(draws.T), cov, atol=0.03)


def test_log_gaussian_density_matches_closed_form():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    mean = np.array([0.5, -0.5])
    points = RngState(2).normal((6, 2))
    inverse = np.linalg.inv(cov)

    diff = points - mean
    expected = -0.5 * (
        2 * math.log(2 * math.pi)
        + math.log(np.linalg.det(cov))
        + np.einsum('ij,jk,ik->i', diff, inverse, diff)
    )

    assert np.allclose(log_gaussian_density(points, mean, cholesky_factor(cov)), expected)


def test_knn_distances_match_full_sort():
    rng = RngState(4)
    bank = rng.normal((50, 3))
    queries = rng.normal((10, 3))

    for k in (1, 5, 50):
        expected = [np.sort(np.linalg.norm(bank - q, axis=1))[k - 1] for q in queries]
        assert np.array_equal(knn_distances(queries, bank, k), expected)
        assert knn_distance(queries[0], bank, k) == expected[0]


def test_knn_exclude_self_skips_one_identical_row():
    bank = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])

    assert knn_distance(bank[0], bank, 1) == 0.0
    assert knn_distance(bank[0], bank, 1, exclude_self=True) == 1.0
    assert np.array_equal(knn_distances(bank, bank, 1, exclude_self=True), [1.0, 1.0, 2.0])


def test_knn_rejects_k_out_of_range():
    bank = np.zeros((3, 2))

    with pytest.raises(ArgumentError):
        knn_distance(np.zeros(2), bank, 4)
    with pytest.raises(ArgumentError):
        knn_distances(bank, bank, 3, exclude_self=True)


def test_knn_rank_breaks_ties_by_index():
    assert knn_rank(np.array([1.0, 3.0, 3.0, 2.0]), 3).tolist() == [1, 2, 3]


@pytest.mark.parametrize('order', [0.0, 0.5, 1.0, 2.5, 7.0])
@pytest.mark.parametrize('x', [0.1, 1.0, 10.0, 100.0])
def test_bessel_recurrence(order, x):
    lhs = bessel_i(order, x) - bessel_i(order + 2, x)
    rhs = 2 * (order + 1) / x * bessel_i(order + 1, x)

    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


def test_bessel_at_zero():
    assert bessel_i(0, 0.0) == 1.0
    assert bessel_i(2, 0.0) == 0.0
    assert log_bessel_i(0, 0.0) == 0.0
    assert log_bessel_i(1, 0.0) == -math.inf


def test_bessel_overflow_points_to_the_log_form():
    with pytest.raises(BesselRangeError):
        bessel_i(0, 1e4)

    assert math.isfinite(log_bessel_i(0, 1e4))


def test_log_bessel_matches_direct_value_and_small_argument_series():
    assert log_bessel_i(1.5, 3.0) == pytest.approx(math.log(bessel_i(1.5, 3.0)), rel=1e-12)
    # I_v(x) ≈ (x/2)^v / Γ(v+1) for small x
    expected = 400 * math.log(1e-3 / 2) - math.lgamma(401)
    assert log_bessel_i(400, 1e-3) == pytest.approx(expected, rel=1e-8)


def test_bessel_rejects_negative_inputs():
    with pytest.raises(ArgumentError):
        bessel_i(-1, 1.0)
    with pytest.raises(ArgumentError):
        log_bessel_i(1, -1.0)


def test_bessel_ratio_limits():
    assert bessel_ratio(0.5, 0.0) == 0.0
    assert 0 < bessel_ratio(0.5, 10.0) < 1
    assert bessel_ratio(0.5, 1e4) == pytest.approx(1.0, abs=1e-3)


def test_thread_count_reads_the_environment(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert thread_count() == 1

    monkeypatch.setenv(THREADS_ENV, '4')
    assert thread_count() == 4

    monkeypatch.setenv(THREADS_ENV, 'many')
    assert thread_count() == 1


def test_ordered_map_output_does_not_depend_on_threads(monkeypatch):
    def chunk_sum(lo: int, hi: int) -> float:
        return float(np.arange(lo, hi).sum())

    monkeypatch.setenv(THREADS_ENV, '1')
    serial = ordered_map(chunk_sum, 5_000)
    monkeypatch.setenv(THREADS_ENV, '4')
    parallel = ordered_map(chunk_sum, 5_000)

    assert serial == parallel
    assert sum(serial) == sum(range(5_000))

import math

import numpy as np
import pytest

from ilmart import Dataset, compute_lambdas, ndcg_swap_deltas

from synthdata import random_queries


def swap_oracle(labels, scores, truncation):
    """Independent oracle: for every document pair, directly compute the
    NDCG of the current ranking and of the ranking with the two documents'
    positions exchanged; the delta is their absolute difference."""
    n = len(labels)
    order = sorted(range(n), key=lambda i: (-scores[i], i))

    def dcg(o):
        return sum(
            (2 ** labels[d] - 1) / math.log2(r + 2)
            for r, d in enumerate(o)
            if r < truncation
        )

    ideal = dcg(sorted(range(n), key=lambda i: -labels[i]))
    deltas = np.zeros((n, n))
    if ideal == 0:
        return deltas
    base = dcg(order)
    for i in range(n):
        for j in range(n):
            swapped = list(order)
            pi, pj = swapped.index(i), swapped.index(j)
            swapped[pi], swapped[pj] = swapped[pj], swapped[pi]
            deltas[i, j] = abs(dcg(swapped) - base) / ideal
    return deltas


def two_doc_query(labels, scores):
    return Dataset.from_rows(labels, ["q"] * len(labels), np.zeros((len(labels), 1)))


def test_two_document_closed_form():
    # rho = 1/2 at equal scores; |dZ| = 1 - 1/log2(3); ideal DCG = 1.
    ds = two_doc_query([1, 0], [0.0, 0.0])
    out = compute_lambdas(np.array([0.0, 0.0]), ds, sigma=1.0, truncation=2)
    expected_grad = 0.5 * (1.0 - 1.0 / math.log2(3))
    expected_hess = 0.25 * (1.0 - 1.0 / math.log2(3))
    assert out.gradient[0] == pytest.approx(expected_grad, abs=1e-12)
    assert out.gradient[1] == pytest.approx(-expected_grad, abs=1e-12)
    assert out.hessian[0] == pytest.approx(expected_hess, abs=1e-12)
    assert out.hessian[1] == pytest.approx(expected_hess, abs=1e-12)


def test_equal_labels_give_zero_gradients():
    ds = two_doc_query([2, 2, 2], [0.1, 0.5, -0.3])
    out = compute_lambdas(np.array([0.1, 0.5, -0.3]), ds)
    assert np.all(out.gradient == 0)
    assert np.all(out.hessian == 0)


def test_sigma_scaling_at_equal_scores():
    ds = two_doc_query([1, 0], [0.0, 0.0])
    one = compute_lambdas(np.zeros(2), ds, sigma=1.0, truncation=2)
    two = compute_lambdas(np.zeros(2), ds, sigma=2.0, truncation=2)
    np.testing.assert_allclose(two.gradient, 2.0 * one.gradient, atol=1e-14)
    np.testing.assert_allclose(two.hessian, 4.0 * one.hessian, atol=1e-14)


def test_sign_correctness_for_misordered_pair():
    ds = two_doc_query([1, 0], [0.0, 0.0])
    out = compute_lambdas(np.array([-1.0, 1.0]), ds, sigma=1.0, truncation=2)
    assert out.gradient[0] > 0
    assert out.gradient[1] < 0


def test_zero_sum_per_query():
    ds = random_queries(50, 8, seed=17)
    rng = np.random.default_rng(4)
    scores = rng.normal(size=ds.num_rows)
    out = compute_lambdas(scores, ds, sigma=1.3, truncation=5)
    for rows in ds.query_groups:
        assert abs(out.gradient[rows].sum()) <= 1e-10
        assert np.all(out.hessian[rows] >= 0)


def test_swap_deltas_match_direct_ndcg_differences():
    rng = np.random.default_rng(23)
    for _ in range(60):
        n = int(rng.integers(2, 6))
        labels = rng.integers(0, 5, n).tolist()
        scores = rng.normal(size=n)
        truncation = int(rng.integers(1, 7))
        got = ndcg_swap_deltas(labels, scores, truncation)
        want = swap_oracle(labels, scores.tolist(), truncation)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_truncation_limits_contributing_positions():
    # Both documents beyond the cutoff: swapping them cannot change NDCG@1.
    labels = [0, 1, 0]
    scores = np.array([3.0, 1.0, 2.0])
    ds = Dataset.from_rows(labels, ["q"] * 3, np.zeros((3, 1)))
    out = compute_lambdas(scores, ds, sigma=1.0, truncation=1)
    # doc1 (label 1, rank 3) vs doc2 (label 0, rank 2): both outside top-1
    assert ndcg_swap_deltas(labels, scores, 1)[1, 2] == 0.0
    # but doc1 vs doc0 (rank 1) does matter
    assert ndcg_swap_deltas(labels, scores, 1)[1, 0] > 0.0
    assert out.gradient[1] > 0


def test_non_finite_scores_rejected():
    ds = two_doc_query([1, 0], [0.0, 0.0])
    with pytest.raises(ValueError, match="non-finite"):
        compute_lambdas(np.array([np.nan, 0.0]), ds)
    with pytest.raises(ValueError):
        compute_lambdas(np.array([np.inf, 0.0]), ds)


def test_parameter_validation():
    ds = two_doc_query([1, 0], [0.0, 0.0])
    with pytest.raises(ValueError):
        compute_lambdas(np.zeros(2), ds, sigma=0.0)
    with pytest.raises(ValueError):
        compute_lambdas(np.zeros(2), ds, truncation=0)
    with pytest.raises(ValueError):
        compute_lambdas(np.zeros(3), ds)


def test_saturated_scores_stay_finite():
    ds = two_doc_query([1, 0], [0.0, 0.0])
    out = compute_lambdas(np.array([-900.0, 900.0]), ds, sigma=1.0, truncation=2)
    assert np.all(np.isfinite(out.gradient))
    assert np.all(np.isfinite(out.hessian))
    assert out.gradient[0] > 0

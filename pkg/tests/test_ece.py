import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calbound import PredictionSet, ValidationError
from calbound.ece import (
    assign_bin_1d,
    assign_bins_1d,
    ece_full_k,
    ece_gap,
    ece_partial_k,
    ece_top_label,
    ece_top_label_reformulated,
    optimal_bins_1d,
    optimal_bins_per_dim,
)
from tests.conftest import random_prediction_set


def binary_set(confidences, hits):
    probs = np.array([[c, 1.0 - c] for c in confidences])
    labels = np.array([0 if h else 1 for h in hits])
    return PredictionSet.from_probs(probs, labels)


def test_bin_assignment_is_right_closed():
    assert assign_bin_1d(0.5, 2) == 1
    assert assign_bin_1d(0.500001, 2) == 2
    assert assign_bin_1d(0.0, 4) == 1
    assert assign_bin_1d(1.0, 4) == 4
    with pytest.raises(ValidationError):
        assign_bin_1d(1.0001, 4)


def test_bin_assignment_vector_matches_scalar(gen):
    vals = gen.uniform(size=200)
    b = 13
    vec = assign_bins_1d(vals, b)
    assert vec.tolist() == [assign_bin_1d(float(v), b) for v in vals]


def test_bin_edges_exact_on_boundaries():
    # p = i/B lands in bin i, the next float up lands in bin i+1
    b = 10
    for i in range(1, b):
        edge = i / b
        assert assign_bin_1d(edge, b) == i
        assert assign_bin_1d(np.nextafter(edge, 1.0), b) == i + 1


def test_ece_top_label_hand_example():
    ps = binary_set([0.9, 0.6, 0.7, 0.55], [1, 0, 1, 1])
    assert ece_top_label(ps, 2) == pytest.approx(0.0625, abs=1e-15)
    assert ece_top_label_reformulated(ps, 2) == pytest.approx(0.0625, abs=1e-15)


def test_ece_zero_for_perfect_one_hot():
    probs = np.eye(3)[[0, 1, 2, 1]]
    ps = PredictionSet.from_probs(probs, [0, 1, 2, 1])
    for b in (1, 4, 17):
        assert ece_top_label(ps, b) == 0.0


def test_ece_single_sample_is_absolute_gap():
    ps = binary_set([0.8], [0])
    assert ece_top_label(ps, 1) == pytest.approx(0.8, abs=1e-15)


def test_ece_with_one_bin_is_mean_gap(gen):
    ps = random_prediction_set(gen, 500, 4)
    expect = abs(ps.top_confidences().mean() - ps.top_hits().mean())
    assert ece_top_label(ps, 1) == pytest.approx(expect, abs=1e-12)


def test_ece_invariant_under_permutation_and_duplication(gen):
    ps = random_prediction_set(gen, 100, 3)
    perm = gen.permutation(100)
    shuffled = ps.subset(perm)
    doubled = PredictionSet.from_probs(
        np.vstack([ps.probs, ps.probs]), np.concatenate([ps.labels, ps.labels])
    )
    for b in (1, 7, 12):
        val = ece_top_label(ps, b)
        assert ece_top_label(shuffled, b) == pytest.approx(val, abs=1e-12)
        assert ece_top_label(doubled, b) == pytest.approx(val, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(2, 5))
def test_reformulated_matches_definitional(seed, bins, k):
    gen = np.random.default_rng(seed)
    ps = random_prediction_set(gen, int(gen.integers(1, 200)), k)
    a = ece_top_label(ps, bins)
    b = ece_top_label_reformulated(ps, bins)
    assert abs(a - b) < 1e-12
    assert 0.0 <= a <= 1.0


def test_full_k_hand_example():
    ps = PredictionSet.from_probs([[0.7, 0.3], [0.4, 0.6]], [0, 1])
    assert ece_full_k(ps, 1) == pytest.approx(0.1, abs=1e-12)


def test_full_k_single_cell_equals_mean_residual_norm(gen):
    ps = random_prediction_set(gen, 300, 3)
    expect = np.abs((ps.one_hot_labels() - ps.probs).mean(axis=0)).sum()
    assert ece_full_k(ps, 1) == pytest.approx(expect, abs=1e-12)


def test_full_k_zero_for_perfect_one_hot():
    probs = np.eye(4)[[0, 3, 1, 2]]
    ps = PredictionSet.from_probs(probs, [0, 3, 1, 2])
    assert ece_full_k(ps, 6) == 0.0


def test_full_k_bounded_by_simplex_diameter(gen):
    for _ in range(20):
        ps = random_prediction_set(gen, int(gen.integers(2, 80)), int(gen.integers(2, 5)))
        assert 0.0 <= ece_full_k(ps, int(gen.integers(1, 8))) <= 2.0


def test_full_k_rejects_huge_cell_space(gen):
    ps = random_prediction_set(gen, 10, 5)
    with pytest.raises(ValidationError):
        ece_full_k(ps, 2000)  # 2000^5 > 2^48


def test_partial_k_full_subset_degenerates(gen):
    ps = random_prediction_set(gen, 200, 3)
    for b in (1, 3):
        assert ece_partial_k(ps, [0, 1, 2], b) == pytest.approx(
            ece_full_k(ps, b), abs=1e-12
        )


def test_partial_k_three_class_hand_example():
    probs = np.array([[0.5, 0.3, 0.2], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]])
    ps = PredictionSet.from_probs(probs, [0, 1, 2])
    f = probs[:, :2]
    e = np.array([[1, 0], [0, 1], [0, 0]], dtype=float)
    expect = np.abs((e - f).mean(axis=0)).sum()
    assert ece_partial_k(ps, [0, 1], 1) == pytest.approx(expect, abs=1e-12)


def test_partial_k_differs_from_top_label():
    # fixed-class restriction is not the argmax view once the argmax varies
    ps = PredictionSet.from_probs([[0.8, 0.2], [0.3, 0.7]], [0, 1])
    assert ece_partial_k(ps, [0], 1) != pytest.approx(ece_top_label(ps, 1), abs=1e-6)


def test_partial_k_rejects_bad_subsets(gen):
    ps = random_prediction_set(gen, 20, 3)
    for subset in ([], [0, 0], [3], [-1]):
        with pytest.raises(ValidationError):
            ece_partial_k(ps, subset, 2)


def test_optimal_bins_integer_exact():
    assert optimal_bins_1d(1000) == 10
    assert optimal_bins_1d(999) == 9
    assert optimal_bins_1d(8) == 2
    assert optimal_bins_1d(1) == 1
    assert optimal_bins_per_dim(1024, 2) == 5
    assert optimal_bins_per_dim(1, 9) == 1
    assert optimal_bins_per_dim(10**5, 3) == 10


def test_optimal_bins_exact_at_large_perfect_powers():
    # float cube roots drift below the integer at this scale; integer search must not
    for m in (10, 100, 1234):
        assert optimal_bins_1d(m**3) == m
        assert optimal_bins_1d(m**3 - 1) == m - 1


def test_ece_gap_examples(gen):
    a = binary_set([0.9, 0.6, 0.7, 0.55], [1, 0, 1, 1])
    b = binary_set([1.0, 1.0], [1, 1])
    assert ece_gap(a, a, 2) == 0.0
    assert ece_gap(a, b, 2) == pytest.approx(0.0625, abs=1e-12)
    assert ece_gap(a, b, 2) == ece_gap(b, a, 2)
    three = random_prediction_set(gen, 10, 3)
    with pytest.raises(ValidationError):
        ece_gap(a, three, 2)

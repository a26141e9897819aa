import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import i0

from sparsesig import budget
from sparsesig.oracle import (anagram_sum_oracle, chen_table, coefficient_chen, count_multiset_permutations,
                              multiset_permutations, truncated_kernel, truncated_signature)
from sparsesig.paths import PathError, PiecewiseLinearPath, axis_path, concatenate, generate_path


def test_axis_path_signature_selects_ordered_word():
    z = axis_path(3)
    sig = truncated_signature(z, 3)
    assert sig[(1, 2, 3)] == 1.0
    for word in multiset_permutations((1, 2, 3)):
        if word != (1, 2, 3):
            assert sig[word] == 0.0
    assert sig[(1, 1)] == 0.5


def test_linear_path_levels_are_tensor_powers():
    a = np.array([0.3, -1.2])
    x = PiecewiseLinearPath(np.vstack([np.zeros(2), a]))
    sig = truncated_signature(x, 4)
    for k in range(5):
        expect = a
        for _ in range(k - 1):
            expect = np.multiply.outer(expect, a)
        if k == 0:
            expect = np.ones(())
        np.testing.assert_allclose(sig.level(k), expect / math.factorial(k), rtol=1e-14)


def test_dense_and_chen_agree(small_path):
    sig = truncated_signature(small_path, 4)
    for word in [(1,), (2, 3), (3, 1, 2), (1, 1, 2, 3), (2, 2, 2, 2)]:
        assert coefficient_chen(small_path, word) == pytest.approx(sig[word], rel=1e-12, abs=1e-15)


def test_chen_identity_on_concatenation():
    x = generate_path("random-uniform", 6, 2, seed=2)
    y = generate_path("random-uniform", 4, 2, seed=3)
    lhs = truncated_signature(concatenate(x, y), 4)
    rhs = truncated_signature(x, 4) * truncated_signature(y, 4)
    for k in range(5):
        np.testing.assert_allclose(lhs.levels[k], rhs.levels[k], rtol=1e-12, atol=1e-14)


def test_prefix_table_matches_prefix_paths(small_path):
    idx = (1, 3, 2)
    table = chen_table(small_path, idx)
    for k in (1, 5, 12):
        for m in (1, 2, 3):
            assert table.coefficient(m, k) == pytest.approx(
                coefficient_chen(small_path.prefix(k), idx[:m]), rel=1e-12, abs=1e-15)
    assert coefficient_chen(small_path, idx, 5 / 12) == table.coefficient(3, 5)
    with pytest.raises(PathError):
        coefficient_chen(small_path, idx, 0.3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.integers(1, 8))
def test_shuffle_product_of_letters(seed, L):
    x = generate_path("random-uniform", L, 2, seed=seed)
    lhs = coefficient_chen(x, (1,)) * coefficient_chen(x, (2,))
    assert lhs == pytest.approx(coefficient_chen(x, (1, 2)) + coefficient_chen(x, (2, 1)), abs=1e-13)


def test_truncated_kernel_of_unit_lines_is_bessel_series():
    x = PiecewiseLinearPath(np.array([[0.0], [1.0]]))
    assert truncated_kernel(x, x, 20) == pytest.approx(i0(2.0), abs=1e-14)


def test_multiset_permutations():
    words = list(multiset_permutations((2, 1, 2)))
    assert words == [(1, 2, 2), (2, 1, 2), (2, 2, 1)]
    assert count_multiset_permutations((1, 1, 2, 2, 3)) == 30
    assert len(set(multiset_permutations((1, 1, 2, 2, 3)))) == 30


def test_anagram_sum_of_distinct_letters_is_product_of_increments(small_path):
    # summing all orderings of distinct letters gives the product of level-one terms
    inc = small_path.points[-1] - small_path.points[0]
    assert anagram_sum_oracle(small_path, (1, 2, 3)) == pytest.approx(np.prod(inc), rel=1e-12)


def test_budget_guards(monkeypatch, small_path):
    monkeypatch.setenv("SPARSESIG_MAX_PERMUTATIONS", "5")
    with pytest.raises(budget.BudgetExceeded):
        anagram_sum_oracle(small_path, (1, 2, 3))
    monkeypatch.setenv("SPARSESIG_MAX_TENSOR_ELEMENTS", "10")
    with pytest.raises(budget.BudgetExceeded):
        truncated_signature(small_path, 3)

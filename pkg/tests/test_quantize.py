import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from bihalf.quantize import (
    BernoulliPrior,
    CapacityError,
    activation_entropy,
    irnet_binarize,
    ot_binarize,
    ot_binarize_rows,
    positive_count,
    sign_binarize,
    transport_cost,
    wasserstein_oracle,
    weight_entropy,
)
from bihalf.tensor import make_rng

finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False, width=64)


class TestPrior:
    def test_neg_is_complement(self):
        assert BernoulliPrior(0.3).p_neg == pytest.approx(0.7)

    @pytest.mark.parametrize("p", [-0.1, 1.1])
    def test_range(self, p):
        with pytest.raises(ValueError):
            BernoulliPrior(p)


class TestPositiveCount:
    @pytest.mark.parametrize("p,D,k", [(0.5, 64, 32), (1.0, 5, 5), (0.3, 10, 3),
                                       (0.5, 9, 5), (0.25, 2, 1), (0.0, 7, 0), (0.5, 0, 0)])
    def test_examples(self, p, D, k):
        assert positive_count(p, D) == k

    @given(st.integers(0, 500).map(lambda n: 2 * n))
    def test_half_of_even_is_exact(self, D):
        assert positive_count(0.5, D) == D // 2


class TestOtBinarize:
    def test_example(self):
        np.testing.assert_array_equal(ot_binarize([0.3, -0.1, 0.5, -0.7], 0.5), [1, -1, 1, -1])

    def test_all_positive(self):
        np.testing.assert_array_equal(ot_binarize([-3.0, -2.0, -1.0], 1.0), [1, 1, 1])

    def test_masked_example(self):
        B = ot_binarize([0.2, -0.4, 0.6, -0.8, 0.1, 0.9], 0.5, [1, 1, 0, 0, 1, 1])
        np.testing.assert_array_equal(B, [1, -1, 0, 0, -1, 1])

    def test_ties_prefer_lower_index(self):
        np.testing.assert_array_equal(ot_binarize([1.0, 1.0, 1.0, 1.0], 0.5), [1, 1, -1, -1])

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            ot_binarize([1.0, 2.0], 0.5, [0, 0])

    def test_rows_match_single(self):
        rng = make_rng(0)
        W = rng.standard_normal((7, 10))
        M = rng.random((7, 10)) < 0.7
        M[:, 0] = True
        rows = ot_binarize_rows(W, 0.3, M)
        for i in range(7):
            np.testing.assert_array_equal(rows[i], ot_binarize(W[i], 0.3, M[i]))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=finite),
           st.floats(0, 1), st.data())
    def test_exact_ratio(self, W, p, data):
        M = np.array(data.draw(st.lists(st.booleans(), min_size=W.size, max_size=W.size)))
        if not M.any():
            M[0] = True
        B = ot_binarize(W, p, M)
        assert (B > 0).sum() == positive_count(p, int(M.sum()))
        assert (B == 0).sum() == W.size - M.sum()

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20).map(lambda n: 2 * n), elements=finite))
    def test_bihalf_zero_sum(self, W):
        assert ot_binarize(W, 0.5).sum() == 0

    @pytest.mark.parametrize("f", [lambda x: x ** 3 + 5 * x, np.exp])
    def test_rank_invariance(self, f):
        rng = make_rng(1)
        for _ in range(200):
            W = rng.uniform(-2, 2, rng.integers(2, 30))
            for p in (0.25, 0.5, 0.8):
                np.testing.assert_array_equal(ot_binarize(f(W), p), ot_binarize(W, p))

    def test_masked_equals_binarize_survivors(self):
        rng = make_rng(2)
        for _ in range(300):
            D = int(rng.integers(2, 25))
            W = rng.standard_normal(D)
            M = rng.random(D) < 0.6
            M[rng.integers(D)] = True
            p = float(rng.choice([0.2, 0.5, 0.7]))
            direct = ot_binarize(W, p, M)
            later = np.zeros(D)
            later[M] = ot_binarize(W[M], p)
            np.testing.assert_array_equal(direct, later)


def _lp_wasserstein(W, p_pos):
    """Independent oracle: solve the discrete OT linear programme directly."""
    D = len(W)
    targets = np.array([-1.0, 1.0])
    C = np.abs(W[:, None] - targets[None, :]).ravel()
    A_eq, b_eq = [], []
    for i in range(D):
        row = np.zeros(2 * D)
        row[2 * i:2 * i + 2] = 1
        A_eq.append(row)
        b_eq.append(1.0 / D)
    for j, q in enumerate((1 - p_pos, p_pos)):
        row = np.zeros(2 * D)
        row[j::2] = 1
        A_eq.append(row)
        b_eq.append(q)
    res = linprog(C, A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs")
    return res.fun


class TestOracle:
    def test_example_matches(self):
        W = np.array([0.3, -0.1, 0.5, -0.7])
        cost, winners = wasserstein_oracle(W, 0.5)
        assert any((w == ot_binarize(W, 0.5)).all() for w in winners)
        assert transport_cost(W, ot_binarize(W, 0.5)) == cost

    def test_tie_inside_top_group_is_unique(self):
        _, winners = wasserstein_oracle([1.0, 1.0, -1.0, -1.0], 0.5)
        assert len(winners) == 1

    def test_two_elements(self):
        cost, winners = wasserstein_oracle([0.4, -0.2], 0.5)
        assert len(winners) == 1
        np.testing.assert_array_equal(winners[0], [1, -1])

    def test_tie_has_several_minimisers(self):
        # the tie straddles the cut between the top half and the rest
        W = np.array([1.0, 0.0, 0.0, -1.0])
        cost, winners = wasserstein_oracle(W, 0.5)
        assert len(winners) >= 2
        assert any((w == ot_binarize(W, 0.5)).all() for w in winners)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            wasserstein_oracle(np.zeros(17), 0.5)

    def test_closed_form_attains_minimum(self):
        rng = make_rng(3)
        for _ in range(300):
            D = int(rng.integers(2, 13))
            W = rng.standard_normal(D) * rng.choice([0.3, 1.0, 3.0])
            p = float(rng.choice([0.25, 0.5, 0.75]))
            cost, winners = wasserstein_oracle(W, p)
            assert transport_cost(W, ot_binarize(W, p)) == cost

    def test_brute_force_agrees_with_linear_programme(self):
        # with p*D integral the optimal coupling is an assignment
        rng = make_rng(4)
        for D in (2, 4, 6, 8):
            for _ in range(10):
                W = rng.standard_normal(D) * 2
                cost, _ = wasserstein_oracle(W, 0.5)
                assert cost == pytest.approx(_lp_wasserstein(W, 0.5), abs=1e-9)

    def test_enumerates_every_assignment(self):
        W = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        # all |w| < 1: cost(+1) - cost(-1) = -2w, so the top-k set is the unique optimum
        _, winners = wasserstein_oracle(W, 0.4)
        assert len(winners) == 1
        assert math.comb(5, 2) == len(list(combinations(range(5), 2)))


class TestBaselines:
    def test_sign(self):
        np.testing.assert_array_equal(sign_binarize([0.3, -0.1]), [1, -1])
        np.testing.assert_array_equal(sign_binarize([0.0, 0.0]), [1, 1])
        np.testing.assert_array_equal(sign_binarize([-2, 3, 5]), [-1, 1, 1])

    def test_irnet(self):
        np.testing.assert_array_equal(irnet_binarize([1, 2, 3, 4]), [-1, -1, 1, 1])
        np.testing.assert_array_equal(irnet_binarize([-2.5, 2.5]), [-1, 1])
        np.testing.assert_array_equal(irnet_binarize([5, 5, 5, 1]), [1, 1, 1, -1])

    def test_irnet_constant_filter(self):
        np.testing.assert_array_equal(irnet_binarize([2.0, 2.0, 2.0]), [1, 1, 1])

    def test_irnet_too_short(self):
        with pytest.raises(ValueError):
            irnet_binarize([1.0])


class TestEntropy:
    def test_balanced(self):
        assert weight_entropy(ot_binarize(make_rng(0).standard_normal(64), 0.5)) == 1.0

    def test_all_positive(self):
        assert weight_entropy(np.ones(8)) == 0.0

    def test_three_quarters(self):
        assert weight_entropy([1, 1, 1, -1]) == pytest.approx(0.8113, abs=1e-4)

    def test_zeros_excluded(self):
        assert weight_entropy([1, -1, 0, 0, 0]) == 1.0
        with pytest.raises(ValueError):
            weight_entropy([0, 0])

    def test_activation_entropy(self):
        A = np.ones((10, 3, 2, 2))
        A[:, 1] = -1
        A[:5, 1] = 1
        c2 = -np.ones(40)
        c2[:36] = 1  # p = 0.9
        A[:, 2] = c2.reshape(10, 2, 2)
        H = activation_entropy(A)
        np.testing.assert_allclose(H, [0.0, 1.0, 0.4690], atol=1e-4)

    def test_bihalf_is_max_and_baselines_fall_short(self):
        rng = make_rng(5)
        for _ in range(100):
            W = rng.standard_normal(2 * int(rng.integers(1, 40)))
            assert weight_entropy(ot_binarize(W, 0.5)) == 1.0
        W = np.array([5.0, 5.0, 5.0, 1.0])
        assert weight_entropy(irnet_binarize(W)) < 1.0
        assert weight_entropy(sign_binarize(W)) < 1.0

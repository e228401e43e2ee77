"""Unit tests for the max-weight assignment solver."""

from __future__ import annotations

import numpy as np
import pytest

from stereofish.assignment import Matching, WeightMatrix, solve_max_weight
from stereofish.errors import DataError, TooLarge
from stereofish.synthetic import brute_force_assignment


def _random_instance(rng, max_side=7, forbid_frac=None):
    rows = int(rng.integers(1, max_side + 1))
    cols = int(rng.integers(1, max_side + 1))
    weights = rng.uniform(-10, 10, (rows, cols))
    frac = rng.uniform(0, 0.4) if forbid_frac is None else forbid_frac
    forbidden = rng.uniform(size=(rows, cols)) < frac
    return WeightMatrix(rows, cols, weights, forbidden)


class TestSolveMaxWeight:
    def test_two_by_two(self):
        m = WeightMatrix.from_dense([[1.0, 2.0], [2.0, 1.0]])
        res = solve_max_weight(m)
        assert res.pairs == ((0, 1), (1, 0))
        assert res.objective == pytest.approx(4.0)

    def test_single_forbidden_cell(self):
        m = WeightMatrix(1, 1, np.array([[5.0]]), np.array([[True]]))
        res = solve_max_weight(m)
        assert res.pairs == ()
        assert res.objective == 0.0

    def test_empty(self):
        assert solve_max_weight(WeightMatrix.from_dense([])) == Matching((), 0.0)

    def test_against_oracle(self):
        rng = np.random.default_rng(101)
        for _ in range(300):
            m = _random_instance(rng)
            got = solve_max_weight(m)
            want = brute_force_assignment(m)
            assert got.pairs == want.pairs
            assert got.objective == pytest.approx(want.objective, abs=1e-9)

    def test_integer_ties_lexicographic(self):
        m = WeightMatrix.from_dense(np.ones((3, 3)))
        res = solve_max_weight(m)
        assert res.pairs == ((0, 0), (1, 1), (2, 2))
        m = WeightMatrix.from_dense([[1.0, 2.0], [0.0, 1.0]])
        # both cardinality-2 matchings score 2; the diagonal is lex-smaller
        res = solve_max_weight(m)
        assert res.pairs == ((0, 0), (1, 1))
        assert brute_force_assignment(m).pairs == res.pairs

    def test_permutation_invariance(self):
        rng = np.random.default_rng(61)
        m = _random_instance(rng, max_side=6, forbid_frac=0.2)
        base = solve_max_weight(m)
        pr = rng.permutation(m.rows)
        pc = rng.permutation(m.cols)
        permuted = WeightMatrix(
            m.rows, m.cols, m.weights[np.ix_(pr, pc)], m.forbidden[np.ix_(pr, pc)]
        )
        res = solve_max_weight(permuted)
        assert res.objective == pytest.approx(base.objective, abs=1e-9)
        mapped = sorted(
            (int(np.where(pr == r)[0][0]), int(np.where(pc == c)[0][0]))
            for r, c in base.pairs
        )
        assert list(res.pairs) == mapped

    def test_constant_shift(self):
        """Adding c to every cell of a square all-allowed instance adds n*c."""
        rng = np.random.default_rng(67)
        w = rng.uniform(0, 1, (5, 5))
        base = solve_max_weight(WeightMatrix.from_dense(w))
        shifted = solve_max_weight(WeightMatrix.from_dense(w + 3.25))
        assert shifted.objective == pytest.approx(base.objective + 5 * 3.25, abs=1e-9)
        assert shifted.pairs == base.pairs

    def test_deterministic(self):
        rng = np.random.default_rng(71)
        m = _random_instance(rng, max_side=7)
        assert solve_max_weight(m) == solve_max_weight(m)

    def test_rejects_nonfinite_allowed_weights(self):
        with pytest.raises(DataError):
            WeightMatrix.from_dense([[np.nan]])

    def test_nonfinite_ok_when_forbidden(self):
        m = WeightMatrix(1, 2, np.array([[np.inf, 1.0]]), np.array([[True, False]]))
        assert solve_max_weight(m).pairs == ((0, 1),)


class TestBruteForce:
    def test_too_large(self):
        with pytest.raises(TooLarge):
            brute_force_assignment(WeightMatrix.from_dense(np.zeros((9, 9))))

    def test_prefers_cardinality_over_weight(self):
        # matching both rows scores -1 total but beats the single +5 edge
        m = WeightMatrix(
            2,
            2,
            np.array([[5.0, -3.0], [-3.0, -100.0]]),
            np.array([[False, False], [False, True]]),
        )
        res = brute_force_assignment(m)
        assert res.pairs == ((0, 1), (1, 0))
        assert solve_max_weight(m).pairs == res.pairs

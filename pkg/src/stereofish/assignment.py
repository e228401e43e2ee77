"""Rectangular max-weight linear assignment with forbidden edges.

Used by stereo pairing, the tracking cascade, and track fusion. The solver
maximizes cardinality first, then total weight, and breaks remaining ties by
returning the lexicographically smallest pair list among the optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError

# Cell-count bound under which the lexicographic tie-break refinement runs.
# Above it ties are vanishingly unlikely for float weights and the plain
# (still deterministic) solver output is returned.
LEX_REFINE_MAX_CELLS = 4096


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """A rows x cols weight matrix with a boolean mask of forbidden cells."""

    rows: int
    cols: int
    weights: np.ndarray
    forbidden: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float).reshape(self.rows, self.cols)
        f = np.array(self.forbidden, dtype=bool).reshape(self.rows, self.cols)
        if not np.isfinite(w[~f]).all():
            raise DataError("allowed cells must hold finite weights")
        w.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "forbidden", f)

    @classmethod
    def from_dense(cls, weights, forbidden=None) -> "WeightMatrix":
        w = np.atleast_2d(np.array(weights, dtype=float))
        if w.size == 0:
            w = w.reshape(0, 0)
        f = np.zeros(w.shape, dtype=bool) if forbidden is None else forbidden
        return cls(w.shape[0], w.shape[1], w, f)


@dataclass(frozen=True)
class Matching:
    """Matched (row, col) pairs, sorted by row, plus the summed weight."""

    pairs: tuple[tuple[int, int], ...]
    objective: float


def _score_matrix(m: WeightMatrix) -> tuple[np.ndarray, float]:
    """Square score matrix where every allowed real cell carries w + bonus.

    The cardinality bonus exceeds twice the total absolute weight, so any
    higher-cardinality matching always scores above any lower-cardinality
    one. Dummy (padding) and forbidden cells score zero: selecting them means
    "unmatched".
    """
    allowed = ~m.forbidden
    bonus = float(np.abs(m.weights[allowed]).sum()) * 2.0 + 1.0
    n = max(m.rows, m.cols)
    score = np.zeros((n, n))
    block = np.where(allowed, m.weights + bonus, 0.0)
    score[: m.rows, : m.cols] = block
    return score, bonus


def _solve_score(score: np.ndarray) -> tuple[float, dict[int, int]]:
    """Max-score square assignment; returns (total, row->col map)."""
    rr, cc = linear_sum_assignment(-score)
    total = float(score[rr, cc].sum())
    return total, dict(zip(rr.tolist(), cc.tolist()))


def _real_pairs(assign: dict[int, int], m: WeightMatrix) -> list[tuple[int, int]]:
    allowed = ~m.forbidden
    return sorted(
        (r, c)
        for r, c in assign.items()
        if r < m.rows and c < m.cols and allowed[r, c]
    )


def _lex_refine(score: np.ndarray, m: WeightMatrix, best: float, assign: dict[int, int]):
    """Fix rows in order to the smallest column that preserves optimality.

    Each trial removes the candidate pair from the square score matrix and
    re-solves the remainder; equality with the optimum is tested against the
    float-accumulation bound of the score sums.
    """
    n = score.shape[0]
    tol = max(1e-12, abs(best) * 1e-14 * max(n, 8))
    allowed = ~m.forbidden
    fixed: list[tuple[int, int]] = []
    fixed_score = 0.0
    free_rows = list(range(n))
    free_cols = list(range(n))
    current = dict(assign)

    for r in range(m.rows):
        cur_col = current.get(r)
        if cur_col is not None and not (cur_col < m.cols and allowed[r, cur_col]):
            cur_col = None  # matched to padding/forbidden = effectively unmatched
        limit = cur_col if cur_col is not None else m.cols
        candidates = [c for c in free_cols if c < min(limit, m.cols) and allowed[r, c]]
        chosen = cur_col
        sub_rows = [x for x in free_rows if x != r]
        for c in candidates:
            sub_cols = [x for x in free_cols if x != c]
            sub = score[np.ix_(sub_rows, sub_cols)]
            sub_total, sub_assign = _solve_score(sub)
            total = fixed_score + score[r, c] + sub_total
            if abs(total - best) <= tol:
                chosen = c
                current = {
                    sub_rows[i]: sub_cols[j] for i, j in sub_assign.items()
                }
                break
        if chosen is None:
            # row r provably unmatched in every optimum; leave it in place as
            # a dummy participant for the remaining sub-solves
            current.pop(r, None)
            continue
        fixed.append((r, chosen))
        fixed_score += score[r, chosen]
        free_rows.remove(r)
        free_cols.remove(chosen)
        current.pop(r, None)
    return fixed


def solve_max_weight(m: WeightMatrix) -> Matching:
    """Maximum-cardinality, maximum-weight matching on allowed cells.

    Empty inputs yield an empty matching. Among optimal matchings the
    lexicographically smallest pair list is returned (guaranteed for
    instances up to LEX_REFINE_MAX_CELLS cells).
    """
    if m.rows == 0 or m.cols == 0:
        return Matching((), 0.0)
    score, _ = _score_matrix(m)
    best, assign = _solve_score(score)
    if m.rows * m.cols <= LEX_REFINE_MAX_CELLS:
        pairs = sorted(_lex_refine(score, m, best, assign))
    else:
        pairs = _real_pairs(assign, m)
    objective = float(sum(m.weights[r, c] for r, c in pairs))
    return Matching(tuple(pairs), objective)

"""Similarity matrices, single-best-match precision/recall curves and AUC grids."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptors import METRICS, DescriptorSet
from .errors import (
    BadConfigError,
    BadDimensionsError,
    BadGroundTruthError,
    BlurBenchError,
    EmptyCurveError,
    NoGroundTruthError,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    scores: np.ndarray
    metric: str

    @property
    def shape(self):
        return self.scores.shape


def _as_matrix(x):
    if isinstance(x, DescriptorSet):
        return x.vectors.astype(np.float64)
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def similarity_matrix(q, r, metric: str = "neg_mad") -> SimilarityMatrix:
    """``scores[i, j] = similarity(q_i, r_j)`` for two descriptor sets."""
    Q, R = _as_matrix(q), _as_matrix(r)
    if Q.shape[1] != R.shape[1]:
        raise BadDimensionsError(f"query dim {Q.shape[1]} != reference dim {R.shape[1]}")
    if metric == "cosine":
        def unit(m):
            n = np.linalg.norm(m, axis=1, keepdims=True)
            return np.divide(m, n, out=np.zeros_like(m), where=n > 0)
        scores = np.clip(unit(Q) @ unit(R).T, -1.0, 1.0)
    elif metric == "neg_mad":
        scores = np.empty((Q.shape[0], R.shape[0]))
        # chunk rows to bound the (rows, |R|, d) temporary
        step = max(1, int(2**24 // max(1, R.size)))
        for s in range(0, Q.shape[0], step):
            scores[s:s + step] = -np.abs(Q[s:s + step, None, :] - R[None, :, :]).mean(axis=2)
    else:
        raise BadConfigError(f"unknown metric {metric!r}; choose from {METRICS}")
    return SimilarityMatrix(scores, metric)


@dataclass(frozen=True, eq=False)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def __len__(self):
        return len(self.recall)


@dataclass(frozen=True)
class BestMatch:
    reference: int
    score: float
    correct: bool


def best_matches(m: SimilarityMatrix, gt) -> list[BestMatch]:
    """Row-wise argmax (ties to the lowest reference index) with correctness flags."""
    scores = m.scores
    idx = np.argmax(scores, axis=1)
    return [
        BestMatch(int(j), float(scores[i, j]), int(j) in set(gt[i]))
        for i, j in enumerate(idx)
    ]


def _check_gt(m: SimilarityMatrix, gt):
    n_q, n_r = m.scores.shape
    if len(gt) != n_q:
        raise BadGroundTruthError(f"ground truth has {len(gt)} rows for {n_q} queries")
    for i in range(n_q):
        if any(r < 0 or r >= n_r for r in gt[i]):
            raise BadGroundTruthError(f"query {i}: reference index outside [0, {n_r})")


def pr_curve(m: SimilarityMatrix, gt) -> PRCurve:
    """Sweep cutoffs over the distinct best-match scores, high to low.

    At cutoff ``t`` the accepted queries are those whose best score is
    ``>= t``; recall divides by the number of queries with any correct
    reference.
    """
    _check_gt(m, gt)
    n_pos = sum(1 for i in range(len(gt)) if len(gt[i]))
    if n_pos == 0:
        raise NoGroundTruthError("ground truth has no positives")
    best = best_matches(m, gt)
    score = np.array([b.score for b in best])
    correct = np.array([b.correct for b in best], dtype=np.int64)
    order = np.argsort(-score, kind="stable")
    s_sorted = score[order]
    tp = np.cumsum(correct[order])
    accepted = np.arange(1, len(order) + 1)
    # last position of each run of equal scores
    last = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))
    return PRCurve(
        recall=tp[last] / n_pos,
        precision=tp[last] / accepted[last],
        thresholds=s_sorted[last],
    )


def auc(curve: PRCurve) -> float:
    """Trapezoid area under the curve, starting from (0, first precision)."""
    if len(curve) == 0:
        raise EmptyCurveError("cannot integrate an empty curve")
    r = np.concatenate([[0.0], curve.recall])
    p = np.concatenate([[curve.precision[0]], curve.precision])
    area = float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2))
    return min(1.0, max(0.0, area))


@dataclass(frozen=True)
class EvalResult:
    auc: float
    best: tuple
    curve: PRCurve = field(compare=False, repr=False)


def evaluate(q, r, gt, metric: str = "neg_mad") -> EvalResult:
    m = similarity_matrix(q, r, metric)
    curve = pr_curve(m, gt)
    return EvalResult(auc(curve), tuple(best_matches(m, gt)), curve)


# --- grids -------------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    """A (VPR method, deblur method) combination plus how to fetch its descriptors.

    ``fetch(pair, level)`` returns ``(query_set, reference_set)`` or raises.
    """

    method: str
    deblur: str
    fetch: object = field(compare=False)
    metric: str = "neg_mad"


def level_column(level: int) -> str:
    return f"L{level:03d}"


def grid_header(levels) -> list[str]:
    return ["pair", "method", "deblur"] + [level_column(l) for l in levels] + ["avg", "std"]


def row_stats(values):
    """Population mean and std over the available cells."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = sum(vals) / len(vals)
    return mean, math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals))


@dataclass
class GridResult:
    levels: tuple
    rows: list = field(default_factory=list)      # (pair, method, deblur, [auc or None])
    failures: list = field(default_factory=list)  # (pair, method, deblur, level, message)
    curves: dict = field(default_factory=dict)    # (pair, method, deblur, level) -> PRCurve

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(grid_header(self.levels))
        fmt = lambda v: "" if v is None else f"{v:.4f}"
        for pair, method, deblur, values in self.rows:
            mean, std = row_stats(values)
            w.writerow([pair, method, deblur] + [fmt(v) for v in values] + [fmt(mean), fmt(std)])
        return buf.getvalue()

    def curves_json(self) -> str:
        out = []
        for (pair, method, deblur, level), c in sorted(self.curves.items()):
            out.append({
                "pair": pair, "method": method, "deblur": deblur, "level": level,
                "recall": c.recall.tolist(), "precision": c.precision.tolist(),
                "thresholds": c.thresholds.tolist(),
            })
        return json.dumps(out, indent=1) + "\n"


def evaluate_grid(pairs, levels, variants, fatal=()) -> GridResult:
    """AUC for every (pair, variant, level) cell.

    Failing cells are left empty and logged, except for exception types
    listed in ``fatal``, which propagate.
    """
    levels = tuple(levels)
    result = GridResult(levels)
    for pair in pairs:
        for v in variants:
            values = []
            for level in levels:
                try:
                    q, r = v.fetch(pair, level)
                    res = evaluate(q, r, pair.ground_truth, v.metric)
                except BlurBenchError as exc:
                    if isinstance(exc, tuple(fatal)):
                        raise
                    log.warning("cell %s/%s/%s/L%d failed: %s", pair.name, v.method, v.deblur, level, exc)
                    result.failures.append((pair.name, v.method, v.deblur, level, str(exc)))
                    values.append(None)
                    continue
                values.append(res.auc)
                result.curves[(pair.name, v.method, v.deblur, level)] = res.curve
            result.rows.append((pair.name, v.method, v.deblur, values))
    return result

"""Thresholding fused scores and measuring false-alarm / missed-detection rates.

Convention: label 1 is the legitimate sender, label 0 the impersonator, and a
packet is accepted as legitimate iff ``z >= threshold``. A false alarm rejects
a legitimate packet; a missed detection accepts an impersonator's.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyInputError, InputShapeError, MissingClassError

ATTACK_PROBABILITY = 0.5

REPORT_COLUMNS = ["scheme", "M", "alpha", "seed", "lambda", "p_fa", "p_md", "epsilon"]


@dataclass(eq=False)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.scores.shape != self.labels.shape:
            raise InputShapeError("one label per score is required")
        if self.scores.size == 0:
            raise EmptyInputError("empty score set")
        if not np.all(np.isfinite(self.scores)):
            raise InputShapeError("scores must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InputShapeError("labels must be 0 or 1")

    @property
    def alice(self):
        return self.scores[self.labels == 1]

    @property
    def eve(self):
        return self.scores[self.labels == 0]

    def require_both(self):
        if not (self.labels == 1).any() or not (self.labels == 0).any():
            raise MissingClassError("both legitimate (1) and impersonator (0) scores are needed")


def _as_set(scores, labels=None) -> ScoreSet:
    if isinstance(scores, ScoreSet):
        return scores
    return ScoreSet(scores, labels)


def compute_rates(scores, labels=None, threshold=0.5):
    """Return ``(p_fa, p_md, epsilon)`` at the given threshold."""
    s = _as_set(scores, labels)
    s.require_both()
    p_fa = float(np.mean(s.alice < threshold))
    p_md = float(np.mean(s.eve >= threshold))
    return p_fa, p_md, error_rate(p_fa, p_md)


def error_rate(p_fa, p_md, attack_probability=ATTACK_PROBABILITY):
    return (1.0 - attack_probability) * p_fa + attack_probability * p_md


def candidate_thresholds(scores) -> np.ndarray:
    """Ascending thresholds covering every distinct decision on ``scores``.

    One value below the minimum, the midpoints of consecutive distinct
    values, and one above the maximum.
    """
    u = np.unique(np.asarray(scores, dtype=float))
    mids = 0.5 * (u[:-1] + u[1:])
    # Adjacent floats can round the midpoint down onto the lower value.
    mids = np.where(mids > u[:-1], mids, u[1:])
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def _counts(s: ScoreSet, thresholds):
    """Integer counts of rejected Alice and accepted Eve scores per threshold."""
    a = np.sort(s.alice)
    e = np.sort(s.eve)
    rejected_alice = np.searchsorted(a, thresholds, side="left")
    accepted_eve = e.size - np.searchsorted(e, thresholds, side="left")
    return rejected_alice, accepted_eve


def optimize_threshold(scores, labels=None):
    """Threshold minimizing ``epsilon`` over :func:`candidate_thresholds`.

    Ties go to the smallest threshold. Returns ``(threshold, epsilon)``.
    """
    s = _as_set(scores, labels)
    s.require_both()
    cand = candidate_thresholds(s.scores)
    fa, md = _counts(s, cand)
    n_a, n_e = s.alice.size, s.eve.size
    # 2 * n_a * n_e * epsilon, exact in integers so ties are detected exactly.
    weighted = fa.astype(np.int64) * n_e + md.astype(np.int64) * n_a
    i = int(np.argmin(weighted))
    return float(cand[i]), error_rate(fa[i] / n_a, md[i] / n_e)


def threshold_for_target_fa(scores, labels=None, target_p_fa=0.01):
    """Largest candidate threshold whose empirical false-alarm rate is within target."""
    s = _as_set(scores, labels)
    if not (s.labels == 1).any():
        raise MissingClassError("legitimate (label 1) scores are needed")
    if not 0.0 <= target_p_fa <= 1.0:
        raise ValueError("target_p_fa must lie in [0, 1]")
    cand = candidate_thresholds(s.scores)
    a = np.sort(s.alice)
    p_fa = np.searchsorted(a, cand, side="left") / a.size
    ok = np.flatnonzero(p_fa <= target_p_fa)
    return float(cand[ok[-1]])


def roc(scores, labels=None):
    """ROC points ``(p_fa, 1 - p_md)``, one per candidate threshold, by increasing p_fa."""
    s = _as_set(scores, labels)
    s.require_both()
    cand = candidate_thresholds(s.scores)
    fa, md = _counts(s, cand)
    pts = np.column_stack([fa / s.alice.size, 1.0 - md / s.eve.size])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return pts[order]


def auc(points) -> float:
    pts = np.asarray(points)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


@dataclass
class EvalReport:
    threshold: float
    p_fa: float
    p_md: float
    epsilon: float
    roc: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def row(self):
        m = self.metadata
        return {"scheme": m.get("scheme", ""), "M": m.get("M", ""), "alpha": m.get("alpha", ""),
                "seed": m.get("seed", ""), "lambda": self.threshold, "p_fa": self.p_fa,
                "p_md": self.p_md, "epsilon": self.epsilon}


def evaluate(val_scores, test_scores, metadata=None, with_roc=False) -> EvalReport:
    """Pick the threshold on validation scores and report test-set rates."""
    val = _as_set(*val_scores) if isinstance(val_scores, tuple) else val_scores
    test = _as_set(*test_scores) if isinstance(test_scores, tuple) else test_scores
    lam, _ = optimize_threshold(val)
    p_fa, p_md, eps = compute_rates(test, threshold=lam)
    return EvalReport(lam, p_fa, p_md, eps, roc(test) if with_roc else None, dict(metadata or {}))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            row = r.row() if isinstance(r, EvalReport) else r
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def write_roc_csv(path, points):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_fa", "detection"])
        for p_fa, det in points:
            writer.writerow([repr(float(p_fa)), repr(float(det))])

"""Accuracy metrics for scored samples, threshold sweeps, and Otsu's
histogram threshold.

Conventions: a sample is predicted positive when score >= threshold;
fractional labels binarize at 0.5; metrics whose denominator is empty are
None in the API and the string "undefined" in JSON/CSV, never 0. Confusion
counts are weighted sums, so with unit weights they are exact integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, UndefinedMetricError
from .rastercore import BandGrid, valid_mask

CROSS_ENTROPY_CLAMP = 1e-7
OTSU_BINS_DEFAULT = 256


@dataclass(frozen=True)
class ScoredSample:
    """A model score in [0, 1] against a hard 0/1 reference label."""

    score: float
    label: int
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "weight", float(self.weight))
        if not 0.0 <= self.score <= 1.0 or math.isnan(self.score):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not self.weight >= 0 or math.isinf(self.weight):
            raise ValueError(f"weight {self.weight} must be finite and nonnegative")


def make_scored(score: float, fractional_label: float, weight: float = 1.0) -> ScoredSample:
    """Binarize a palm-frequency label at 0.5 and wrap it with its score."""
    frac = float(fractional_label)
    if not 0.0 <= frac <= 1.0 or math.isnan(frac):
        raise ValueError(f"label {frac} outside [0, 1]")
    return ScoredSample(score, 1 if frac >= 0.5 else 0, weight)


def _arrays(samples: Sequence[ScoredSample]):
    if not samples:
        raise ValueError("need at least one sample")
    s = np.array([x.score for x in samples], dtype=np.float64)
    y = np.array([x.label for x in samples], dtype=np.float64)
    w = np.array([x.weight for x in samples], dtype=np.float64)
    if not w.sum() > 0:
        raise ValueError("total weight must be positive")
    return s, y, w


@dataclass(frozen=True)
class MetricReport:
    threshold: float
    n: int
    tp: float
    fp: float
    tn: float
    fn: float
    binary_accuracy: float
    cross_entropy: float
    auc: float | None
    precision: float | None
    recall: float | None
    f1: float | None

    def to_json_dict(self) -> dict:
        def u(v):
            return "undefined" if v is None else v

        return {
            "schema_version": 1,
            "threshold": self.threshold,
            "n": self.n,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "binary_accuracy": self.binary_accuracy,
            "cross_entropy": self.cross_entropy,
            "auc": u(self.auc),
            "precision": u(self.precision),
            "recall": u(self.recall),
            "f1": u(self.f1),
        }


def _confusion(s, y, w, threshold: float):
    pred = s >= threshold
    pos = y == 1.0
    tp = float(np.sum(w[pred & pos]))
    fp = float(np.sum(w[pred & ~pos]))
    tn = float(np.sum(w[~pred & ~pos]))
    fn = float(np.sum(w[~pred & pos]))
    return tp, fp, tn, fn


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is None or recall is None or (precision + recall) == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def _auc_weighted(s, y, w) -> float:
    """Weighted Mann-Whitney AUC with midrank tie handling.

    Scores are sorted once; each tie group contributes (below-group negative
    mass + half its own negative mass) times its positive mass. With unit
    weights every intermediate sum is integer-valued in float64 and the result
    is exact."""
    pos_w = np.where(y == 1.0, w, 0.0)
    neg_w = np.where(y == 0.0, w, 0.0)
    total_pos = pos_w.sum()
    total_neg = neg_w.sum()
    if total_pos == 0 or total_neg == 0:
        raise UndefinedMetricError("AUC needs both classes with positive weight")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    pw = pos_w[order]
    nw = neg_w[order]
    # boundaries of equal-score groups
    starts = np.flatnonzero(np.concatenate(([True], ss[1:] != ss[:-1])))
    gp = np.add.reduceat(pw, starts)
    gn = np.add.reduceat(nw, starts)
    below = np.concatenate(([0.0], np.cumsum(gn)[:-1]))
    num = np.sum(gp * below + 0.5 * gp * gn)
    return float(num / (total_pos * total_neg))


def auc(samples: Sequence[ScoredSample]) -> float:
    """Probability a random positive outscores a random negative (ties count
    half). Raises UndefinedMetricError when only one class is present."""
    return _auc_weighted(*_arrays(samples))


def evaluate(samples: Sequence[ScoredSample], threshold: float = 0.5) -> MetricReport:
    """Full accuracy report at one decision threshold."""
    threshold = float(threshold)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    s, y, w = _arrays(samples)
    tp, fp, tn, fn = _confusion(s, y, w, threshold)
    wsum = tp + fp + tn + fn
    accuracy = (tp + tn) / wsum
    p = np.clip(s, CROSS_ENTROPY_CLAMP, 1.0 - CROSS_ENTROPY_CLAMP)
    ce = float(np.sum(w * -(y * np.log(p) + (1.0 - y) * np.log1p(-p))) / np.sum(w))
    try:
        auc_val = _auc_weighted(s, y, w)
    except UndefinedMetricError:
        auc_val = None
    precision, recall, f1 = _prf(tp, fp, fn)
    return MetricReport(
        threshold=threshold,
        n=len(samples),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        binary_accuracy=accuracy,
        cross_entropy=ce,
        auc=auc_val,
        precision=precision,
        recall=recall,
        f1=f1,
    )


@dataclass(frozen=True)
class SweepResult:
    """Metrics at thresholds i/n for i = 0..n. Undefined entries are NaN in
    the arrays (serialized as "undefined"); best_f1_threshold is the lowest
    threshold attaining the maximum F1, None when F1 is nowhere defined."""

    thresholds: np.ndarray
    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    best_f1_threshold: float | None

    def to_csv_text(self) -> str:
        lines = ["# schema_version=1", "threshold,accuracy,precision,recall,f1"]

        def cell(v):
            return "undefined" if math.isnan(v) else repr(float(v))

        for i in range(self.thresholds.size):
            lines.append(
                ",".join(
                    [
                        repr(float(self.thresholds[i])),
                        cell(self.accuracy[i]),
                        cell(self.precision[i]),
                        cell(self.recall[i]),
                        cell(self.f1[i]),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def curve_sweep(samples: Sequence[ScoredSample], n_thresholds: int = 100) -> SweepResult:
    """Evaluate accuracy/precision/recall/F1 at evenly spaced thresholds."""
    n_thresholds = int(n_thresholds)
    if n_thresholds < 1:
        raise ValueError("n_thresholds must be >= 1")
    s, y, w = _arrays(samples)
    ts = np.arange(n_thresholds + 1, dtype=np.float64) / n_thresholds
    acc = np.empty(ts.size)
    prec = np.empty(ts.size)
    rec = np.empty(ts.size)
    f1s = np.empty(ts.size)
    for i, t in enumerate(ts):
        tp, fp, tn, fn = _confusion(s, y, w, t)
        acc[i] = (tp + tn) / (tp + fp + tn + fn)
        p, r, f = _prf(tp, fp, fn)
        prec[i] = np.nan if p is None else p
        rec[i] = np.nan if r is None else r
        f1s[i] = np.nan if f is None else f
    if np.isnan(f1s).all():
        best = None
    else:
        best = float(ts[int(np.nanargmax(f1s))])  # first max = lowest threshold
    return SweepResult(ts, acc, prec, rec, f1s, best)


def otsu_threshold(values, bins: int = OTSU_BINS_DEFAULT) -> float:
    """Otsu's threshold on a histogram of probabilities over [0, 1].

    Accepts a BandGrid (nodata excluded) or an array (NaN excluded). Returns
    k/bins for the cut k maximizing between-class variance, ties to the lowest
    cut. Inputs whose valid values cannot be split by any cut raise
    DegenerateInputError."""
    bins = int(bins)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if isinstance(values, BandGrid):
        vals = values.values[valid_mask(values)].astype(np.float64)
    else:
        vals = np.asarray(values, dtype=np.float64).ravel()
        vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise DegenerateInputError("no valid values to threshold")
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ValueError("values must lie in [0, 1]")
    hist, _ = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    hist = hist.astype(np.float64)
    idx = np.arange(bins, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]            # mass strictly below each cut k=1..bins-1
    w1 = hist.sum() - w0
    m = np.cumsum(hist * idx)[:-1]       # first moment below the cut, in bin units
    m_total = float(np.sum(hist * idx))
    ok = (w0 > 0) & (w1 > 0)
    if not ok.any():
        raise DegenerateInputError("histogram admits no cut with mass on both sides")
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = m / w0
        mu1 = (m_total - m) / w1
        sigma_b = w0 * w1 * (mu0 - mu1) ** 2
    sigma_b = np.where(ok, sigma_b, -np.inf)
    k = int(np.argmax(sigma_b)) + 1      # first max -> lowest cut
    return k / bins

"""Evaluation: multiple-choice accuracy, multi-label metrics, MASI agreement,
paired bootstrap significance."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .corpus import make_rng
from .mbti import MBTIType

MULTILABEL_VIEW = "eight-label (E,I,S,N,T,F,J,P) with opposing-pair scores (p, 1-p)"


class MetricError(ValueError):
    pass


def accuracy(predictions: Sequence[int], gold: Sequence[int]) -> float:
    p, g = np.asarray(predictions), np.asarray(gold)
    if p.shape != g.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise MetricError("accuracy of zero samples")
    return float(np.mean(p == g))


def _as_bits(types) -> np.ndarray:
    rows = [t.first_pole_bits() if isinstance(t, MBTIType) else tuple(t) for t in types]
    arr = np.asarray(rows, dtype=np.int64)
    if arr.ndim != 2:
        arr = arr.reshape(len(rows), -1)
    return arr


def hamming_loss(pred_types, gold_types) -> float:
    """Mean fraction of mismatched axes (4-axis view)."""
    p, g = _as_bits(pred_types), _as_bits(gold_types)
    if p.shape != g.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise MetricError("hamming loss of zero samples")
    return float(np.mean(p != g))


def eight_label_scores(first_pole_scores) -> np.ndarray:
    """(n, 4) first-pole probabilities -> (n, 8) scores (p, 1-p) per axis."""
    p = np.asarray(first_pole_scores, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 4:
        raise MetricError(f"expected (n, 4) scores, got {p.shape}")
    out = np.empty((p.shape[0], 8))
    out[:, 0::2] = p
    out[:, 1::2] = 1.0 - p
    return out


def _check_ranking_inputs(scores, gold):
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(gold)
    if s.ndim != 2 or s.shape != g.shape or s.shape[0] == 0:
        raise MetricError(f"malformed score/label arrays {s.shape} vs {g.shape}")
    if not np.all(np.isfinite(s)):
        raise MetricError("non-finite scores")
    if not np.all((g == 0) | (g == 1)):
        raise MetricError("labels must be 0/1")
    return s, g.astype(bool)


def ranking_loss(scores8, gold8) -> float:
    """Fraction of (relevant, irrelevant) pairs ordered wrongly; ties count half."""
    s, g = _check_ranking_inputs(scores8, gold8)
    losses = np.zeros(s.shape[0])
    for i in range(s.shape[0]):
        rel, irr = s[i, g[i]], s[i, ~g[i]]
        if rel.size == 0 or irr.size == 0:
            continue
        diff = rel[:, None] - irr[None, :]
        losses[i] = (np.sum(diff < 0) + 0.5 * np.sum(diff == 0)) / diff.size
    return float(losses.mean())


def average_precision(scores8, gold8) -> float:
    """Label-ranking average precision; ties ranked by label order."""
    s, g = _check_ranking_inputs(scores8, gold8)
    aps = np.ones(s.shape[0])
    for i in range(s.shape[0]):
        if not g[i].any():
            continue
        order = np.argsort(-s[i], kind="stable")
        rel_sorted = g[i][order]
        hits = np.cumsum(rel_sorted)
        ranks = np.arange(1, len(order) + 1)
        aps[i] = np.mean((hits / ranks)[rel_sorted])
    return float(aps.mean())


def masi(a: Iterable, b: Iterable) -> float:
    """Jaccard similarity weighted by the monotonicity coefficient (1, 2/3, 1/3, 0)."""
    A, B = set(a), set(b)
    if not A and not B:
        return 1.0
    inter, union = len(A & B), len(A | B)
    if A == B:
        m = 1.0
    elif A < B or B < A:
        m = 2.0 / 3.0
    elif inter:
        m = 1.0 / 3.0
    else:
        m = 0.0
    return inter / union * m


def mean_masi(pairs: Iterable) -> float:
    vals = [masi(a, b) for a, b in pairs]
    if not vals:
        raise MetricError("no annotation pairs")
    return float(np.mean(vals))


def paired_bootstrap(preds_a, preds_b, gold, n_resamples: int = 10000, seed: int = 0) -> float:
    """One-sided p-value for ``accuracy(a) > accuracy(b)``.

    Resamples items with replacement; the p-value is the fraction of resamples
    whose accuracy difference is <= 0, so ties count against ``a``.
    """
    a, b, g = np.asarray(preds_a), np.asarray(preds_b), np.asarray(gold)
    if not (a.shape == b.shape == g.shape) or a.ndim != 1:
        raise MetricError(f"misaligned predictions: {a.shape}, {b.shape}, {g.shape}")
    if a.size == 0:
        raise MetricError("no items to resample")
    delta = (a == g).astype(np.int64) - (b == g).astype(np.int64)
    rng = make_rng(seed)
    n = delta.size
    failures = 0
    chunk = max(1, min(n_resamples, 2_000_000 // n))
    done = 0
    while done < n_resamples:
        k = min(chunk, n_resamples - done)
        idx = rng.integers(0, n, size=(k, n))
        failures += int(np.sum(delta[idx].sum(axis=1) <= 0))
        done += k
    return failures / n_resamples


@dataclass
class EvalReport:
    accuracy: Optional[float] = None
    hamming_loss: Optional[float] = None
    ranking_loss: Optional[float] = None
    average_precision: Optional[float] = None
    n_samples: int = 0
    per_seed: List[Dict[str, float]] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=lambda: {"multilabel_view": MULTILABEL_VIEW})

    METRICS = ("accuracy", "hamming_loss", "ranking_loss", "average_precision")

    def __post_init__(self):
        for k in self.METRICS:
            v = getattr(self, k)
            if v is not None and not 0.0 <= v <= 1.0:
                raise MetricError(f"{k}={v} outside [0, 1]")

    @classmethod
    def from_seeds(cls, per_seed: List[Dict[str, float]], n_samples: int, **metadata) -> "EvalReport":
        means = {}
        for k in cls.METRICS:
            vals = [r[k] for r in per_seed if r.get(k) is not None]
            means[k] = float(np.mean(vals)) if vals else None
        meta = {"multilabel_view": MULTILABEL_VIEW}
        meta.update({k: str(v) for k, v in metadata.items()})
        return cls(n_samples=n_samples, per_seed=per_seed, metadata=meta, **means)

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    def csv_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {k: getattr(self, k) for k in self.METRICS}
        row["n_samples"] = self.n_samples
        row["n_seeds"] = len(self.per_seed)
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(buf, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def multilabel_report(first_pole_scores, gold_types, tau: float = 0.5) -> Dict[str, float]:
    """Hamming loss, ranking loss and average precision for 4-axis predictions."""
    scores = np.asarray(first_pole_scores, dtype=np.float64)
    gold_bits = _as_bits(gold_types)
    pred_bits = (scores >= tau).astype(np.int64)
    gold8 = np.empty((gold_bits.shape[0], 8), dtype=np.int64)
    gold8[:, 0::2] = gold_bits
    gold8[:, 1::2] = 1 - gold_bits
    s8 = eight_label_scores(scores)
    return {
        "hamming_loss": hamming_loss(pred_bits, gold_bits),
        "ranking_loss": ranking_loss(s8, gold8),
        "average_precision": average_precision(s8, gold8),
    }

"""WER, WERR and PR-AUC.

WER uses unit-cost Levenshtein alignment with a deterministic tie-break
(substitution preferred over insertion over deletion).  WERR is reported
as 100*(b-m)/b so that improvements are positive.  PR-AUC is step-wise
average precision with posterior ties collapsed into one threshold group.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UndefinedMetricError


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    n_ref_tokens: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.distance / self.n_ref_tokens


@dataclass(frozen=True)
class WerrReport:
    baseline_wer: float
    model_wer: float

    @property
    def werr_reduction(self) -> float:
        return 100.0 * (self.baseline_wer - self.model_wer) / self.baseline_wer


@dataclass(frozen=True)
class PrCurve:
    """(threshold, precision, recall) triples sorted by ascending threshold."""

    thresholds: np.ndarray
    precisions: np.ndarray
    recalls: np.ndarray
    pr_auc: float


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Whitespace-split, case-folded, punctuation-stripped WER tokens."""
    return [t for t in text.casefold().translate(_PUNCT_TABLE).split() if t]


def wer(ref, hyp) -> WerReport:
    """Minimal-edit alignment of two token sequences.

    Ties are broken substitution > insertion > deletion so the (S, D, I)
    decomposition is deterministic; the total distance is unaffected.
    """
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        raise UndefinedMetricError("WER undefined for an empty reference")

    R, H = len(ref), len(hyp)
    d = np.zeros((R + 1, H + 1), dtype=np.int64)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)

    n_sub = n_del = n_ins = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            n_sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            n_ins += 1
            j -= 1
        else:
            n_del += 1
            i -= 1
    return WerReport(int(n_sub), n_del, n_ins, R)


def werr(baseline_wer: float, model_wer: float) -> WerrReport:
    """Relative WER reduction in percent; positive numbers are improvements."""
    if baseline_wer == 0:
        raise ZeroDivisionError("WERR undefined for a zero baseline WER")
    if baseline_wer < 0 or model_wer < 0:
        raise DomainError("WER values must be nonnegative")
    return WerrReport(baseline_wer, model_wer)


def pr_auc(posteriors, labels) -> PrCurve:
    """Step-wise average precision over descending-posterior thresholds.

    Equal posteriors form a single threshold group.  Requires at least one
    positive label.
    """
    scores = np.asarray(posteriors, dtype=np.float64)
    y = np.asarray(labels)
    if scores.shape != y.shape or scores.ndim != 1:
        raise DomainError("posteriors and labels must be 1-D and equally long")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC undefined without positive labels")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = (y[order] == 1).astype(np.int64)

    # Last index of each tie group (descending scores).
    group_end = np.nonzero(np.append(s[:-1] != s[1:], True))[0]
    tp = np.cumsum(t)[group_end]
    pp = group_end + 1
    precision = tp / pp
    recall = tp / n_pos

    prev_recall = np.concatenate([[0.0], recall[:-1]])
    auc = float(np.sum((recall - prev_recall) * precision))

    # Ascending threshold order for the stored curve.
    return PrCurve(
        thresholds=s[group_end][::-1].copy(),
        precisions=precision[::-1].copy(),
        recalls=recall[::-1].copy(),
        pr_auc=auc,
    )

"""Calibration and out-of-distribution metrics."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._backend import kernels
from .errors import ValidationError

PROB_FLOOR = 1e-12
DEFAULT_BINS = 15


def _probs(p):
    p = np.asarray(getattr(p, "probs", p), dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValidationError(f"need a non-empty (N, C) probability matrix, got shape {p.shape}")
    return p


def _labels(labels, p):
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise ValidationError(f"{labels.shape} labels for {p.shape[0]} rows")
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValidationError(f"labels must lie in [0, {p.shape[1]})")
    return labels.astype(np.intp)


@dataclass
class ReliabilityBins:
    n_bins: int
    counts: np.ndarray
    mean_conf: np.ndarray
    mean_acc: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def rows(self):
        for b in range(self.n_bins):
            yield (b / self.n_bins, (b + 1) / self.n_bins, int(self.counts[b]),
                   float(self.mean_conf[b]), float(self.mean_acc[b]))

    def to_dict(self):
        return {
            "n_bins": self.n_bins,
            "counts": self.counts.tolist(),
            "mean_conf": self.mean_conf.tolist(),
            "mean_acc": self.mean_acc.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            doc["n_bins"],
            np.asarray(doc["counts"], dtype=np.int64),
            np.asarray(doc["mean_conf"], dtype=np.float64),
            np.asarray(doc["mean_acc"], dtype=np.float64),
        )


RELIABILITY_HEADER = ("bin_low", "bin_high", "count", "mean_conf", "mean_acc")


def write_reliability_csv(bins, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RELIABILITY_HEADER)
        for lo, hi, cnt, conf, acc in bins.rows():
            w.writerow([repr(lo), repr(hi), cnt, repr(conf), repr(acc)])


def reliability_bins(probs, labels, n_bins=DEFAULT_BINS):
    p = _probs(probs)
    y = _labels(labels, p)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == y).astype(np.float64)
    counts, sconf, scorr = kernels.ece_bin_stats(conf, correct, int(n_bins))
    safe = np.maximum(counts, 1)
    return ReliabilityBins(int(n_bins), counts, sconf / safe, scorr / safe)


def ece(probs, labels, n_bins=DEFAULT_BINS):
    """Expected calibration error over equal-width confidence bins.

    Returns ``(ece, bins)``.  Bins are ``[b/B, (b+1)/B)`` with the top bin
    closed at 1.
    """
    bins = reliability_bins(probs, labels, n_bins)
    n = bins.total
    value = float(np.sum(bins.counts / n * np.abs(bins.mean_acc - bins.mean_conf)))
    return value, bins


def accuracy(probs, labels):
    p = _probs(probs)
    return float(np.mean(p.argmax(axis=1) == _labels(labels, p)))


def nll(probs, labels):
    """Mean negative log-likelihood with probabilities clamped at 1e-12."""
    p = _probs(probs)
    y = _labels(labels, p)
    py = p[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(py, PROB_FLOOR))))


def brier(probs, labels):
    p = _probs(probs)
    y = _labels(labels, p)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def kl_to_soft(probs, soft_labels):
    """Mean ``KL(q || p)`` with ``0 log 0 = 0`` and ``p`` clamped at 1e-12."""
    p = _probs(probs)
    q = np.asarray(soft_labels, dtype=np.float64)
    if q.shape != p.shape:
        raise ValidationError(f"soft labels shape {q.shape} != predictions {p.shape}")
    for name, m in (("soft labels", q), ("predictions", p)):
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-6:
            raise ValidationError(f"{name} rows must sum to 1 within 1e-6")
    pos = q > 0
    terms = np.zeros_like(q)
    terms[pos] = q[pos] * (np.log(q[pos]) - np.log(np.maximum(p[pos], PROB_FLOOR)))
    return float(np.mean(terms.sum(axis=1)))


def _scores(a, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValidationError(f"{name} scores are empty")
    return a


def auroc(id_scores, ood_scores):
    """P(ID score > OOD score) + 0.5 P(tie), via the Mann-Whitney U statistic."""
    a = _scores(id_scores, "in-distribution")
    b = _scores(ood_scores, "out-of-distribution")
    ranks = rankdata(np.concatenate([a, b]))  # midranks for ties
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def fpr_at_95_tpr(id_scores, ood_scores):
    """OOD acceptance rate at the largest threshold keeping >= 95 % of ID scores.

    Scores ``>= tau`` count as in-distribution; no interpolation.
    """
    a = _scores(id_scores, "in-distribution")
    b = _scores(ood_scores, "out-of-distribution")
    k = (95 * a.size + 99) // 100  # ceil(0.95 n) in exact integer arithmetic
    tau = np.sort(a)[::-1][k - 1]
    return float(np.mean(b >= tau))


def msp_score(probs):
    """Maximum class probability, per row (or for a single row)."""
    p = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
    return p.max(axis=-1)


@dataclass
class CalibrationReport:
    accuracy: float
    ece: float
    nll: float
    brier: float
    bins: ReliabilityBins
    kl_to_soft: float | None = None

    def metrics(self):
        out = {"accuracy": self.accuracy, "ece": self.ece, "nll": self.nll, "brier": self.brier}
        if self.kl_to_soft is not None:
            out["kl_to_soft"] = self.kl_to_soft
        return out


def calibration_report(probs, labels, soft_labels=None, n_bins=DEFAULT_BINS):
    p = _probs(probs)
    e, bins = ece(p, labels, n_bins)
    kl = kl_to_soft(p, soft_labels) if soft_labels is not None else None
    return CalibrationReport(accuracy(p, labels), e, nll(p, labels), brier(p, labels), bins, kl)

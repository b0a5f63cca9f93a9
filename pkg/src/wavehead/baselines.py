"""Post-hoc temperature scaling and the energy OOD score."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .heads import PredictionBatch, softmax

T_LOW, T_HIGH = 0.05, 10.0
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureModel:
    T: float
    fitted_on: str = ""

    def __post_init__(self):
        if not T_LOW <= self.T <= T_HIGH:
            raise ValidationError(f"temperature {self.T} outside [{T_LOW}, {T_HIGH}]")

    def to_dict(self):
        return {"T": self.T, "fitted_on": self.fitted_on}


def _logits(z):
    z = np.asarray(getattr(z, "logits", z), dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValidationError(f"need a non-empty (N, C) logit matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    return z


def tempered_nll(logits, labels, T):
    z = np.asarray(logits, dtype=np.float64) / T
    rows = np.arange(z.shape[0])
    return float(np.mean(logsumexp(z, axis=1) - z[rows, labels]))


def golden_section(f, lo, hi, tol):
    """Minimise a unimodal ``f`` on ``[lo, hi]`` until the bracket is shorter than ``tol``."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature(logits, labels, fitted_on="", tol=1e-4):
    """Temperature minimising held-out NLL of ``softmax(z / T)`` on ``[0.05, 10]``."""
    z = _logits(logits)
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (z.shape[0],):
        raise ValidationError(f"{y.shape} labels for {z.shape[0]} logit rows")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ValidationError("labels out of range")
    T = golden_section(lambda t: tempered_nll(z, y, t), T_LOW, T_HIGH, tol)
    return TemperatureModel(float(T), fitted_on)


def apply_temperature(model, logits, dataset_id=None):
    """``softmax(z / T)``.  Refuses to score the split the temperature was fitted on."""
    if dataset_id is not None and model.fitted_on and dataset_id == model.fitted_on:
        raise ValidationError(f"temperature was fitted on {dataset_id!r}; evaluate on a different split")
    z = _logits(logits)
    return PredictionBatch(softmax(z / model.T), z / model.T)


def energy_score(logits):
    """``-log sum_k exp(z_k)`` per row (max-shifted)."""
    z = np.asarray(getattr(logits, "logits", logits), dtype=np.float64)
    return -logsumexp(z, axis=-1)

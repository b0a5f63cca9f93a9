"""Losses, hand-written reverse-mode gradients, Adam and the training loop."""

import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng as rng_mod
from .errors import GradientCheckError, NumericalError, ValidationError
from .heads import HeadDims, HeadParameters, HeadVariant, build_head, dropout_mask, trace
from .linalg import lu_solve

PROB_FLOOR = 1e-12
PHASE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# losses


def _check_labels(labels, C):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValidationError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValidationError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.intp)


def cross_entropy(probs, labels):
    """Mean of ``-log(max(p_y, 1e-12))``.  Accepts a ``PredictionBatch`` or an array."""
    probs = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
    labels = _check_labels(labels, probs.shape[1])
    if labels.shape[0] != probs.shape[0]:
        raise ValidationError(f"{labels.shape[0]} labels for {probs.shape[0]} rows")
    py = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(py, PROB_FLOOR))))


def _phases(re, im):
    theta = np.arctan2(im, re)
    # principal value in (-pi, pi]
    theta = np.where(theta == -np.pi, np.pi, theta)
    valid = np.sqrt(re * re + im * im) >= PHASE_FLOOR
    return theta, valid


def _phase_variance_rows(re, im):
    """Per-row population variance of valid phases, plus what the gradient needs."""
    theta, valid = _phases(re, im)
    count = valid.sum(axis=-1)
    safe = np.maximum(count, 1)
    mean = np.where(valid, theta, 0.0).sum(axis=-1) / safe
    dev = np.where(valid, theta - mean[..., None], 0.0)
    var = (dev * dev).sum(axis=-1) / safe
    var = np.where(count >= 2, var, 0.0)
    return var, dev, count


def phase_variance(psi):
    """Population variance of the component phases of a state (or per row of a stack)."""
    var, _, _ = _phase_variance_rows(psi.re, psi.im)
    return float(var) if np.ndim(var) == 0 else var


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class TrainSchedule:
    total_epochs: int = 30
    warmup_epochs: int = 8
    ramp_epochs: int = 5
    lam: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 128
    # which heads get the phase regulariser: "complex", "born" or "none"
    phase_reg: str = "complex"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValidationError("total_epochs must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValidationError(
                f"warmup_epochs must satisfy 0 <= T_w < T (got T_w={self.warmup_epochs}, T={self.total_epochs})"
            )
        if self.ramp_epochs < 1:
            raise ValidationError("ramp_epochs must be positive")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("lam must be finite and non-negative")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.phase_reg not in ("complex", "born", "none"):
            raise ValidationError(f"phase_reg must be complex|born|none, got {self.phase_reg!r}")

    @classmethod
    def from_dict(cls, doc):
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValidationError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self):
        return asdict(self)

    def regularises(self, variant):
        if self.phase_reg == "none" or not variant.is_complex:
            return False
        return self.phase_reg == "complex" or variant.has_born


def ramp_weight(epoch, schedule):
    """Phase-regulariser weight for 1-based ``epoch``: 0 during warmup, then a linear ramp to lam."""
    if epoch <= schedule.warmup_epochs:
        return 0.0
    alpha = min(1.0, (epoch - schedule.warmup_epochs) / schedule.ramp_epochs)
    return schedule.lam * alpha


# ---------------------------------------------------------------------------
# gradients


def _readout_softmax_grad(probs, labels):
    """d(mean CE)/d(logits); rows whose true-class probability is clamped get zero."""
    N = probs.shape[0]
    rows = np.arange(N)
    dz = probs.copy()
    dz[rows, labels] -= 1.0
    clamped = probs[rows, labels] < PROB_FLOOR
    dz[clamped] = 0.0
    return dz / N


def backward(params, F, labels, reg_weight=0.0, mask=None):
    """Objective ``mean CE - reg_weight * mean Var(phase(psi'))`` and its gradient.

    Returns ``(loss, grads)`` with one array per tensor in ``params.tensors``.
    ``mask`` fixes the dropout mask of an MC-Dropout head.
    """
    v = params.variant
    t = trace(params, F, mask)
    F = t["F"]
    labels = _check_labels(labels, params.dims.C)
    N = F.shape[0]
    rows = np.arange(N)
    probs = t["probs"]
    py = probs[rows, labels]
    loss = float(np.mean(-np.log(np.maximum(py, PROB_FLOOR))))
    g = {}

    if not v.is_complex:
        dz = _readout_softmax_grad(probs, labels)
        if v.is_mlp:
            hid_out = t["hid_out"]
            g["W2"] = dz.T @ hid_out
            g["b2"] = dz.sum(axis=0)
            dh = dz @ params["W2"]
            if t["mask"] is not None:
                dh = dh * t["mask"]
            dpre = dh * (t["pre"] > 0)
            g["W1"] = dpre.T @ F
            g["b1"] = dpre.sum(axis=0)
        else:
            g["W"] = dz.T @ F
            g["b"] = dz.sum(axis=0)
        return loss, g

    psi_out = t["psi_out"]
    x, y = psi_out.re, psi_out.im
    if v.has_born:
        s, total = t["s"], t["s_total"]
        clamped = py < PROB_FLOOR
        ds = np.broadcast_to(1.0 / total, s.shape).copy()
        ds[rows, labels] -= 1.0 / s[rows, labels]
        ds[clamped] = 0.0
        ds /= N
        d_re = 2.0 * t["amp_re"] * ds
        d_im = 2.0 * t["amp_im"] * ds
        Mr, Mi = params["M_re"], params["M_im"]
        g["M_re"] = d_re.T @ x + d_im.T @ y
        g["M_im"] = d_re.T @ y - d_im.T @ x
        dx = d_re @ Mr - d_im @ Mi
        dy = d_re @ Mi + d_im @ Mr
    else:
        dz = _readout_softmax_grad(probs, labels)
        mag = t["mag"]
        g["W_c"] = dz.T @ mag
        g["b_c"] = dz.sum(axis=0)
        dmag = dz @ params["W_c"]
        safe = np.where(mag > 0, mag, 1.0)
        dx = np.where(mag > 0, dmag * x / safe, 0.0)
        dy = np.where(mag > 0, dmag * y / safe, 0.0)

    if reg_weight:
        var, dev, count = _phase_variance_rows(x, y)
        active = (count >= 2)[:, None]
        coef = np.where(active, -reg_weight * 2.0 * dev / (N * np.maximum(count, 1)[:, None]), 0.0)
        r2 = x * x + y * y
        safe = np.where(r2 > 0, r2, 1.0)
        dx = dx + np.where(r2 > 0, coef * (-y) / safe, 0.0)
        dy = dy + np.where(r2 > 0, coef * x / safe, 0.0)
        loss -= reg_weight * float(np.mean(var))

    psi = t["psi"]
    u, w = psi.re, psi.im
    if v.has_unitary:
        U, S = t["U"], t["S"]
        G = dx.T @ u + dy.T @ w  # dL/dU
        du = dx @ U
        dw = dy @ U
        eye = np.eye(U.shape[0])
        gS_T = -lu_solve(eye + S, G.T @ (eye + U), factor=t["factor"])
        gS = gS_T.T
        g["A"] = gS - gS_T
    else:
        du, dw = dx, dy

    r = t["norm"][:, None]
    radial = np.sum(u * du + w * dw, axis=1, keepdims=True)
    da = (du - u * radial) / r
    db = (dw - w * radial) / r
    g["W_re"] = da.T @ F
    g["W_im"] = db.T @ F
    return loss, g


def objective(params, F, labels, reg_weight=0.0, mask=None):
    """Loss value only (same definition as ``backward``)."""
    t = trace(params, F, mask)
    labels = _check_labels(labels, params.dims.C)
    py = t["probs"][np.arange(len(labels)), labels]
    loss = float(np.mean(-np.log(np.maximum(py, PROB_FLOOR))))
    if reg_weight and params.variant.is_complex:
        var, _, _ = _phase_variance_rows(t["psi_out"].re, t["psi_out"].im)
        loss -= reg_weight * float(np.mean(var))
    return loss


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            {k: np.zeros_like(a) for k, a in params.tensors.items()},
            {k: np.zeros_like(a) for k, a in params.tensors.items()},
            0,
            beta1,
            beta2,
            eps,
        )


def adam_step(params, grads, state, lr, frozen=()):
    """One bias-corrected Adam update, applied in place.  Returns ``(params, state)``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if name in frozen:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop


class TrainResult(NamedTuple):
    params: HeadParameters
    loss_history: list
    epoch_seconds: list


def train(variant, dataset, schedule=None, seed=42, dims=None, init=None, frozen=()):
    """Train a head on ``dataset`` with mini-batch Adam.

    The phase regulariser switches on after ``warmup_epochs`` and ramps up
    linearly.  Shuffling and dropout use streams derived from ``seed``.
    ``init`` overrides the initial parameters; names in ``frozen`` are
    never updated.
    """
    schedule = schedule or TrainSchedule()
    variant = HeadVariant.parse(variant)
    X = np.asarray(dataset.features, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.intp)
    if X.shape[0] == 0:
        raise ValidationError("cannot train on an empty dataset")
    if init is not None:
        params = init.copy()
    else:
        dims = dims or HeadDims(n=X.shape[1], C=dataset.n_classes)
        params = build_head(variant, dims, seed)
    if params.dims.n != X.shape[1] or params.dims.C != dataset.n_classes:
        raise ValidationError(
            f"head dims {params.dims} incompatible with dataset ({X.shape[1]} features, {dataset.n_classes} classes)"
        )
    state = AdamState.zeros_like(params, schedule.beta1, schedule.beta2, schedule.eps)
    shuffle_rng = rng_mod.stream(seed, "shuffle")
    drop_rng = rng_mod.stream(seed, "dropout")
    use_reg = schedule.regularises(variant)
    rate = params.dropout_rate if variant is HeadVariant.MC_DROPOUT else 0.0
    n = X.shape[0]
    bs = schedule.batch_size
    history, seconds = [], []
    for epoch in range(1, schedule.total_epochs + 1):
        start = time.perf_counter()
        reg = ramp_weight(epoch, schedule) if use_reg else 0.0
        order = shuffle_rng.permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            mask = dropout_mask(drop_rng, (len(idx), params.dims.h), rate) if rate > 0 else None
            try:
                loss, grads = backward(params, X[idx], y[idx], reg, mask)
            except NumericalError as exc:
                raise type(exc)(f"epoch {epoch}, batch {bi}: {exc}") from exc
            total += loss * len(idx)
            adam_step(params, grads, state, schedule.learning_rate, frozen)
        history.append(total / n)
        seconds.append(time.perf_counter() - start)
        if not np.isfinite(history[-1]):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
    return TrainResult(params, history, seconds)


# ---------------------------------------------------------------------------
# gradient check


GRADCHECK_DIMS = HeadDims(n=12, d=8, C=4, h=10)


def gradcheck_setup(variant, seed=42, dims=GRADCHECK_DIMS, batch=16):
    """Randomised parameters and a fixed batch for finite-difference checks.

    Zero-initialised tensors are replaced by random values so every path
    carries signal; ``A`` is widened so that ``U`` is far from the identity.
    """
    variant = HeadVariant.parse(variant)
    params = build_head(variant, dims, seed)
    for name, arr in params.tensors.items():
        g = rng_mod.stream(seed, "gradcheck", name)
        scale = 0.3 if name == "A" else 0.5
        params.tensors[name] = g.normal(0.0, scale, size=arr.shape)
    g = rng_mod.stream(seed, "gradcheck-batch")
    F = g.normal(size=(batch, dims.n))
    labels = g.integers(0, dims.C, size=batch)
    mask = None
    if variant is HeadVariant.MC_DROPOUT:
        mask = dropout_mask(rng_mod.stream(seed, "gradcheck-mask"), (batch, dims.h), params.dropout_rate)
    reg = 0.05 if variant.is_complex else 0.0
    return params, F, labels, reg, mask


@dataclass
class GradcheckReport:
    variant: str
    max_rel_error: dict
    max_abs_error_small: dict
    passed: bool


def gradcheck(variant, seed=42, step=1e-5, rtol=1e-4, floor=1e-6, atol_small=1e-7, dims=GRADCHECK_DIMS):
    """Compare analytic gradients with central differences on every tensor entry."""
    params, F, labels, reg, mask = gradcheck_setup(variant, seed, dims)
    _, grads = backward(params, F, labels, reg, mask)
    rel, small = {}, {}
    ok = True
    for name, arr in params.tensors.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective(params, F, labels, reg, mask)
            flat[i] = orig - step
            down = objective(params, F, labels, reg, mask)
            flat[i] = orig
            num.reshape(-1)[i] = (up - down) / (2 * step)
        ana = grads[name]
        big = np.maximum(np.abs(ana), np.abs(num))
        large = big > floor
        err = np.abs(ana - num)
        rel[name] = float(np.max(err[large] / big[large])) if large.any() else 0.0
        small[name] = float(np.max(err[~large])) if (~large).any() else 0.0
        ok &= rel[name] < rtol and small[name] < atol_small
    return GradcheckReport(HeadVariant.parse(variant).value, rel, small, bool(ok))


def require_gradcheck(variant, seed=42, **kw):
    report = gradcheck(variant, seed, **kw)
    if not report.passed:
        raise GradientCheckError(f"{report.variant}: gradient check failed {report.max_rel_error}")
    return report

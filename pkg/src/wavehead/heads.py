"""Classification heads: parameter construction, forward passes, serialisation.

Complex heads project a real feature vector into C^d, normalise, optionally
evolve under the Cayley unitary built from ``A``, then read out either with
Born-rule measurement vectors or with ``softmax(W_c |psi'| + b_c)``.
"""

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .errors import (
    DimensionError,
    FormatError,
    MeasurementCollapseError,
    ValidationError,
)
from .linalg import ComplexVector, cayley_factored, magnitude, normalize, skew_symmetrize

BORN_FLOOR = 1e-30
PARAMS_FORMAT = "wavehead-params"
PARAMS_VERSION = 1


class HeadVariant(str, enum.Enum):
    FULL_WAVE = "FullWave"
    NO_BORN = "NoBorn"
    NO_UNITARY = "NoUnitary"
    COMPLEX_LINEAR = "ComplexLinear"
    SOFTMAX = "Softmax"
    SOFTMAX_2X = "Softmax2x"
    MC_DROPOUT = "MCDropout"
    ENERGY_LINEAR = "EnergyLinear"

    @property
    def is_complex(self):
        return self in _COMPLEX

    @property
    def has_unitary(self):
        return self in (HeadVariant.FULL_WAVE, HeadVariant.NO_BORN)

    @property
    def has_born(self):
        return self in (HeadVariant.FULL_WAVE, HeadVariant.NO_UNITARY)

    @property
    def is_mlp(self):
        return self in (HeadVariant.SOFTMAX_2X, HeadVariant.MC_DROPOUT)

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        for v in cls:
            if v.value.lower() == str(tag).lower():
                return v
        raise ValidationError(f"unknown head variant {tag!r}; choose from {[v.value for v in cls]}")


_COMPLEX = frozenset(
    {HeadVariant.FULL_WAVE, HeadVariant.NO_BORN, HeadVariant.NO_UNITARY, HeadVariant.COMPLEX_LINEAR}
)

# The six rows of the ablation table, in table order.
ABLATION_VARIANTS = (
    HeadVariant.FULL_WAVE,
    HeadVariant.NO_BORN,
    HeadVariant.NO_UNITARY,
    HeadVariant.COMPLEX_LINEAR,
    HeadVariant.SOFTMAX,
    HeadVariant.SOFTMAX_2X,
)


@dataclass(frozen=True)
class HeadDims:
    n: int  # feature dimension
    d: int = 64  # Hilbert dimension
    C: int = 10  # classes
    h: int = 128  # hidden width, MLP variants only

    def validate(self, variant):
        if min(self.n, self.d, self.C) < 1:
            raise ValidationError(f"dimensions must be positive: {self}")
        if variant.is_mlp and self.h < 1:
            raise ValidationError(f"{variant.value} needs a positive hidden width h")


@dataclass
class HeadParameters:
    variant: HeadVariant
    dims: HeadDims
    seed: int
    tensors: dict = field(default_factory=dict)
    dropout_rate: float = 0.0
    mc_samples: int = 20

    def n_params(self):
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self):
        return HeadParameters(
            self.variant,
            self.dims,
            self.seed,
            {k: v.copy() for k, v in self.tensors.items()},
            self.dropout_rate,
            self.mc_samples,
        )

    def __getitem__(self, name):
        return self.tensors[name]


@dataclass
class PredictionBatch:
    probs: np.ndarray
    logits: np.ndarray | None = None

    def __len__(self):
        return self.probs.shape[0]


def tensor_shapes(variant, dims):
    """Trainable tensor names and shapes for a variant."""
    n, d, C, h = dims.n, dims.d, dims.C, dims.h
    shapes = {}
    if variant.is_complex:
        shapes["W_re"] = (d, n)
        shapes["W_im"] = (d, n)
        if variant.has_unitary:
            shapes["A"] = (d, d)
        if variant.has_born:
            shapes["M_re"] = (C, d)
            shapes["M_im"] = (C, d)
        else:
            shapes["W_c"] = (C, d)
            shapes["b_c"] = (C,)
    elif variant.is_mlp:
        shapes.update(W1=(h, n), b1=(h,), W2=(C, h), b2=(C,))
    else:
        shapes.update(W=(C, n), b=(C,))
    return shapes


def build_head(variant, dims, seed, dropout_rate=None, mc_samples=20):
    """Initialise parameters deterministically from ``seed``.

    Each tensor has its own stream, so variants that share a tensor name
    (e.g. ``W_re``) start from identical values for the same seed.
    """
    variant = HeadVariant.parse(variant)
    dims.validate(variant)
    if dropout_rate is None:
        dropout_rate = 0.2 if variant is HeadVariant.MC_DROPOUT else 0.0
    if not 0.0 <= dropout_rate < 1.0:
        raise ValidationError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    tensors = {}
    for name, shape in tensor_shapes(variant, dims).items():
        g = rng_mod.stream(seed, "init", name)
        if name in ("W_re", "W_im"):
            bound = 1.0 / np.sqrt(dims.n)
            t = g.uniform(-bound, bound, size=shape)
        elif name == "A":
            t = g.normal(0.0, 0.01, size=shape)
        elif name in ("M_re", "M_im"):
            # both halves from one stream so rows can be unit-normalised jointly
            g = rng_mod.stream(seed, "init", "M")
            z = g.normal(size=shape) + 1j * g.normal(size=shape)
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            t = z.real.copy() if name == "M_re" else z.imag.copy()
        elif name == "W1":
            bound = 1.0 / np.sqrt(dims.n)
            t = g.uniform(-bound, bound, size=shape)
        elif name == "W2":
            bound = 1.0 / np.sqrt(dims.h)
            t = g.uniform(-bound, bound, size=shape)
        else:  # readout weights and biases start at zero -> uniform predictions
            t = np.zeros(shape)
        tensors[name] = np.ascontiguousarray(t, dtype=np.float64)
    return HeadParameters(variant, dims, int(seed), tensors, float(dropout_rate), int(mc_samples))


# ---------------------------------------------------------------------------
# building blocks


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def project_complex(params, f):
    """``normalize(W_re f + i W_im f)`` for one feature vector or a batch of rows."""
    f = np.asarray(f, dtype=np.float64)
    W_re, W_im = params["W_re"], params["W_im"]
    if f.shape[-1] != W_re.shape[1]:
        raise DimensionError(f"feature dim {f.shape[-1]} != head input dim {W_re.shape[1]}")
    return normalize(ComplexVector(f @ W_re.T, f @ W_im.T))


def born_amplitudes(psi, M):
    """Real and imaginary parts of ``<m_k|psi>`` for every measurement vector."""
    if psi.dim != M.dim:
        raise DimensionError(f"state dim {psi.dim} != measurement dim {M.dim}")
    re = psi.re @ M.re.T + psi.im @ M.im.T
    im = psi.im @ M.re.T - psi.re @ M.im.T
    return re, im


def born_readout(psi, M):
    """``p_k = |<m_k|psi>|^2 / sum_j |<m_j|psi>|^2``."""
    re, im = born_amplitudes(psi, M)
    s = re * re + im * im
    total = np.sum(s, axis=-1, keepdims=True)
    if np.any(~(total > BORN_FLOOR)):
        raise MeasurementCollapseError(
            "state is orthogonal to every measurement vector (Born denominator <= 1e-30)"
        )
    return s / total


def magnitude_softmax_readout(psi, W_c, b_c):
    """``(softmax(z), z)`` with ``z = W_c |psi| + b_c``."""
    W_c = np.asarray(W_c, dtype=np.float64)
    if W_c.shape[1] != psi.dim:
        raise DimensionError(f"W_c expects dim {W_c.shape[1]}, state has {psi.dim}")
    z = magnitude(psi) @ W_c.T + b_c
    return softmax(z), z


def dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# full forward pass


def _check_features(params, F):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != params.dims.n:
        raise DimensionError(f"features must be (N, {params.dims.n}), got {F.shape}")
    return F


def trace(params, F, mask=None):
    """Forward pass that keeps every intermediate needed by the backward pass.

    ``mask`` is the (already rescaled) dropout mask for MC-Dropout heads;
    ``None`` means no dropout.
    """
    F = _check_features(params, F)
    v = params.variant
    t = {"F": F}
    if v.is_complex:
        a = F @ params["W_re"].T
        b = F @ params["W_im"].T
        t["a"], t["b"] = a, b
        psi = normalize(ComplexVector(a, b))
        t["norm"] = np.sqrt(np.sum(a * a + b * b, axis=1))
        t["psi"] = psi
        if v.has_unitary:
            S = skew_symmetrize(params["A"])
            U, factor = cayley_factored(S, check=False)
            t["S"], t["U"], t["factor"] = S, U, factor
            psi = ComplexVector(psi.re @ U.T, psi.im @ U.T)
        t["psi_out"] = psi
        if v.has_born:
            M = ComplexVector(params["M_re"], params["M_im"])
            re, im = born_amplitudes(psi, M)
            s = re * re + im * im
            total = np.sum(s, axis=1, keepdims=True)
            if np.any(~(total > BORN_FLOOR)):
                bad = np.flatnonzero(~(total[:, 0] > BORN_FLOOR))
                raise MeasurementCollapseError(
                    f"Born denominator <= {BORN_FLOOR:g} for rows {bad[:5].tolist()}"
                )
            t["amp_re"], t["amp_im"], t["s"], t["s_total"] = re, im, s, total
            t["probs"] = s / total
            t["logits"] = None
        else:
            mag = magnitude(psi)
            z = mag @ params["W_c"].T + params["b_c"]
            t["mag"], t["logits"], t["probs"] = mag, z, softmax(z)
    elif v.is_mlp:
        pre = F @ params["W1"].T + params["b1"]
        hid = np.maximum(pre, 0.0)
        t["pre"], t["hid"] = pre, hid
        if mask is not None:
            hid = hid * mask
        t["mask"] = mask
        t["hid_out"] = hid
        z = hid @ params["W2"].T + params["b2"]
        t["logits"], t["probs"] = z, softmax(z)
    else:
        z = F @ params["W"].T + params["b"]
        t["logits"], t["probs"] = z, softmax(z)
    return t


def forward(params, F, mode="eval", rng=None):
    """Class probabilities (and logits, where the readout has them) for rows of ``F``."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    v = params.variant
    rate = params.dropout_rate if v is HeadVariant.MC_DROPOUT else 0.0
    if rate == 0.0:
        t = trace(params, F)
        return PredictionBatch(t["probs"], t["logits"])
    if rng is None:
        raise ValidationError("an rng is required when dropout is active")
    F = _check_features(params, F)
    shape = (F.shape[0], params.dims.h)
    if mode == "train":
        t = trace(params, F, dropout_mask(rng, shape, rate))
        return PredictionBatch(t["probs"], t["logits"])
    # MC estimate: average probabilities over stochastic passes
    acc = np.zeros((F.shape[0], params.dims.C))
    for _ in range(params.mc_samples):
        acc += trace(params, F, dropout_mask(rng, shape, rate))["probs"]
    return PredictionBatch(acc / params.mc_samples, None)


# ---------------------------------------------------------------------------
# serialisation


def params_to_dict(params):
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "variant": params.variant.value,
        "dims": {"n": params.dims.n, "d": params.dims.d, "C": params.dims.C, "h": params.dims.h},
        "seed": params.seed,
        "dropout_rate": params.dropout_rate,
        "mc_samples": params.mc_samples,
        "tensors": {
            name: {"shape": list(t.shape), "data": t.tolist()}
            for name, t in sorted(params.tensors.items())
        },
    }


def params_from_dict(doc):
    if doc.get("format") != PARAMS_FORMAT:
        raise FormatError(f"not a parameter document (format={doc.get('format')!r})")
    if doc.get("version") != PARAMS_VERSION:
        raise FormatError(f"unsupported parameter document version {doc.get('version')!r}")
    variant = HeadVariant.parse(doc["variant"])
    dims = HeadDims(**doc["dims"])
    expected = tensor_shapes(variant, dims)
    tensors = {}
    for name, entry in doc["tensors"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if name not in expected or tuple(arr.shape) != expected[name]:
            raise FormatError(f"tensor {name!r} with shape {arr.shape} does not fit {variant.value}")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} has non-finite entries")
        tensors[name] = np.ascontiguousarray(arr)
    missing = set(expected) - set(tensors)
    if missing:
        raise FormatError(f"missing tensors: {sorted(missing)}")
    return HeadParameters(
        variant, dims, int(doc["seed"]), tensors, float(doc["dropout_rate"]), int(doc["mc_samples"])
    )


def save_params(params, path):
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)
        fh.write("\n")


def load_params(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return params_from_dict(doc)

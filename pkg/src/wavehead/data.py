"""Feature datasets: synthetic Gaussian generator, FCAL binary and CSV IO, splits."""

import csv
import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from . import rng as rng_mod
from .errors import (
    BadMagicError,
    FlagSizeError,
    PayloadError,
    SchemaError,
    TruncatedError,
    ValidationError,
    VersionMismatchError,
)

FCAL_MAGIC = b"FCAL"
FCAL_VERSION = 1
FLAG_SOFT = 1
_HEADER = struct.Struct("<4sIIIII")

# separation / sigma that puts 10 equiprobable simplex classes at Bayes accuracy 0.91
DESK_SEPARATION = 3.0535974791759486

OOD_MODES = ("none", "mean_shift", "uniform_noise", "gaussian_noise")


@dataclass
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    soft_labels: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValidationError(f"{self.labels.shape} labels for {n} feature rows")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be positive")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")
        if self.soft_labels is not None:
            q = np.ascontiguousarray(self.soft_labels, dtype=np.float64)
            if q.shape != (n, self.n_classes):
                raise ValidationError(f"soft labels shape {q.shape} != ({n}, {self.n_classes})")
            if n and np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-6:
                raise ValidationError("soft-label rows must sum to 1 within 1e-6")
            self.soft_labels = q

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx, provenance=None):
        idx = np.asarray(idx, dtype=np.intp)
        soft = None if self.soft_labels is None else self.soft_labels[idx]
        return FeatureDataset(
            self.features[idx], self.labels[idx], self.n_classes, soft, provenance or self.provenance
        )

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        if self.soft_labels is not None:
            h.update(self.soft_labels.tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic features


@dataclass(frozen=True)
class SyntheticConfig:
    """Isotropic Gaussian class clusters.

    ``means`` is a ``(C, dim)`` nested list.  For out-of-distribution modes
    the generator draws from a distribution unrelated to the classes:

    * ``mean_shift``: the class clusters translated by ``ood_shift`` along
      the unit all-ones direction;
    * ``uniform_noise``: independent uniform coordinates over the per-axis
      range ``mean +/- 3 sigma`` of the class means;
    * ``gaussian_noise``: a single Gaussian matching the in-distribution
      per-axis mean and variance.
    """

    means: tuple
    sigma: float = 1.0
    priors: tuple | None = None
    n_samples: int = 1000
    ood_mode: str = "none"
    ood_shift: float = 200.0

    def __post_init__(self):
        m = np.asarray(self.means, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValidationError("means must be a non-empty (C, dim) array")
        if not np.all(np.isfinite(m)):
            raise ValidationError("means must be finite")
        object.__setattr__(self, "means", tuple(map(tuple, m.tolist())))
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError("sigma must be positive")
        if self.priors is not None:
            p = np.asarray(self.priors, dtype=np.float64)
            if p.shape != (m.shape[0],) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValidationError("priors must be non-negative, one per class, summing to 1")
            object.__setattr__(self, "priors", tuple(p.tolist()))
        if self.n_samples < 0:
            raise ValidationError("n_samples must be non-negative")
        if self.ood_mode not in OOD_MODES:
            raise ValidationError(f"ood_mode must be one of {OOD_MODES}")

    @property
    def n_classes(self):
        return len(self.means)

    @property
    def dim(self):
        return len(self.means[0])

    def mean_array(self):
        return np.asarray(self.means, dtype=np.float64)

    def prior_array(self):
        if self.priors is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return np.asarray(self.priors, dtype=np.float64)

    def to_dict(self):
        return {
            "means": [list(r) for r in self.means],
            "sigma": self.sigma,
            "priors": None if self.priors is None else list(self.priors),
            "n_samples": self.n_samples,
            "ood_mode": self.ood_mode,
            "ood_shift": self.ood_shift,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "means" not in doc:
            simplex = {k: doc.pop(k) for k in ("n_classes", "dim", "separation", "offset") if k in doc}
            base = simplex_config(sigma=doc.get("sigma", 1.0), **simplex)
            doc["means"] = base.means
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**doc)


def simplex_config(n_classes=10, dim=64, separation=DESK_SEPARATION, offset=0.0, sigma=1.0, **kw):
    """Class means ``separation * sigma * e_k + offset`` (first ``n_classes`` axes)."""
    if n_classes > dim:
        raise ValidationError("simplex means need dim >= n_classes")
    means = np.full((n_classes, dim), float(offset))
    means[np.arange(n_classes), np.arange(n_classes)] += separation * sigma
    return SyntheticConfig(means=means, sigma=sigma, **kw)


# keeps clusters in the positive orthant, like post-ReLU backbone features;
# magnitude readouts are blind to the sign of a centred cluster
DESK_OFFSET = 2.0


def desk_config(n_samples=20000, **kw):
    """Default desk-scale generator: C=10, dim=64, Bayes accuracy 0.91."""
    return simplex_config(10, 64, DESK_SEPARATION, DESK_OFFSET, 1.0, n_samples=n_samples, **kw)


def bayes_posterior(config, X):
    """Exact class posterior ``q_k(x) ∝ pi_k exp(-|x - mu_k|^2 / (2 sigma^2))``."""
    X = np.asarray(X, dtype=np.float64)
    mu = config.mean_array()
    sq = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ mu.T + np.sum(mu * mu, axis=1)[None, :]
    with np.errstate(divide="ignore"):
        logp = np.log(config.prior_array())[None, :] - sq / (2.0 * config.sigma**2)
    return special.softmax(logp, axis=1)


def bayes_accuracy(config):
    """Population accuracy of the Bayes classifier for an equal-prior, equal-gap simplex.

    ``P(correct) = int phi(z) Phi(z + gap / (sqrt(2) sigma))^(C-1) dz`` where
    ``gap`` is the common pairwise distance between means.  Returns ``None``
    if the configuration is not of that form.
    """
    mu = config.mean_array()
    C = mu.shape[0]
    if C == 1:
        return 1.0
    p = config.prior_array()
    dist = np.sqrt(np.sum((mu[:, None, :] - mu[None, :, :]) ** 2, axis=-1))[~np.eye(C, dtype=bool)]
    if np.ptp(p) > 1e-12 or np.ptp(dist) > 1e-9 * dist.max():
        return None
    r = dist[0] / (np.sqrt(2.0) * config.sigma)
    val, _ = integrate.quad(
        lambda z: stats.norm.pdf(z) * stats.norm.cdf(z + r) ** (C - 1), -np.inf, np.inf, epsabs=1e-13
    )
    return float(val)


def generate_synthetic(config, seed, n_samples=None, label=""):
    """Draw a dataset from ``config``; soft labels are the exact Bayes posterior.

    Out-of-distribution modes carry no soft labels; their hard labels record
    the source cluster (``mean_shift``) or are zero.
    """
    n = config.n_samples if n_samples is None else int(n_samples)
    g = rng_mod.stream(seed, "synthetic", config.ood_mode, label)
    mu = config.mean_array()
    C, dim = mu.shape
    sigma = config.sigma
    prov = f"synthetic:{config.ood_mode}:seed={seed}:{label}"
    if config.ood_mode in ("none", "mean_shift"):
        y = g.choice(C, size=n, p=config.prior_array())
        X = mu[y] + sigma * g.normal(size=(n, dim))
        if config.ood_mode == "none":
            return FeatureDataset(X, y, C, bayes_posterior(config, X), prov)
        X = X + config.ood_shift / np.sqrt(dim)
        return FeatureDataset(X, y, C, None, prov)
    if config.ood_mode == "uniform_noise":
        lo = mu.min(axis=0) - 3 * sigma
        hi = mu.max(axis=0) + 3 * sigma
        X = g.uniform(lo, hi, size=(n, dim))
    else:
        p = config.prior_array()
        centre = p @ mu
        var = sigma**2 + p @ (mu - centre) ** 2
        X = centre + np.sqrt(var) * g.normal(size=(n, dim))
    return FeatureDataset(X, np.zeros(n, dtype=np.int64), C, None, prov)


# ---------------------------------------------------------------------------
# FCAL binary format


def write_features(dataset, path):
    n, dim = dataset.features.shape
    flags = FLAG_SOFT if dataset.soft_labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FCAL_MAGIC, FCAL_VERSION, n, dim, dataset.n_classes, flags))
        fh.write(dataset.features.astype("<f4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())
        if dataset.soft_labels is not None:
            fh.write(dataset.soft_labels.astype("<f4").tobytes())


def decode_features(buf, provenance="fcal"):
    """Parse an FCAL byte string.  Every malformation raises a ``FormatError`` subclass."""
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise TruncatedError("header", _HEADER.size, len(buf))
    magic, version, n, dim, C, flags = _HEADER.unpack_from(buf)
    if magic != FCAL_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {FCAL_MAGIC!r}")
    if version != FCAL_VERSION:
        raise VersionMismatchError(f"FCAL version {version} not supported (expected {FCAL_VERSION})")
    if flags & ~FLAG_SOFT:
        raise FlagSizeError(f"unknown flag bits set: {flags:#x}")
    if C == 0:
        raise PayloadError("header declares zero classes")
    if n and dim == 0:
        raise PayloadError("header declares zero-width feature rows")
    sections = [("features", n * dim * 4), ("labels", n * 4)]
    if flags & FLAG_SOFT:
        sections.append(("soft_labels", n * C * 4))
    offset = _HEADER.size
    chunks = {}
    for name, size in sections:
        avail = len(buf) - offset
        if avail < size:
            raise TruncatedError(name, size, max(avail, 0))
        chunks[name] = buf[offset:offset + size]
        offset += size
    extra = len(buf) - offset
    if extra:
        if not flags & FLAG_SOFT and extra == n * C * 4:
            raise FlagSizeError("payload carries a soft-label block but flag bit 0 is clear")
        raise FlagSizeError(f"{extra} unexpected trailing bytes after payload")
    X = np.frombuffer(chunks["features"], dtype="<f4").astype(np.float64).reshape(n, dim)
    y = np.frombuffer(chunks["labels"], dtype="<u4").astype(np.int64)
    if not np.all(np.isfinite(X)):
        raise PayloadError("features contain non-finite values")
    if n and y.max() >= C:
        raise PayloadError(f"label {int(y.max())} out of range for {C} classes")
    q = None
    if "soft_labels" in chunks:
        q = np.frombuffer(chunks["soft_labels"], dtype="<f4").astype(np.float64).reshape(n, C)
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise PayloadError("soft labels must be finite and non-negative")
        if n and np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-6:
            raise PayloadError("soft-label rows do not sum to 1 within 1e-6")
    return FeatureDataset(X, y, int(C), q, provenance)


def read_features(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_features(buf, provenance=f"fcal:{path}")


# ---------------------------------------------------------------------------
# CSV


def _parse_header(header):
    try:
        li = header.index("label")
    except ValueError:
        raise SchemaError("CSV header has no 'label' column") from None
    feats, soft = header[:li], header[li + 1:]
    if not feats:
        raise SchemaError("CSV header has no feature columns")
    if feats != [f"f{i}" for i in range(len(feats))]:
        raise SchemaError("feature columns must be f0, f1, ... in order before 'label'")
    if soft and soft != [f"q{i}" for i in range(len(soft))]:
        raise SchemaError("soft-label columns must be q0, q1, ... in order after 'label'")
    return len(feats), len(soft)


def read_features_csv(path, n_classes=None):
    """Read ``f0..f{dim-1},label[,q0..q{C-1}]``.

    Without a soft block the class count is ``n_classes`` or, if omitted,
    one more than the largest label.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    dim, n_soft = _parse_header(header)
    width = len(header)
    X, y, Q = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise SchemaError(f"{path}:{lineno}: expected {width} cells, found {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        lab = vals[dim]
        if lab != int(lab) or lab < 0:
            raise SchemaError(f"{path}:{lineno}: label {row[dim]!r} is not a non-negative integer")
        X.append(vals[:dim])
        y.append(int(lab))
        Q.append(vals[dim + 1:])
    X = np.asarray(X, dtype=np.float64).reshape(-1, dim)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise SchemaError(f"{path}: non-finite feature values")
    if n_soft:
        C = n_soft
        if y.size and y.max() >= C:
            raise SchemaError(f"{path}: label {int(y.max())} >= number of soft-label columns {C}")
        q = np.asarray(Q, dtype=np.float64).reshape(-1, C)
    else:
        C = n_classes if n_classes is not None else (int(y.max()) + 1 if y.size else 1)
        q = None
    try:
        return FeatureDataset(X, y, C, q, f"csv:{path}")
    except ValidationError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def write_features_csv(dataset, path):
    dim = dataset.dim
    header = [f"f{i}" for i in range(dim)] + ["label"]
    if dataset.soft_labels is not None:
        header += [f"q{i}" for i in range(dataset.n_classes)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]] + [str(int(dataset.labels[i]))]
            if dataset.soft_labels is not None:
                row += [repr(float(v)) for v in dataset.soft_labels[i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# splitting


def split(dataset, fractions, seed):
    """Disjoint, exhaustive, label-stratified partition.

    Samples are shuffled within their class and each is keyed by its
    relative rank in the class; cutting the key-sorted sequence at the
    cumulative fractions keeps every class within one sample of its
    proportional share in each part.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValidationError(f"fractions must be non-negative and sum to 1, got {list(fractions)}")
    n = len(dataset)
    g = rng_mod.stream(seed, "split")
    key = np.empty(n)
    labels = dataset.labels
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        order = g.permutation(idx.size)
        key[idx[order]] = (np.arange(idx.size) + 0.5) / idx.size
    tiebreak = g.permutation(n)
    seq = np.lexsort((tiebreak, key))
    bounds = np.rint(np.concatenate([[0.0], np.cumsum(fr)]) * n).astype(int)
    bounds[-1] = n
    parts = []
    for j in range(fr.size):
        idx = np.sort(seq[bounds[j]:bounds[j + 1]])
        parts.append(dataset.subset(idx, f"{dataset.provenance}|split{j}/{len(fr)}:seed={seed}"))
    return parts

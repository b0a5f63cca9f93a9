"""Split real/imaginary complex arithmetic and the Cayley map.

Complex states are kept as two real arrays.  The unitary generator is real
skew-symmetric, so the evolved operator is real orthogonal and acts on the
real and imaginary parts independently.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DegenerateStateError, DimensionError, ValidationError

NORM_FLOOR = 1e-12
SKEW_TOL = 1e-12


@dataclass(frozen=True)
class ComplexVector:
    """A vector (or a stack of vectors along the leading axes) in C^d.

    ``re`` and ``im`` share a shape; the last axis is the Hilbert dimension.
    """

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise DimensionError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
        if re.ndim == 0:
            raise DimensionError("complex vector needs at least one axis")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self):
        return self.re + 1j * self.im

    @property
    def dim(self):
        return self.re.shape[-1]

    def norm_sq(self):
        return np.sum(self.re * self.re + self.im * self.im, axis=-1)

    def norm(self):
        return np.sqrt(self.norm_sq())


# A measurement set is a (C, d) stack of complex vectors.
MeasurementSet = ComplexVector


def _square(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def skew_symmetrize(A):
    """Return ``S = A - A^T``; the mirror entry is the exact negation."""
    return kernels.skew(_square(A, "A"))


def lu_factor(M):
    """Partial-pivot LU of a square matrix; raises ``SingularMatrixError``."""
    return kernels.lu_factor(_square(M))


def lu_solve(M, B, factor=None):
    """Solve ``M X = B``.

    ``factor`` may carry a precomputed ``lu_factor(M)`` to reuse across
    right-hand sides.
    """
    M = _square(M)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != M.shape[0]:
        raise DimensionError(f"right-hand side has {B.shape[0]} rows, matrix is {M.shape}")
    lu, perm = factor if factor is not None else kernels.lu_factor(M)
    return kernels.lu_solve(lu, perm, B)


def check_skew(S, tol=SKEW_TOL):
    S = _square(S, "S")
    err = np.max(np.abs(S + S.T)) if S.size else 0.0
    if err > tol:
        raise ValidationError(f"matrix is not skew-symmetric (max |S + S^T| = {err:.3e})")
    return S


def cayley_factored(S, check=True):
    """Cayley transform plus the LU factors of ``I + S`` for reuse in gradients.

    ``(I - S)`` and ``(I + S)^{-1}`` commute, so ``U = (I + S)^{-1} (I - S)``
    is a single solve against the factored ``I + S``.
    """
    S = check_skew(S) if check else np.asarray(S, dtype=np.float64)
    eye = np.eye(S.shape[0])
    factor = kernels.lu_factor(eye + S)
    U = kernels.lu_solve(*factor, eye - S)
    return U, factor


def cayley(S, check=True):
    """``U = (I - S)(I + S)^{-1}`` for real skew-symmetric ``S``."""
    return cayley_factored(S, check=check)[0]


def apply_orthogonal(U, psi):
    U = _square(U, "U")
    if psi.dim != U.shape[0]:
        raise DimensionError(f"state dimension {psi.dim} does not match U {U.shape}")
    return ComplexVector(psi.re @ U.T, psi.im @ U.T)


def hermitian_inner(m, psi):
    """``<m|psi> = sum conj(m_i) psi_i`` (conjugate-linear in ``m``)."""
    if m.dim != psi.dim:
        raise DimensionError(f"dimension mismatch: {m.dim} vs {psi.dim}")
    real = np.sum(m.re * psi.re + m.im * psi.im, axis=-1)
    imag = np.sum(m.re * psi.im - m.im * psi.re, axis=-1)
    return real + 1j * imag


def magnitude(psi):
    return np.sqrt(psi.re * psi.re + psi.im * psi.im)


def normalize(psi0, floor=NORM_FLOOR):
    """Scale each state to unit norm; near-zero states raise ``DegenerateStateError``."""
    norm = psi0.norm()
    bad = ~(norm > floor)
    if np.any(bad):
        where = np.flatnonzero(np.atleast_1d(bad))
        raise DegenerateStateError(
            f"state norm below {floor:g} at index {where[:5].tolist()}; cannot normalise"
        )
    norm = norm[..., None]
    return ComplexVector(psi0.re / norm, psi0.im / norm)

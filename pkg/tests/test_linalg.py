import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehead import linalg
from wavehead.errors import DegenerateStateError, DimensionError, SingularMatrixError, ValidationError
from wavehead.linalg import ComplexVector

from conftest import random_skew


def cv(*z):
    return ComplexVector.from_complex(np.array(z, dtype=complex))


def test_complex_vector_validation():
    with pytest.raises(DimensionError):
        ComplexVector(np.zeros(3), np.zeros(2))
    v = cv(3, 4j)
    assert v.dim == 2
    assert v.norm_sq() == pytest.approx(25.0)


@pytest.mark.parametrize(
    "A, S",
    [
        (np.zeros((2, 2)), np.zeros((2, 2))),
        ([[1.0, 2.0], [3.0, 4.0]], [[0.0, -1.0], [1.0, 0.0]]),
        (np.eye(3), np.zeros((3, 3))),
    ],
)
def test_skew_symmetrize(backend, A, S):
    np.testing.assert_array_equal(linalg.skew_symmetrize(A), S)


def test_skew_symmetrize_rejects_non_square():
    with pytest.raises(DimensionError):
        linalg.skew_symmetrize(np.zeros((2, 3)))


def test_lu_solve_examples(backend, rng):
    B = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(linalg.lu_solve(np.eye(4), B), B)
    X = linalg.lu_solve([[2.0, 0.0], [0.0, 4.0]], [[2.0], [8.0]])
    np.testing.assert_allclose(X, [[1.0], [2.0]], atol=1e-15)
    with pytest.raises(SingularMatrixError):
        linalg.lu_solve([[1.0, 1.0], [1.0, 1.0]], [[1.0], [2.0]])


def test_lu_solve_reuses_factor(backend, rng):
    M = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    f = linalg.lu_factor(M)
    B = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(linalg.lu_solve(M, B, factor=f), linalg.lu_solve(M, B))
    with pytest.raises(DimensionError):
        linalg.lu_solve(M, np.zeros((4, 1)))


@pytest.mark.parametrize(
    "S, U",
    [
        (np.zeros((3, 3)), np.eye(3)),
        ([[0.0, 1.0], [-1.0, 0.0]], [[0.0, -1.0], [1.0, 0.0]]),
        ([[0.0, 0.5], [-0.5, 0.0]], [[0.6, -0.8], [0.8, 0.6]]),
    ],
)
def test_cayley_examples(backend, S, U):
    np.testing.assert_allclose(linalg.cayley(np.array(S)), U, atol=1e-15)


def test_cayley_rejects_non_skew():
    with pytest.raises(ValidationError):
        linalg.cayley(np.eye(2))


def test_cayley_matches_dense_oracle(backend, rng):
    S = random_skew(rng, 16)
    eye = np.eye(16)
    oracle = (eye - S) @ np.linalg.inv(eye + S)
    np.testing.assert_allclose(linalg.cayley(S), oracle, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 24), st.integers(0, 2**32 - 1), st.floats(0.01, 10.0))
def test_cayley_orthogonal_property(d, seed, scale):
    S = random_skew(np.random.default_rng(seed), d, scale)
    U = linalg.cayley(S)
    assert np.max(np.abs(U.T @ U - np.eye(d))) < 1e-10
    # no eigenvalue -1: det(U) = +1
    assert np.linalg.det(U) == pytest.approx(1.0, abs=1e-8)


def test_apply_orthogonal_examples():
    psi = cv(1, 0)
    out = linalg.apply_orthogonal(np.eye(2), psi)
    np.testing.assert_array_equal(out.to_complex(), psi.to_complex())
    out = linalg.apply_orthogonal(np.array([[0.0, -1.0], [1.0, 0.0]]), psi)
    np.testing.assert_allclose(out.to_complex(), [0, 1], atol=0)
    with pytest.raises(DimensionError):
        linalg.apply_orthogonal(np.eye(3), psi)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_apply_orthogonal_isometry(d, seed):
    g = np.random.default_rng(seed)
    U = linalg.cayley(random_skew(g, d))
    psi = linalg.normalize(ComplexVector(g.normal(size=d), g.normal(size=d)))
    assert linalg.apply_orthogonal(U, psi).norm() == pytest.approx(1.0, abs=1e-10)


def test_apply_orthogonal_batch_matches_rows(rng):
    U = linalg.cayley(random_skew(rng, 4))
    batch = ComplexVector(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    out = linalg.apply_orthogonal(U, batch)
    for i in range(3):
        z = U @ batch.to_complex()[i]
        np.testing.assert_allclose(out.to_complex()[i], z, atol=1e-14)


def test_hermitian_inner_examples():
    assert linalg.hermitian_inner(cv(1, 0), cv(1, 0)) == 1
    assert linalg.hermitian_inner(cv(1, 0), cv(1j, 0)) == 1j
    m = cv((1 + 1j) / np.sqrt(2), 0)
    assert linalg.hermitian_inner(m, cv(1, 0)) == pytest.approx((1 - 1j) / np.sqrt(2), abs=1e-15)


def test_hermitian_inner_matches_vdot(rng):
    a = rng.normal(size=6) + 1j * rng.normal(size=6)
    b = rng.normal(size=6) + 1j * rng.normal(size=6)
    got = linalg.hermitian_inner(ComplexVector.from_complex(a), ComplexVector.from_complex(b))
    assert got == pytest.approx(np.vdot(a, b), abs=1e-13)


def test_magnitude_examples():
    np.testing.assert_allclose(linalg.magnitude(cv(0.6j, 0.8j)), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(linalg.magnitude(cv(-2, 3)), [2, 3])
    np.testing.assert_array_equal(linalg.magnitude(cv(0, 0)), [0, 0])


def test_normalize_examples():
    out = linalg.normalize(cv(3, 4j))
    np.testing.assert_allclose(out.to_complex(), [0.6, 0.8j], atol=1e-15)
    unit = cv(0.6, 0.8j)
    np.testing.assert_allclose(linalg.normalize(unit).to_complex(), unit.to_complex(), atol=1e-16)
    with pytest.raises(DegenerateStateError):
        linalg.normalize(cv(0, 0))
    with pytest.raises(DegenerateStateError):
        linalg.normalize(ComplexVector(np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros((2, 2))))

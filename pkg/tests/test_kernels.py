import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavehead import _pykernels
from wavehead.errors import SingularMatrixError

from conftest import BACKENDS

compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_backend_reported():
    import wavehead

    assert wavehead.BACKEND in ("compiled", "python")


def test_lu_reconstructs(backend, rng):
    for d in (1, 2, 7, 30):
        M = rng.normal(size=(d, d))
        lu, perm = backend.lu_factor(M)
        L = np.tril(lu, -1) + np.eye(d)
        U = np.triu(lu)
        np.testing.assert_allclose(L @ U, M[perm], atol=1e-12)


def test_lu_solve_matches_numpy(backend, rng):
    M = rng.normal(size=(12, 12)) + 12 * np.eye(12)
    B = rng.normal(size=(12, 5))
    X = backend.lu_solve(*backend.lu_factor(M), B)
    np.testing.assert_allclose(X, np.linalg.solve(M, B), atol=1e-12)
    x = backend.lu_solve(*backend.lu_factor(M), B[:, 0])
    np.testing.assert_allclose(x, np.linalg.solve(M, B[:, 0]), atol=1e-12)


def test_singular_raises(backend):
    with pytest.raises(SingularMatrixError):
        backend.lu_factor(np.ones((2, 2)))
    with pytest.raises(SingularMatrixError):
        backend.lu_factor(np.zeros((3, 3)))


def test_skew_mirror_exact(backend, rng):
    A = rng.normal(size=(9, 9))
    S = backend.skew(A)
    assert np.array_equal(S, -S.T)
    np.testing.assert_array_equal(np.diag(S), 0.0)


def test_ece_bins_edges(backend):
    conf = np.array([0.0, 1 / 15, 2 / 15 - 1e-12, 0.5, 14 / 15, 1.0])
    correct = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    counts, sconf, scorr = backend.ece_bin_stats(conf, correct, 15)
    np.testing.assert_array_equal(counts, np.bincount([0, 1, 1, 7, 14, 14], minlength=15))
    assert counts.sum() == conf.size
    assert scorr.sum() == correct.sum()


@compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_lu_parity(d, seed):
    ck = BACKENDS["compiled"]
    g = np.random.default_rng(seed)
    M = g.normal(size=(d, d)) + 0.1 * np.eye(d)
    B = g.normal(size=(d, 3))
    lu_p, perm_p = _pykernels.lu_factor(M)
    lu_c, perm_c = ck.lu_factor(M)
    np.testing.assert_array_equal(perm_p, perm_c)
    np.testing.assert_allclose(lu_p, lu_c, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(_pykernels.lu_solve(lu_p, perm_p, B), ck.lu_solve(lu_c, perm_c, B),
                               rtol=1e-10, atol=1e-12)


@compiled
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)).map(lambda t: (t[0], t[0])),
              elements=finite))
def test_skew_parity(A):
    np.testing.assert_array_equal(_pykernels.skew(A), BACKENDS["compiled"].skew(A))


@compiled
@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1)), st.integers(1, 30))
def test_ece_parity(conf, nb):
    correct = (np.arange(conf.size) % 3 == 0).astype(np.float64)
    a = _pykernels.ece_bin_stats(conf, correct, nb)
    b = BACKENDS["compiled"].ece_bin_stats(conf, correct, nb)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_env_var_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, WAVEHEAD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import wavehead; print(wavehead.BACKEND)"],
                         capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "python"

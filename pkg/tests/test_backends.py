import numpy as np
import pytest

from listmean import rng as rng_mod
from listmean.backend import backend_name, get_backend
from listmean.filtering import _stack_coeffs
from listmean.search import gaussian_moment_targets

np_backend = get_backend("numpy")
try:
    nb_backend = get_backend("numba")
except RuntimeError:  # pragma: no cover
    nb_backend = None

needs_numba = pytest.mark.skipif(nb_backend is None, reason="numba unavailable")


def _instance(seed=0, n=300, d=4):
    gen = rng_mod.stream(seed, "backend")
    X = np.vstack([gen.standard_normal((n // 2, d)),
                   gen.standard_normal((n // 2, d)) + 4.0])
    return X


@needs_numba
def test_gram_rowsums_backends_agree():
    X = _instance()
    sq = np.einsum("nd,nd->n", X, X)
    coefs = _stack_coeffs([1, 2, 3, 4], X.shape[1])
    alive = np.ones(X.shape[0], dtype=bool)
    alive[10:20] = False
    a = np_backend.gram_rowsums(X, sq, coefs, alive)
    b = nb_backend.gram_rowsums(X, sq, coefs, alive)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-8)


@needs_numba
def test_gram_columns_backends_agree():
    X = _instance(1)
    sq = np.einsum("nd,nd->n", X, X)
    coefs = _stack_coeffs([1, 2], X.shape[1])
    adot = X @ X[7]
    a = np_backend.gram_columns(adot, sq, sq[7], coefs)
    b = nb_backend.gram_columns(adot, sq, sq[7], coefs)
    np.testing.assert_allclose(a, b, rtol=1e-12)


@needs_numba
def test_projection_backends_agree():
    gen = rng_mod.stream(2, "proj")
    for _ in range(50):
        n = int(gen.integers(1, 40))
        v = gen.normal(0, 3, n)
        budget = float(gen.uniform(0, n))
        a = np_backend.project_capped_simplex(v, budget)
        b = nb_backend.project_capped_simplex(v, budget)
        np.testing.assert_allclose(a, b, atol=1e-9)


@needs_numba
def test_pgd_backends_same_decisions():
    X = _instance(3, n=400, d=3)
    g = gaussian_moment_targets(3, 2)
    budget = 0.4 * X.shape[0]
    gen = rng_mod.stream(4, "cand")
    for _ in range(15):
        z = gen.normal(0, 1.5, 3)
        outs = []
        for be in (np_backend, nb_backend):
            w, obj, acc, iters, flag, gaps = be.pgd_fit(
                X, z, g, budget, 2, 0.25, 200, 20, 1e-7, False, 10, 25.0,
                5e-3, False)
            outs.append((obj, acc, gaps))
        assert outs[0][1] == outs[1][1]
        assert outs[0][0] == pytest.approx(outs[1][0], rel=2e-3, abs=1e-6)
        np.testing.assert_allclose(outs[0][2], outs[1][2], rtol=5e-3, atol=1e-5)


@needs_numba
def test_pgd_batch_matches_single():
    X = _instance(5, n=200, d=3)
    g = gaussian_moment_targets(3, 2)
    budget = 0.5 * X.shape[0]
    Z = rng_mod.stream(6, "batch").normal(0, 1.0, (8, 3))
    for be in (np_backend, nb_backend):
        m = Z.shape[0]
        obj = np.empty(m)
        acc = np.empty(m, np.int64)
        iters = np.empty(m, np.int64)
        flags = np.empty(m, np.int64)
        gaps = np.empty((m, 2))
        skip = np.zeros(m, dtype=np.uint8)
        skip[3] = 1
        be.pgd_fit_batch(X, Z, g, budget, 2, 0.25, 150, 20, 1e-7, True, 10,
                         25.0, 5e-3, False, skip, obj, acc, iters, flags, gaps)
        assert flags[3] == 5 and obj[3] == np.inf
        for c in (0, 1, 5):
            w, obj_s, acc_s, *_ = be.pgd_fit(
                X, Z[c], g, budget, 2, 0.25, 150, 20, 1e-7, True, 10, 25.0,
                5e-3, False)
            assert obj[c] == pytest.approx(obj_s, rel=1e-12, abs=1e-15)
            assert bool(acc[c]) == acc_s


def test_backend_selection_env(monkeypatch):
    monkeypatch.setenv("LISTMEAN_BACKEND", "numpy")
    import importlib

    import listmean.backend as bk

    importlib.reload(bk)
    assert bk.backend_name() == "numpy"
    monkeypatch.setenv("LISTMEAN_BACKEND", "bogus")
    importlib.reload(bk)
    with pytest.raises(ValueError):
        bk.backend_name()
    monkeypatch.delenv("LISTMEAN_BACKEND")
    importlib.reload(bk)
    assert bk.backend_name() in ("numba", "numpy")


def test_active_backend_reported():
    assert backend_name() in ("numba", "numpy")

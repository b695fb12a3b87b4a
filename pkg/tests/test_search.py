import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from listmean import rng as rng_mod
from listmean.filtering import Dataset, Subspace
from listmean.search import (
    Candidate,
    CandidateList,
    CoverSizeError,
    InfeasibleBudgetError,
    SearchParams,
    SolverParams,
    Weights,
    build_cover,
    capped_simplex_kkt_residual,
    fit_weights,
    gaussian_moment_targets,
    moment_objective,
    per_order_gaps,
    project_capped_simplex,
    search,
)

RNG = np.random.default_rng(31)


# ---------------------------------------------------------------- cover

def test_cover_one_dimensional():
    pts = build_cover(1.0, 1.0, 1)
    np.testing.assert_allclose(sorted(pts.reshape(-1)), [-1.0, 0.0, 1.0])


def test_cover_zero_radius():
    pts = build_cover(0.0, 0.5, 2)
    np.testing.assert_allclose(pts, np.zeros((1, 2)))


def test_cover_is_a_valid_net():
    r, eps_prime, d = 1.0, 0.5, 2
    cover = build_cover(r, eps_prime, d)
    gen = np.random.default_rng(5)
    # rejection-sample ball points, check nearest cover distance
    for _ in range(10_000 // 64):
        cand = gen.uniform(-r, r, size=(64, d))
        cand = cand[np.linalg.norm(cand, axis=1) <= r]
        for p in cand:
            dmin = np.min(np.linalg.norm(cover - p[None, :], axis=1))
            assert dmin <= eps_prime + 1e-9


def test_cover_inside_ball_and_sorted():
    cover = build_cover(1.3, 0.4, 3)
    assert np.all(np.linalg.norm(cover, axis=1) <= 1.3 + 1e-9)
    as_tuples = [tuple(row) for row in cover]
    assert as_tuples == sorted(as_tuples)


def test_cover_cap():
    with pytest.raises(CoverSizeError):
        build_cover(10.0, 0.01, 4, cover_cap=1000)


# ---------------------------------------------------------------- projection

def test_projection_identity_when_feasible():
    v = np.array([0.3, 0.4, 0.3])
    w = project_capped_simplex(v, 1.0)
    np.testing.assert_allclose(w.values, v, atol=1e-9)


def test_projection_known_cases():
    w = project_capped_simplex(np.array([2.0, 0.0]), 1.0)
    np.testing.assert_allclose(w.values, [1.0, 0.0], atol=1e-9)
    w = project_capped_simplex(np.array([0.6, 0.6]), 1.0)
    np.testing.assert_allclose(w.values, [0.5, 0.5], atol=1e-9)


def test_projection_infeasible_budget():
    with pytest.raises(InfeasibleBudgetError):
        project_capped_simplex(np.zeros(3), 4.0)
    with pytest.raises(InfeasibleBudgetError):
        project_capped_simplex(np.zeros(3), -0.5)


def _grid_qp_oracle(v, budget, steps=400):
    """Exhaustive scan over the one-dimensional shift parameterization.

    The optimum has the form clip(v - theta); scanning theta densely plus
    the exact breakpoints gives the optimal w for small n.
    """
    cands = np.concatenate([
        np.linspace(np.min(v) - 1.5, np.max(v) + 0.5, steps),
        v, v - 1.0,
    ])
    best, best_dist = None, np.inf
    for theta in cands:
        w = np.clip(v - theta, 0.0, 1.0)
        s = w.sum()
        if s == 0:
            continue
        # correct the mass by a secant step on theta where possible
        dist = abs(s - budget)
        if dist < best_dist:
            best, best_dist = w, dist
    return best


def test_projection_matches_bruteforce_grid():
    gen = np.random.default_rng(17)
    for _ in range(200):
        n = gen.integers(1, 5)
        v = gen.uniform(-2, 3, size=n)
        budget = float(gen.uniform(0, n))
        w = project_capped_simplex(v, budget).values
        # brute force on the simplex slice: dense grid over feasible w
        best = _brute_simplex_min(v, budget)
        assert np.sum((w - v) ** 2) <= best + 1e-4


def _brute_simplex_min(v, budget, steps=25):
    n = v.shape[0]
    axes = [np.linspace(0.0, 1.0, steps)] * (n - 1)
    best = np.inf
    for combo in itertools.product(*axes):
        last = budget - sum(combo)
        if last < -1e-9 or last > 1.0 + 1e-9:
            continue
        w = np.array(list(combo) + [min(max(last, 0.0), 1.0)])
        best = min(best, float(np.sum((w - v) ** 2)))
    return best


def test_projection_kkt_residuals_random():
    gen = np.random.default_rng(23)
    for _ in range(500):
        n = int(gen.integers(1, 51))
        v = gen.normal(0, 2, size=n)
        budget = float(gen.uniform(0, n))
        w = project_capped_simplex(v, budget).values
        assert capped_simplex_kkt_residual(v, w, budget) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0, 1))
def test_projection_kkt_property(vals, frac):
    v = np.array(vals)
    budget = frac * len(vals)
    w = project_capped_simplex(v, budget).values
    assert capped_simplex_kkt_residual(v, w, budget) <= 1e-8
    assert np.all(w >= -1e-12) and np.all(w <= 1 + 1e-12)


# ---------------------------------------------------------------- objective

def test_moment_objective_point_mass():
    # alpha*n copies of mu' with unit weight plus zero-weight outliers:
    # first moment matches, second moment misses identity by sqrt(d)
    d, n_in, n_out = 3, 20, 10
    mu_prime = RNG.standard_normal(d)
    pts = np.vstack([np.tile(mu_prime, (n_in, 1)),
                     RNG.standard_normal((n_out, d)) + 8.0])
    w = np.concatenate([np.ones(n_in), np.zeros(n_out)])
    alpha = n_in / (n_in + n_out)
    obj = moment_objective(mu_prime, w, pts, 2, alpha)
    assert obj == pytest.approx(d, rel=1e-9)


def test_moment_objective_true_inliers_small():
    d, n = 3, 60_000
    mu = RNG.standard_normal(d)
    pts = mu + np.random.default_rng(3).standard_normal((n, d))
    obj = moment_objective(mu, np.ones(n), pts, 2, 1.0)
    assert obj <= 0.01


def test_moment_objective_shift_adds_first_moment_gap():
    d, n = 2, 5000
    mu = np.zeros(d)
    pts = np.random.default_rng(8).standard_normal((n, d))
    w = np.ones(n)
    base = per_order_gaps(mu, w, pts, 2, 1.0)
    shift = np.array([0.8, 0.0])
    shifted = per_order_gaps(mu + shift, w, pts, 2, 1.0)
    assert shifted[0] >= np.linalg.norm(shift) - base[0] - 1e-9


def test_moment_objective_convexity_witness():
    d, n = 2, 50
    pts = RNG.standard_normal((n, d))
    mu = RNG.standard_normal(d) * 0.2
    for _ in range(20):
        w1 = RNG.uniform(0, 1, n)
        w2 = RNG.uniform(0, 1, n)
        lam = float(RNG.uniform())
        mix = moment_objective(mu, lam * w1 + (1 - lam) * w2, pts, 2, 0.5)
        bound = (lam * moment_objective(mu, w1, pts, 2, 0.5)
                 + (1 - lam) * moment_objective(mu, w2, pts, 2, 0.5))
        assert mix <= bound + 1e-9


def test_gaussian_moment_targets_layout():
    g = gaussian_moment_targets(2, 2)
    np.testing.assert_allclose(g[:2], 0.0)
    np.testing.assert_allclose(g[2:].reshape(2, 2), np.eye(2))


# ---------------------------------------------------------------- fit_weights

def _params(**kw):
    base = dict(r=2.0, eps=0.5, alpha=0.3, k_star=2, moment_tol=0.5)
    base.update(kw)
    return SearchParams(**base)


def test_fit_weights_pure_inliers_accepted():
    gen = rng_mod.stream(0, "fit-pure")
    d, n = 2, 2000
    mu = np.array([0.4, -0.2])
    pts = mu + gen.standard_normal((n, d))
    ds = Dataset(points=pts, alpha=0.5)
    cand = fit_weights(mu, ds, _params(alpha=0.5))
    assert cand.accepted
    assert cand.objective <= 0.25
    assert np.all(cand.per_order_gaps <= 0.5)
    w = cand.weights
    assert abs(w.values.sum() - 0.5 * n) <= 1e-6 * n


def test_fit_weights_far_candidate_rejected():
    # candidate 4*Delta off along a direction orthogonal to the far mass
    gen = rng_mod.stream(1, "fit-far")
    d, n = 2, 1500
    mu = np.zeros(d)
    n_in = round(0.5 * n)
    pts = np.vstack([
        mu + gen.standard_normal((n_in, d)),
        np.tile([1000.0, 0.0], (n - n_in, 1)),
    ])
    ds = Dataset(points=pts, alpha=0.5)
    p = _params(alpha=0.5, moment_tol=0.4)
    mu_prime = mu + np.array([0.0, 4 * p.moment_tol])
    cand = fit_weights(mu_prime, ds, p)
    assert not cand.accepted
    assert cand.objective > p.moment_tol ** 2


def test_fit_weights_budget_equals_n():
    # budget forces w = 1: no optimization freedom
    d, n = 2, 300
    pts = RNG.standard_normal((n, d))
    ds = Dataset(points=pts, alpha=1.0)
    p = _params(alpha=1.0)
    mu_prime = np.array([0.1, 0.0])
    cand = fit_weights(mu_prime, ds, p)
    direct = moment_objective(mu_prime, np.ones(n), pts, 2, 1.0)
    assert cand.objective == pytest.approx(direct, rel=1e-9)
    np.testing.assert_allclose(cand.weights.values, 1.0, atol=1e-9)


def test_fit_weights_trace_monotone():
    gen = rng_mod.stream(2, "fit-trace")
    d, n = 2, 400
    pts = np.vstack([gen.standard_normal((n // 2, d)),
                     gen.standard_normal((n // 2, d)) + 3.0])
    ds = Dataset(points=pts, alpha=0.5)
    cand, trace = fit_weights(np.zeros(d), ds, _params(alpha=0.5),
                              record_trace=True)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))
    # reference loop and kernel path agree on the objective
    kernel_cand = fit_weights(np.zeros(d), ds, _params(alpha=0.5))
    assert kernel_cand.objective == pytest.approx(cand.objective, rel=1e-6, abs=1e-9)


# ---------------------------------------------------------------- search

def test_search_no_acceptance_empty():
    gen = rng_mod.stream(3, "search-empty")
    pts = np.tile([50.0, 50.0], (200, 1)) + 0.01 * gen.standard_normal((200, 2))
    ds = Dataset(points=pts, alpha=0.3)
    out = search(ds, _params(eps_prime=0.25), np.zeros(2))
    assert out.entries == []
    assert out.min_error(np.zeros(2)) == np.inf


def test_search_recovers_planted_subspace_instance():
    hits = 0
    for seed in range(10):
        gen = rng_mod.stream(seed, "search-planted")
        d, n, alpha = 6, 1500, 0.3
        B = np.linalg.qr(gen.standard_normal((d, 2)))[0].T  # 2 x d basis
        z_true = np.array([0.9, -0.6])
        mu = B.T @ z_true
        n_in = round(alpha * n)
        pts = np.vstack([
            mu + gen.standard_normal((n_in, d)),
            3.0 * gen.standard_normal((n - n_in, d)) + np.array([4.0, 0, 0, 0, 0, 0]),
        ])
        ds = Dataset(points=pts, alpha=alpha)
        params = _params(r=1.6, eps=0.5, alpha=alpha, eps_prime=0.25,
                         solver=SolverParams(max_iters=150, accept_break=True,
                                             prefilter=True))
        out = search(ds, params, np.zeros(d), Subspace(d, B))
        if out.min_error(mu) <= 0.5:
            hits += 1
    assert hits >= 9


def test_search_two_clusters_found():
    gen = rng_mod.stream(4, "search-two")
    d, n = 2, 2000
    mu1 = np.array([1.5, 0.0])
    mu2 = np.array([-1.5, 0.0])
    n1 = n2 = 700
    pts = np.vstack([
        mu1 + gen.standard_normal((n1, d)),
        mu2 + gen.standard_normal((n2, d)),
        20.0 * gen.standard_normal((n - n1 - n2, d)),
    ])
    ds = Dataset(points=pts, alpha=0.3)
    params = _params(r=2.5, eps=0.5, alpha=0.3, eps_prime=0.25,
                     solver=SolverParams(max_iters=150, accept_break=True,
                                         prefilter=True))
    out = search(ds, params, np.zeros(d))
    assert out.min_error(mu1) <= 0.5
    assert out.min_error(mu2) <= 0.5
    out.assert_separated()


def test_search_deterministic():
    gen = rng_mod.stream(5, "search-det")
    pts = gen.standard_normal((500, 2))
    ds = Dataset(points=pts, alpha=0.5)
    params = _params(r=1.0, eps=0.5, alpha=0.5, eps_prime=0.25)
    a = search(ds, params, np.zeros(2))
    b = search(ds, params, np.zeros(2))
    assert a.to_json() == b.to_json()


def test_weights_validation():
    with pytest.raises(ValueError):
        Weights(values=np.array([0.5, 1.5]), budget=2.0)
    with pytest.raises(ValueError):
        Weights(values=np.array([0.5, 0.5]), budget=2.0)
    w = Weights(values=np.array([0.25, 0.75]), budget=1.0)
    dig = w.digest()
    assert set(dig) == {"sum", "min", "max", "sha256"}


def test_candidate_list_separation_assert():
    c1 = Candidate(mu=np.zeros(2), weights=None, objective=0.1, accepted=True)
    c2 = Candidate(mu=np.array([0.05, 0.0]), weights=None, objective=0.2, accepted=True)
    with pytest.raises(AssertionError):
        CandidateList(entries=[c1, c2], eps=0.5)


def test_fit_weights_nonconvergence_flag():
    gen = rng_mod.stream(7, "fit-cap")
    pts = np.vstack([gen.standard_normal((300, 2)),
                     gen.standard_normal((300, 2)) + 2.5])
    ds = Dataset(points=pts, alpha=0.5)
    p = _params(alpha=0.5, solver=SolverParams(max_iters=1))
    cand = fit_weights(np.zeros(2), ds, p)
    assert not cand.converged


def test_search_list_size_stays_small_on_single_gaussian():
    gen = rng_mod.stream(8, "search-size")
    mu = np.array([0.4, -0.3])
    pts = mu + gen.standard_normal((1500, 2))
    ds = Dataset(points=pts, alpha=0.6)
    params = _params(r=1.5, eps=0.5, alpha=0.6, eps_prime=0.25,
                     solver=SolverParams(max_iters=150, accept_break=True,
                                         prefilter=True))
    out = search(ds, params, np.zeros(2))
    assert 1 <= len(out.entries) <= 64
    assert not out.truncated
    assert out.min_error(mu) <= 0.5


def test_weights_sidecar_file(tmp_path):
    gen = rng_mod.stream(9, "sidecar")
    mu = np.array([0.2, 0.1])
    pts = mu + gen.standard_normal((400, 2))
    ds = Dataset(points=pts, alpha=0.5)
    params = _params(r=1.0, eps=0.5, alpha=0.5, eps_prime=0.3)
    out = search(ds, params, np.zeros(2))
    assert out.entries
    path = tmp_path / "weights.bin"
    out.write_weights_sidecar(path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    assert raw.size == len(out.entries) * 400
    np.testing.assert_allclose(raw[:400], out.entries[0].weights.values)

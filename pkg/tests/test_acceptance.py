"""Acceptance suite: one test per criterion, each printing a pass/fail line
with its runtime against the stated budget.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete.  Statistical criteria use fixed seeds and five-sigma bands or
seeded hit counts as stated.
"""

import json
import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from listmean import rng as rng_mod
from listmean.datasets import AdversaryStrategy, dataset_to_json, generate
from listmean.filtering import Dataset, FilterParams, learn_subspace, run_filter, norm_threshold, extract_subspace
from listmean.oracle import (
    CenterConfig,
    fattening_containment_test,
    log_density_gaussian,
    lower_bound_instance,
    normal_cdf,
    alpha_consistency_check,
    argmax_prob,
    upper_tail_quantile,
    voronoi_mass,
)
from listmean.pipeline import (
    CoarseParams,
    PipelineConfig,
    TournamentInput,
    estimate,
    tournament,
    trusted_sample_size,
)
from listmean.search import (
    SearchParams,
    SolverParams,
    capped_simplex_kkt_residual,
    project_capped_simplex,
    search,
)
from listmean.tensors import (
    gauss_hermite_nodes,
    hermite_scalar,
    hermite_second_moment,
    hermite_square_moment,
    hermite_tensor,
    hermite_tensor_batch,
    hermite_tensor_partition,
)


@contextmanager
def criterion(number: int, label: str, budget_s: float):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        elapsed = time.perf_counter() - t0
        print(f"FAIL criterion {number} [{label}] after {elapsed:.1f}s")
        raise
    elapsed = time.perf_counter() - t0
    print(f"PASS criterion {number} [{label}] ({elapsed:.1f}s <= {budget_s:.0f}s)")
    assert elapsed <= budget_s, f"criterion {number} exceeded its {budget_s}s budget"


def _vec_power(v, k):
    out = np.array(1.0)
    for _ in range(k):
        out = np.multiply.outer(out, v)
    return out.reshape(-1)


# ---------------------------------------------------------------------------
def test_c01_hermite_identities():
    with criterion(1, "Hermite identities", 30.0):
        nodes, weights = gauss_hermite_nodes(64)
        for k in range(9):
            for l in range(9):
                val = float(np.sum(weights * hermite_scalar(k, nodes)
                                   * hermite_scalar(l, nodes)))
                expect = math.factorial(k) if k == l else 0.0
                assert abs(val - expect) <= 1e-8 * max(1.0, expect)

        gen = rng_mod.stream(101, "contraction")
        for _ in range(1000):
            k = int(gen.integers(0, 7))
            d = int(gen.integers(1, 9))
            x = gen.standard_normal(d) * 1.5
            v = gen.standard_normal(d)
            v /= np.linalg.norm(v)
            lhs = float(np.dot(hermite_tensor(k, x).data, _vec_power(v, k)))
            rhs = hermite_scalar(k, float(np.dot(v, x)))
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))

        gen = rng_mod.stream(102, "partition")
        for k in range(6):
            for d in range(1, 5):
                x = gen.standard_normal(d)
                a = hermite_tensor(k, x).data
                b = hermite_tensor_partition(k, x).data
                assert np.max(np.abs(a - b)) <= 1e-9


# ---------------------------------------------------------------------------
def test_c02_moment_oracles():
    with criterion(2, "moment oracles", 120.0):
        n = 1_000_000
        chunk = 100_000
        for d in (1, 2, 3):
            gen = rng_mod.stream(201, "hermite-mean", d)
            mu = gen.standard_normal(d) * 0.5
            for k in (1, 2, 3):
                dim = d ** k
                s1 = np.zeros(dim)
                s2 = np.zeros(dim)
                for _ in range(n // chunk):
                    X = mu + gen.standard_normal((chunk, d))
                    H = hermite_tensor_batch(k, X)
                    s1 += H.sum(axis=0)
                    s2 += np.einsum("ni,ni->i", H, H)
                mean = s1 / n
                var = np.maximum(s2 / n - mean ** 2, 0.0)
                se = np.sqrt(var / n)
                gap = np.abs(mean - _vec_power(mu, k))
                assert np.all(gap <= 5 * se + 1e-12)

        # second-moment identity vs Monte-Carlo
        n2 = 400_000
        for (k, d) in ((1, 2), (1, 3), (2, 2), (2, 3)):
            gen = rng_mod.stream(202, "second-moment", k, d)
            mu = gen.standard_normal(d) * 0.4
            target = hermite_second_moment(k, mu).data.reshape(d ** k, d ** k)
            s1 = np.zeros((d ** k, d ** k))
            s2 = np.zeros((d ** k, d ** k))
            for _ in range(n2 // chunk):
                X = mu + gen.standard_normal((chunk, d))
                H = hermite_tensor_batch(k, X)
                prod = H[:, :, None] * H[:, None, :]
                s1 += prod.sum(axis=0)
                s2 += (prod * prod).sum(axis=0)
            mean = s1 / n2
            var = np.maximum(s2 / n2 - mean ** 2, 0.0)
            se = np.sqrt(var / n2)
            assert np.all(np.abs(mean - target) <= 5 * se + 1e-12)

        # squared-Hermite means against quadrature; the (2,1) value is exact
        nodes, weights = gauss_hermite_nodes(64)
        for k in range(9):
            for m in np.linspace(-3.0, 3.0, 7):
                quad = float(np.sum(weights * hermite_scalar(k, nodes + m) ** 2))
                assert abs(hermite_square_moment(k, float(m)) - quad) \
                    <= 1e-8 * max(1.0, quad)
        assert hermite_square_moment(2, 1.0) == 7.0


# ---------------------------------------------------------------------------
def _exact_projection_oracle(v, budget):
    """Exhaustive scan of the 2n+1 linear pieces of theta -> sum clip(v-theta)."""
    bps = np.sort(np.concatenate([v, v - 1.0]))
    intervals = [(-np.inf, bps[0])]
    intervals += [(bps[i], bps[i + 1]) for i in range(len(bps) - 1)]
    intervals.append((bps[-1], np.inf))
    for lo, hi in intervals:
        mid = (0.0 if not np.isfinite(lo) and not np.isfinite(hi)
               else lo + 0.5 if not np.isfinite(hi)
               else hi - 0.5 if not np.isfinite(lo)
               else 0.5 * (lo + hi))
        w_mid = np.clip(v - mid, 0.0, 1.0)
        active = (w_mid > 0.0) & (w_mid < 1.0)
        const = float(np.sum(w_mid[~active] > 0.0))  # coords pinned at 1
        slope = int(np.sum(active))
        # sum(theta) = const + sum_{active}(v_i - theta)
        if slope == 0:
            if abs(const + 0.0 - budget) < 1e-12:
                return np.clip(v - mid, 0.0, 1.0)
            continue
        theta = (float(np.sum(v[active])) + const - budget) / slope
        if lo - 1e-12 <= theta <= hi + 1e-12:
            return np.clip(v - theta, 0.0, 1.0)
    raise AssertionError("no feasible interval found")


def test_c03_projection_correctness():
    with criterion(3, "capped-simplex projection", 120.0):
        gen = rng_mod.stream(301, "kkt")
        for _ in range(10_000):
            n = int(gen.integers(1, 51))
            v = gen.normal(0.0, 2.0, n)
            budget = float(gen.uniform(0.0, n))
            w = project_capped_simplex(v, budget).values
            assert capped_simplex_kkt_residual(v, w, budget) <= 1e-8

        gen = rng_mod.stream(302, "oracle")
        for _ in range(500):
            n = int(gen.integers(1, 5))
            v = gen.normal(0.0, 2.0, n)
            budget = float(gen.uniform(0.05, n - 0.05)) if n > 1 else float(gen.uniform(0.05, 0.95))
            w = project_capped_simplex(v, budget).values
            w_star = _exact_projection_oracle(v, budget)
            assert np.max(np.abs(w - w_star)) <= 1e-4


# ---------------------------------------------------------------------------
def _criterion4_instance(seed):
    gen = rng_mod.stream(seed, "c4-instance")
    d, n, alpha = 16, 4000, 0.4
    u = gen.standard_normal(d)
    u /= np.linalg.norm(u)
    mu = 2.0 * u
    v = gen.standard_normal(d)
    v /= np.linalg.norm(v)
    n_in = round(alpha * n)
    n_pm = n // 10
    n_noise = n - n_in - n_pm
    pts = np.vstack([
        mu + gen.standard_normal((n_in, d)),
        gen.standard_normal((n_noise, d)),
        np.tile(100.0 * v, (n_pm, 1)),
    ])
    mask = np.zeros(n, dtype=bool)
    mask[:n_in] = True
    perm = rng_mod.stream(seed, "c4-shuffle").permutation(n)
    return Dataset(points=pts[perm], alpha=alpha, true_mean=mu,
                   inlier_mask=mask[perm]), mu


def test_c04_filter_contract():
    with criterion(4, "filter contract", 300.0):
        retention_hits = 0
        quality_hits = 0
        for seed in range(10):
            ds, mu = _criterion4_instance(seed)
            params = FilterParams(k=2, gamma=0.25, c_norm=3.0, s_cap=4,
                                  rng_seed=seed)
            survivors, report = run_filter(ds, params)
            # exact post-filter moment bound
            for t, norm in report.final_norms.items():
                assert norm / norm_threshold(t, params, ds.alpha) <= 1.0
            surv_mask = np.zeros(ds.n, dtype=bool)
            surv_mask[survivors] = True
            retained = np.sum(surv_mask & ds.inlier_mask) / ds.inlier_mask.sum()
            if retained >= 0.9:
                retention_hits += 1
            V = extract_subspace(survivors, ds, params)
            if V.residual_norm(mu) / np.linalg.norm(mu) <= 0.15:
                quality_hits += 1
        assert retention_hits >= 9, f"retention hits {retention_hits}/10"
        assert quality_hits >= 9, f"subspace quality hits {quality_hits}/10"


# ---------------------------------------------------------------------------
def test_c05_search_contract():
    with criterion(5, "search contract", 300.0):
        hits = 0
        solver = SolverParams(max_iters=150, accept_break=True, prefilter=True)
        for seed in range(10):
            gen = rng_mod.stream(seed, "c5-planted")
            d, n, alpha, eps = 6, 1500, 0.3, 0.5
            from listmean.filtering import Subspace

            B = np.linalg.qr(gen.standard_normal((d, 2)))[0].T
            z_true = np.array([0.9, -0.6])
            mu = B.T @ z_true
            n_in = round(alpha * n)
            pts = np.vstack([
                mu + gen.standard_normal((n_in, d)),
                3.0 * gen.standard_normal((n - n_in, d)) + np.array([4, 0, 0, 0, 0, 0.0]),
            ])
            ds = Dataset(points=pts, alpha=alpha)
            params = SearchParams(r=1.6, eps=eps, alpha=alpha, k_star=2,
                                  moment_tol=0.5, eps_prime=0.25, solver=solver)
            out = search(ds, params, np.zeros(d), Subspace(d, B))
            # exact separation and per-order bounds
            for i in range(len(out.entries)):
                for j in range(i + 1, len(out.entries)):
                    assert np.linalg.norm(out.entries[i].mu - out.entries[j].mu) \
                        >= eps / 2.0
                assert np.all(out.entries[i].per_order_gaps <= params.moment_tol)
            if out.min_error(mu) <= eps:
                hits += 1
        assert hits >= 9, f"planted recovery hits {hits}/10"

        # two planted clusters at distance 3 >= 2 eps
        gen = rng_mod.stream(77, "c5-two")
        d, n = 2, 2000
        mu1 = np.array([1.5, 0.0])
        mu2 = np.array([-1.5, 0.0])
        pts = np.vstack([
            mu1 + gen.standard_normal((700, d)),
            mu2 + gen.standard_normal((700, d)),
            20.0 * gen.standard_normal((n - 1400, d)),
        ])
        ds = Dataset(points=pts, alpha=0.3)
        params = SearchParams(r=2.5, eps=0.5, alpha=0.3, k_star=2,
                              moment_tol=0.5, eps_prime=0.25, solver=solver)
        out = search(ds, params, np.zeros(d))
        assert out.min_error(mu1) <= 0.5 and out.min_error(mu2) <= 0.5


# ---------------------------------------------------------------------------
def _pipeline_config(alpha, eps, seed):
    return PipelineConfig(
        alpha=alpha, eps=eps, seed=seed,
        filter=FilterParams(k=1, gamma=0.25, c_norm=3.0, s_cap=1),
        search=SearchParams(r=1.25, eps=eps, alpha=alpha, k_star=2,
                            moment_tol=0.4, eps_prime=eps / 2.0,
                            candidate_cap=64,
                            solver=SolverParams(max_iters=150,
                                                accept_break=True,
                                                prefilter=True,
                                                stall_obj_mult=1.8,
                                                stall_window=4,
                                                stall_rel_decrease=0.01)),
        coarse=CoarseParams(sep_mult=4.0, max_centers=6,
                            ball_radius_scale=0.55, ball_radius_mult=0.25,
                            min_count_frac=0.2))


def test_c06_end_to_end():
    with criterion(6, "end-to-end estimator", 600.0):
        d, n, alpha, eps = 8, 5000, 0.3, 0.5
        for adversary_kind in ("far_cluster", "mirror"):
            hits = 0
            for seed in range(10):
                gen = rng_mod.stream(seed, "c6-mean", adversary_kind)
                direction = gen.standard_normal(d)
                mu = 3.0 * direction / np.linalg.norm(direction)
                if adversary_kind == "far_cluster":
                    adv = AdversaryStrategy("far_cluster",
                                            {"offset": [50.0] + [0.0] * (d - 1),
                                             "spread": 0.5})
                else:
                    adv = AdversaryStrategy("mirror")
                ds = generate(alpha, n, d, mu, adv, seed)
                out, _report = estimate(ds, _pipeline_config(alpha, eps, seed))
                assert len(out.entries) <= 64, \
                    f"{adversary_kind} seed {seed}: list {len(out.entries)}"
                if out.min_error(mu) <= eps:
                    hits += 1
            assert hits >= 9, f"{adversary_kind}: {hits}/10 seeds recovered"


# ---------------------------------------------------------------------------
def test_c07_tournament():
    with criterion(7, "semi-verified tournament", 60.0):
        eps, d, L = 0.5, 6, 8
        m = trusted_sample_size(L, eps, 0.05)
        assert m == math.ceil(64.0 * math.log(L / 0.05) / eps ** 2)
        ok = 0
        for seed in range(100):
            gen = rng_mod.stream(seed, "c7")
            mu = gen.standard_normal(d)
            dir0 = gen.standard_normal(d)
            dir0 /= np.linalg.norm(dir0)
            means = [mu + 0.9 * eps * dir0]
            for i in range(L - 1):
                u = gen.standard_normal(d)
                u /= np.linalg.norm(u)
                means.append(mu + (4.0 + 1.5 * i) * eps * u)
            trusted = mu + gen.standard_normal((m, d))
            winner, rep = tournament(TournamentInput(
                means=means, trusted=trusted, eps=eps, delta=0.05))
            for (i, j) in rep.tested_pairs:
                assert np.linalg.norm(means[i] - means[j]) >= 4 * eps
            if np.linalg.norm(winner - mu) <= 8 * eps:
                ok += 1
        assert ok >= 95, f"tournament success {ok}/100"


# ---------------------------------------------------------------------------
def test_c08_identifiability_geometry():
    with criterion(8, "identifiability geometry", 180.0):
        # q >= p - 5 sigma on random configurations
        gen = rng_mod.stream(801, "configs")
        for trial in range(20):
            l = int(gen.integers(2, 6))
            d = int(gen.integers(2, 7))
            centers = gen.standard_normal((l, d)) * 2.0
            beta = min(np.linalg.norm(centers[i] - centers[j])
                       for i in range(l) for j in range(i + 1, l))
            cfg = CenterConfig(centers=centers, beta=beta)
            for i in range(l):
                q, qe = voronoi_mass(i, cfg, 100_000,
                                     rng_mod.stream(802, trial, i, "q"))
                p, pe = argmax_prob(i, cfg, 100_000,
                                    rng_mod.stream(802, trial, i, "p"))
                assert q >= p - 5.0 * math.hypot(qe, pe)
            rep = fattening_containment_test(
                cfg, 10_000, rng_mod.stream(803, trial))
            assert rep.violations == 0

        # two centers at separation 2: mass is Phi(1)
        cfg = CenterConfig(centers=np.array([[1.0, 0.0], [-1.0, 0.0]]), beta=2.0)
        q, qe = voronoi_mass(0, cfg, 1_000_000, rng_mod.stream(804, "phi"))
        assert abs(q - float(normal_cdf(1.0))) <= 5 * qe

        # the p = 1/3 quantile is 0.43 to two decimals
        assert round(upper_tail_quantile(1.0 / 3.0), 2) == 0.43


# ---------------------------------------------------------------------------
def test_c09_lower_bound_instance():
    with criterion(9, "lower-bound instance", 120.0):
        for (alpha, eps, d_planted, seed) in ((0.1, 0.5, 1, 901),
                                              (0.05, 0.3, 3, 902)):
            inst = lower_bound_instance(alpha, eps, d_planted, seed,
                                        mc_samples=400_000)
            bound = inst.mass_upper_bound()
            for i in range(d_planted):
                assert inst.masses[i] <= bound + 5 * inst.mass_stderr[i]
            gen = rng_mod.stream(seed, "margin")
            for i in range(d_planted):
                mu = inst.planted_means[i]
                pts = np.vstack([
                    gen.standard_normal((5_000, d_planted)),
                    mu + gen.standard_normal((5_000, d_planted)),
                ])
                margin = alpha_consistency_check(inst.density, mu, alpha, pts)
                assert margin >= -1e-9

            # total mass via an independent importance-sampled integral
            gen2 = rng_mod.stream(seed, "mass")
            n_mc = 1_000_000
            comp = gen2.integers(0, d_planted + 1, n_mc)
            X = gen2.standard_normal((n_mc, d_planted))
            for i in range(d_planted):
                X[comp == i + 1] += inst.planted_means[i]
            log_p = [log_density_gaussian(X, np.zeros(d_planted))]
            log_p += [log_density_gaussian(X, inst.planted_means[i])
                      for i in range(d_planted)]
            P = np.mean([np.exp(lp) for lp in log_p], axis=0)
            est = float(np.mean(inst.density(X) / P))
            assert abs(est - 1.0) <= 1e-3


# ---------------------------------------------------------------------------
def test_c10_reproducibility(tmp_path):
    with criterion(10, "reproducibility", 300.0):
        gen = rng_mod.stream(1001, "c10")
        d, n, alpha = 5, 1200, 0.35
        mu = np.array([2.0, 1.0, 0.0, 0.0, 0.0])
        adv = AdversaryStrategy("far_cluster", {"offset": [40.0] + [0.0] * (d - 1)})
        ds = generate(alpha, n, d, mu, adv, 42)
        cfg = _pipeline_config(alpha, 0.5, 42)
        old = os.environ.get("LISTMEAN_THREADS")
        try:
            os.environ["LISTMEAN_THREADS"] = "1"
            out1, _ = estimate(ds, cfg)
            os.environ["LISTMEAN_THREADS"] = "4"
            out2, _ = estimate(ds, cfg)
        finally:
            if old is None:
                os.environ.pop("LISTMEAN_THREADS", None)
            else:
                os.environ["LISTMEAN_THREADS"] = old
        assert out1.to_json() == out2.to_json()

        # dataset round-trip is byte-exact
        from listmean.datasets import read_dataset, write_dataset

        path = tmp_path / "roundtrip.json"
        write_dataset(path, ds)
        back = read_dataset(path)
        assert back.points.tobytes() == ds.points.tobytes()
        assert dataset_to_json(back) == dataset_to_json(ds)
        # a second write of the reloaded dataset is byte-identical
        path2 = tmp_path / "roundtrip2.json"
        write_dataset(path2, back)
        assert path.read_bytes() == path2.read_bytes()

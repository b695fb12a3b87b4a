"""End-to-end estimator and semi-verified selection.

``estimate`` chains: coarse dense-ball centers -> per-center recentering ->
moment-filter subspace learning -> in-subspace grid search -> global merge
with separation pruning.  ``tournament`` picks one mean from a candidate
list using a small trusted sample via pairwise sign tests.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .filtering import (
    Dataset,
    FilterExhaustedError,
    FilterParams,
    Subspace,
    learn_subspace,
)
from .search import Candidate, CandidateList, SearchParams, search

_SEED_MASK = (1 << 63) - 1


def _derived_seed(seed: int, *tags) -> int:
    return rng_mod.philox_key(seed, *tags) & _SEED_MASK


def thread_count() -> int:
    """Worker cap from LISTMEAN_THREADS (default: all cores)."""
    raw = os.environ.get("LISTMEAN_THREADS", "").strip()
    if raw:
        return max(1, int(raw))
    return max(1, os.cpu_count() or 1)


@dataclass
class CoarseParams:
    """Dense-ball heuristic knobs for the coarse center list.

    The neighbor-count radius is ``ball_radius_scale * sqrt(2d) +
    ball_radius_mult * sqrt(log 1/alpha)``.  The default scale of 1 matches
    typical same-cluster distances; shrink it when decoy clusters sit closer
    than 2 sqrt(2d), otherwise midpoints between clusters score densest.
    """

    ball_radius_mult: float = 1.0
    ball_radius_scale: float = 1.0
    min_count_frac: float = 0.5
    max_centers: int = 8
    sep_mult: float = 10.0       # prune separation, in sqrt(log(1/alpha)) units
    refine_iters: int = 3        # local-mean refinement rounds per center
    refine_radius_mult: float = 0.8  # refinement ball, in sqrt(2 d) units


@dataclass
class PipelineConfig:
    alpha: float
    eps: float
    filter: FilterParams = field(default_factory=FilterParams)
    search: SearchParams | None = None
    coarse: CoarseParams = field(default_factory=CoarseParams)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.search is None:
            self.search = SearchParams(r=max(self.eps, 1.25), eps=self.eps,
                                       alpha=self.alpha)

    def to_json(self) -> str:
        def encode(obj):
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if hasattr(obj, "__dataclass_fields__"):
                return {k: encode(getattr(obj, k)) for k in obj.__dataclass_fields__}
            return obj
        return json.dumps(encode(self), sort_keys=True)


@dataclass
class BranchReport:
    center: list
    filter_removals: int = 0
    subspace_rank: int = 0
    candidates: int = 0
    skipped: str | None = None
    runtime_ms: float = 0.0


@dataclass
class EstimateReport:
    seed: int
    centers: int = 0
    branches: list[BranchReport] = field(default_factory=list)
    merged: int = 0
    truncated: bool = False
    runtime_ms: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "centers": self.centers,
            "branches": [vars(b) for b in self.branches],
            "merged": self.merged,
            "truncated": self.truncated,
            "runtime_ms": self.runtime_ms,
        }, sort_keys=True)


def coarse_list(data: Dataset, config: PipelineConfig) -> list[np.ndarray]:
    """Dense-ball centers: score each sample by its neighbor count, keep the
    well-populated ones, greedily prune to a separated set, then refine each
    survivor by a few trimmed local means.

    May return an empty list (no dense ball) on pure-noise inputs.
    """
    X = data.points
    n, d = X.shape
    cp = config.coarse
    log_term = np.sqrt(np.log(1.0 / config.alpha)) if config.alpha < 1.0 else 0.0
    radius = cp.ball_radius_scale * np.sqrt(2.0 * d) + cp.ball_radius_mult * log_term
    counts = np.zeros(n, dtype=np.int64)
    for start in range(0, n, 512):
        block = X[start:start + 512]
        d2 = (np.einsum("nd,nd->n", block, block)[:, None]
              - 2.0 * block @ X.T
              + np.einsum("nd,nd->n", X, X)[None, :])
        counts[start:start + 512] = np.sum(d2 <= radius * radius, axis=1)
    need = cp.min_count_frac * config.alpha * n
    eligible = np.flatnonzero(counts >= need)
    if eligible.size == 0:
        return []
    order = eligible[np.lexsort((eligible, -counts[eligible]))]
    sep = cp.sep_mult * log_term
    centers = []
    for idx in order:
        p = X[idx]
        if all(np.linalg.norm(p - c) >= sep for c in centers):
            centers.append(p.copy())
            if len(centers) >= cp.max_centers:
                break
    refine_radius = cp.refine_radius_mult * np.sqrt(2.0 * d)
    refined = []
    for c in centers:
        cur = c
        for _ in range(cp.refine_iters):
            d2 = np.einsum("nd,nd->n", X - cur, X - cur)
            near = d2 <= refine_radius * refine_radius
            if not np.any(near):
                break
            cur = X[near].mean(axis=0)
        # refinement can pull two seeds into the same basin; drop duplicates
        if all(np.linalg.norm(cur - p) >= max(sep, 1e-9) / 2.0 for p in refined):
            refined.append(cur)
    return refined


def _branch(data: Dataset, config: PipelineConfig, idx: int,
            center: np.ndarray):
    """Recenter, learn a subspace, and search inside it around the center."""
    t0 = time.perf_counter()
    rep = BranchReport(center=[float(v) for v in center])
    recentered = Dataset(points=data.points - center[None, :], alpha=data.alpha)
    fp = config.filter
    branch_filter = FilterParams(
        k=fp.k, gamma=fp.gamma, lam=fp.lam, c_norm=fp.c_norm, s_cap=fp.s_cap,
        max_removals=fp.max_removals,
        rng_seed=_derived_seed(config.seed, "center", idx, "filter"),
        deterministic_removal=fp.deterministic_removal)
    try:
        V, filter_report = learn_subspace(recentered, branch_filter)
    except FilterExhaustedError as exc:
        rep.skipped = f"filter exhausted: {exc}"
        rep.runtime_ms = 1000.0 * (time.perf_counter() - t0)
        return CandidateList(entries=[], eps=config.eps), rep
    rep.filter_removals = len(filter_report.removed)
    # search subspace: learned directions plus the recentering direction
    vectors = [row for row in V.basis]
    c_norm = float(np.linalg.norm(center))
    if c_norm > 0.0:
        vectors.append(center / c_norm)
    basis = _orthonormal_rows(vectors, data.dim)
    rep.subspace_rank = basis.shape[0]
    out = search(data, config.search, center, Subspace(data.dim, basis))
    rep.candidates = len(out.entries)
    rep.runtime_ms = 1000.0 * (time.perf_counter() - t0)
    return out, rep


def _orthonormal_rows(vectors, dim: int) -> np.ndarray:
    out = []
    for v in vectors:
        w = np.asarray(v, dtype=float).copy()
        for b in out:
            w -= b * float(b @ w)
        nrm = float(np.linalg.norm(w))
        if nrm > 1e-10:
            out.append(w / nrm)
    return np.stack(out) if out else np.zeros((0, dim))


def estimate(data: Dataset, config: PipelineConfig):
    """Full estimator; returns (CandidateList, EstimateReport).

    Branches run in parallel (capped by LISTMEAN_THREADS) and are merged in
    deterministic order: candidates sorted by ascending objective (ties by
    coordinates), then greedily pruned to eps/2 separation.
    """
    t_start = time.perf_counter()
    report = EstimateReport(seed=config.seed)
    t0 = time.perf_counter()
    centers = coarse_list(data, config)
    report.runtime_ms["coarse"] = 1000.0 * (time.perf_counter() - t0)
    report.centers = len(centers)
    if not centers:
        report.runtime_ms["total"] = 1000.0 * (time.perf_counter() - t_start)
        return CandidateList(entries=[], eps=config.eps), report

    t0 = time.perf_counter()
    workers = min(thread_count(), len(centers))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_branch, data, config, i, c)
                       for i, c in enumerate(centers)]
            results = [f.result() for f in futures]
    else:
        results = [_branch(data, config, i, c) for i, c in enumerate(centers)]
    report.runtime_ms["branches"] = 1000.0 * (time.perf_counter() - t0)

    pool_entries: list[Candidate] = []
    for out, branch_rep in results:
        report.branches.append(branch_rep)
        pool_entries.extend(out.entries)

    t0 = time.perf_counter()
    pool_entries.sort(key=lambda c: (c.objective, tuple(c.mu)))
    sep = config.eps / 2.0
    cap = config.search.candidate_cap
    merged: list[Candidate] = []
    truncated = False
    for cand in pool_entries:
        if any(np.linalg.norm(cand.mu - kept.mu) < sep for kept in merged):
            continue
        if len(merged) >= cap:
            truncated = True
            break
        merged.append(cand)
    report.runtime_ms["merge"] = 1000.0 * (time.perf_counter() - t0)
    report.merged = len(merged)
    report.truncated = truncated
    report.runtime_ms["total"] = 1000.0 * (time.perf_counter() - t_start)
    return CandidateList(entries=merged, eps=config.eps, truncated=truncated), report


@dataclass
class TournamentInput:
    """Candidate means plus a small trusted sample."""

    means: list
    trusted: np.ndarray
    eps: float
    delta: float = 0.05

    def __post_init__(self):
        self.means = [np.asarray(m, dtype=float) for m in self.means]
        if not self.means:
            raise ValueError("candidate list must be non-empty")
        self.trusted = np.atleast_2d(np.asarray(self.trusted, dtype=float))
        if self.trusted.shape[0] < 1:
            raise ValueError("need at least one trusted sample")


@dataclass
class TournamentReport:
    winner_index: int
    undefeated: bool
    tested_pairs: list
    min_tested_distance: float


def trusted_sample_size(list_size: int, eps: float, delta: float = 0.05) -> int:
    """ceil(64 ln(list/delta) / eps^2) trusted draws."""
    import math
    return math.ceil(64.0 * math.log(list_size / delta) / eps ** 2)


def tournament(inp: TournamentInput, seed: int = 0):
    """Pairwise sign tests on the trusted sample; returns (winner, report).

    Only pairs at distance >= 4 eps are compared: project the trusted points
    onto the unit vector between the two candidates, centered at their
    midpoint; the sign of the mean picks the winner (exact zero breaks toward
    the lexicographically smaller candidate).  Any candidate winning all its
    tests is returned (lowest index); if none is undefeated the one with the
    most wins is returned, flagged in the report.  The procedure is
    deterministic given the trusted sample; ``seed`` is unused and kept for
    interface stability.
    """
    means = inp.means
    l = len(means)
    X = inp.trusted
    defeated = [False] * l
    wins = [0] * l
    tested = []
    min_dist = float("inf")
    for i in range(l):
        for j in range(i + 1, l):
            gap = means[i] - means[j]
            dist = float(np.linalg.norm(gap))
            if dist < 4.0 * inp.eps:
                continue
            tested.append((i, j))
            min_dist = min(min_dist, dist)
            direction = gap / dist
            mid = 0.5 * (means[i] + means[j])
            score = float(np.mean((X - mid[None, :]) @ direction))
            if score > 0.0:
                winner, loser = i, j
            elif score < 0.0:
                winner, loser = j, i
            else:
                first = min((i, j), key=lambda t: tuple(means[t]))
                winner = first
                loser = j if first == i else i
            wins[winner] += 1
            defeated[loser] = True
    undefeated = [i for i in range(l) if not defeated[i]]
    if undefeated:
        idx = undefeated[0]
        rep = TournamentReport(winner_index=idx, undefeated=True,
                               tested_pairs=tested,
                               min_tested_distance=min_dist)
    else:
        idx = int(np.argmax(wins))
        rep = TournamentReport(winner_index=idx, undefeated=False,
                               tested_pairs=tested,
                               min_tested_distance=min_dist)
    return means[idx], rep

"""Grid search for candidate means with moment-matching witness weights.

Enumerates an eps'-cover of a radius-r ball (optionally inside a learned
subspace), fits soft sample weights per grid point by projected gradient over
the capped simplex, and keeps the accepted, eps/2-separated candidates in
cover order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .backend import get_backend
from .filtering import Dataset, Subspace
from .tensors import DEFAULT_ENTRY_CAP, TensorSizeError, gaussian_moment_tensor


class CoverSizeError(ValueError):
    """The requested grid would exceed the configured cover cap."""


class InfeasibleBudgetError(ValueError):
    """Weight budget outside [0, n]."""


@dataclass
class SolverParams:
    """Projected-gradient solver knobs for the weight fit."""

    max_iters: int = 300
    step_size: float | None = None  # None: 1/L with L from power iteration
    tol_grad: float = 1e-7
    tol_obj: float = 0.0
    power_iters: int = 20
    accept_break: bool = False   # stop as soon as the candidate is accepted
    stall_window: int = 10
    stall_obj_mult: float = 25.0
    stall_rel_decrease: float = 5e-3
    prefilter: bool = False      # sound fast reject, see backend kernels


@dataclass
class SearchParams:
    """Search configuration.

    ``eps_prime=None`` uses the conservative default
    min(eps/2, moment_tol / (2 sqrt(k*) (4 d k*)^{k*/2})) computed at search
    dimension; desk-scale configs typically override it with eps/2.
    """

    r: float
    eps: float
    alpha: float
    k_star: int = 2
    moment_tol: float = 0.5
    eps_prime: float | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    candidate_cap: int = 4096
    cover_cap: int = 10_000_000

    def __post_init__(self):
        if not 0.0 < self.eps <= self.r:
            raise ValueError("need 0 < eps <= r")
        if self.moment_tol <= 0.0:
            raise ValueError("moment_tol must be positive")
        if self.k_star < 1:
            raise ValueError("k_star must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    def grid_step(self, dim: int) -> float:
        if self.eps_prime is not None:
            return self.eps_prime
        fine = self.moment_tol / (2.0 * math.sqrt(self.k_star)
                                  * (4.0 * dim * self.k_star) ** (self.k_star / 2.0))
        return min(self.eps / 2.0, fine)


@dataclass
class Weights:
    """Per-sample soft inclusion weights with a fixed mass budget."""

    values: np.ndarray
    budget: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < -1e-12) or np.any(self.values > 1.0 + 1e-12):
            raise ValueError("weights must lie in [0, 1]")
        total = float(self.values.sum())
        if abs(total - self.budget) > 1e-8 * max(1.0, self.budget):
            raise ValueError(f"weight mass {total} misses budget {self.budget}")

    def digest(self) -> dict:
        raw = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        return {
            "sum": float(self.values.sum()),
            "min": float(self.values.min()) if self.values.size else 0.0,
            "max": float(self.values.max()) if self.values.size else 0.0,
            "sha256": hashlib.sha256(raw).hexdigest(),
        }


@dataclass
class Candidate:
    """One accepted (or rejected) grid point with its witness weights."""

    mu: np.ndarray
    weights: Weights | None
    objective: float
    accepted: bool
    per_order_gaps: np.ndarray | None = None
    coords: np.ndarray | None = None
    converged: bool = True

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)


@dataclass
class CandidateList:
    """eps/2-separated accepted candidates, in deterministic order."""

    entries: list[Candidate]
    eps: float
    truncated: bool = False

    def __post_init__(self):
        self.assert_separated()

    def assert_separated(self):
        mus = [c.mu for c in self.entries]
        for i in range(len(mus)):
            for j in range(i + 1, len(mus)):
                if np.linalg.norm(mus[i] - mus[j]) < self.eps / 2.0:
                    raise AssertionError(
                        f"candidates {i} and {j} closer than eps/2")

    def min_error(self, mu: np.ndarray) -> float:
        if not self.entries:
            return float("inf")
        mu = np.asarray(mu, dtype=float)
        return min(float(np.linalg.norm(c.mu - mu)) for c in self.entries)

    def to_json(self) -> str:
        entries = []
        for c in self.entries:
            entries.append({
                "mu": [float(v) for v in c.mu],
                "objective": float(c.objective),
                "weights_digest": c.weights.digest() if c.weights is not None else None,
            })
        return json.dumps(
            {"eps": self.eps, "truncated": self.truncated, "entries": entries},
            sort_keys=True)

    def write_weights_sidecar(self, path) -> None:
        """Full weight vectors, row-concatenated little-endian float64."""
        blocks = [np.ascontiguousarray(c.weights.values, dtype="<f8").tobytes()
                  for c in self.entries if c.weights is not None]
        with open(path, "wb") as f:
            f.write(b"".join(blocks))


def build_cover(r: float, eps_prime: float, d: int,
                cover_cap: int = 10_000_000) -> np.ndarray:
    """Grid cover of the radius-r ball with per-coordinate spacing eps'/sqrt(d).

    Includes the +-r endpoints, keeps points inside the ball, and orders rows
    lexicographically.  Any ball point is within eps' of the cover (rounding
    each coordinate toward zero moves it by at most one grid step).
    """
    if eps_prime <= 0.0:
        raise ValueError("eps_prime must be positive")
    if r < 0.0:
        raise ValueError("radius must be non-negative")
    if d < 1:
        raise ValueError("dimension must be positive")
    if r == 0.0:
        return np.zeros((1, d))
    step = eps_prime / math.sqrt(d)
    m = int(math.floor(r / step + 1e-12))
    vals = np.arange(-m, m + 1, dtype=float) * step
    if m * step < r - 1e-12:
        vals = np.concatenate([[-r], vals, [r]])
    per_axis = vals.size
    if per_axis ** d > cover_cap:
        raise CoverSizeError(
            f"cover would hold {per_axis}**{d} points, above cap {cover_cap}")
    grids = np.meshgrid(*([vals] * d), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    keep = np.einsum("nd,nd->n", pts, pts) <= r * r + 1e-12
    pts = pts[keep]
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def gaussian_moment_targets(d: int, k_star: int) -> np.ndarray:
    """Concatenated flattened E[Z^{(x)k}] blocks for k = 1..k_star."""
    return np.concatenate([gaussian_moment_tensor(k, d).data
                           for k in range(1, k_star + 1)])


def _features(points: np.ndarray, mu_prime: np.ndarray, k_star: int) -> np.ndarray:
    E = points - mu_prime[None, :]
    blocks = [E]
    cur = E
    for _ in range(2, k_star + 1):
        cur = (cur[:, :, None] * E[:, None, :]).reshape(E.shape[0], -1)
        blocks.append(cur)
    return np.concatenate(blocks, axis=1)


def moment_objective(mu_prime: np.ndarray, w, points: np.ndarray,
                     k_star: int, alpha: float,
                     entry_cap: int = DEFAULT_ENTRY_CAP) -> float:
    """Sum over k <= k_star of squared Frobenius gaps between the recentered
    weighted moment tensors and the standard Gaussian ones.

    Convex quadratic in the weights.
    """
    points = np.asarray(points, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    n, d = points.shape
    if d ** k_star > entry_cap:
        raise TensorSizeError("d**k_star exceeds the entry cap")
    values = w.values if isinstance(w, Weights) else np.asarray(w, dtype=float)
    budget = alpha * n
    g = gaussian_moment_targets(d, k_star)
    resid = _features(points, mu_prime, k_star).T @ values / budget - g
    return float(resid @ resid)


def per_order_gaps(mu_prime: np.ndarray, w, points: np.ndarray,
                   k_star: int, alpha: float) -> np.ndarray:
    """Frobenius gap per moment order (the objective splits as their squares)."""
    points = np.asarray(points, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    n, d = points.shape
    values = w.values if isinstance(w, Weights) else np.asarray(w, dtype=float)
    budget = alpha * n
    g = gaussian_moment_targets(d, k_star)
    resid = _features(points, mu_prime, k_star).T @ values / budget - g
    gaps = []
    start = 0
    for k in range(1, k_star + 1):
        size = d ** k
        gaps.append(float(np.linalg.norm(resid[start:start + size])))
        start += size
    return np.array(gaps)


def project_capped_simplex(v: np.ndarray, budget: float) -> Weights:
    """Euclidean projection onto {w in [0,1]^n : sum w = budget}.

    The shift theta solving sum clip(v - theta, 0, 1) = budget is located by
    monotone bisection to 1e-10 relative mass accuracy.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if budget < -1e-12 or budget > n + 1e-12:
        raise InfeasibleBudgetError(f"budget {budget} outside [0, {n}]")
    budget = min(max(budget, 0.0), float(n))
    w = get_backend().project_capped_simplex(v, budget)
    return Weights(values=w, budget=budget)


def capped_simplex_kkt_residual(v: np.ndarray, w: np.ndarray, budget: float,
                                bound_tol: float = 1e-9) -> float:
    """KKT residual of a claimed projection: mass error plus the distance to
    clip(v - theta) for the best-fitting shift."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    mass_err = abs(float(w.sum()) - budget)
    interior = (w > bound_tol) & (w < 1.0 - bound_tol)
    if np.any(interior):
        theta = float(np.mean(v[interior] - w[interior]))
    else:
        # w_i = 0 needs theta >= v_i; w_i = 1 needs theta <= v_i - 1
        lower = np.max(v[w <= bound_tol]) if np.any(w <= bound_tol) else -np.inf
        upper = np.min(v[w >= 1.0 - bound_tol] - 1.0) if np.any(w >= 1.0 - bound_tol) else np.inf
        if np.isinf(lower) and np.isinf(upper):
            theta = 0.0
        elif np.isinf(lower):
            theta = upper
        elif np.isinf(upper):
            theta = lower
        else:
            theta = 0.5 * (lower + upper)
    station = float(np.max(np.abs(w - np.clip(v - theta, 0.0, 1.0)))) if w.size else 0.0
    return max(mass_err, station)


def fit_weights(mu_prime: np.ndarray, data: Dataset, params: SearchParams,
                points: np.ndarray | None = None,
                record_trace: bool = False):
    """Fit witness weights for one candidate center by projected gradient.

    Starts from the uniform feasible point w = alpha, steps with 1/L (L from
    power iteration on the quadratic form), and returns a Candidate whose
    ``accepted`` flag is objective <= moment_tol**2.  ``converged=False``
    marks an unmet gradient tolerance at max_iters.

    With ``record_trace=True`` a reference numpy loop runs instead and the
    (non-increasing) objective trace is returned alongside the candidate.
    """
    pts = data.points if points is None else np.asarray(points, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    n, d = pts.shape
    budget = params.alpha * n
    g = gaussian_moment_targets(d, params.k_star)
    sp = params.solver
    delta_sq = params.moment_tol ** 2
    if record_trace:
        w, obj, trace = _reference_pgd(pts, mu_prime, g, budget, params.k_star, sp)
        cand = Candidate(
            mu=mu_prime, weights=Weights(values=w, budget=budget),
            objective=obj, accepted=obj <= delta_sq,
            per_order_gaps=per_order_gaps(mu_prime, w, pts, params.k_star, params.alpha),
            converged=True)
        return cand, trace
    backend = get_backend()
    w, obj, accepted, _iters, flag, gaps = backend.pgd_fit(
        pts, mu_prime, g, budget, params.k_star, delta_sq, sp.max_iters,
        sp.power_iters, sp.tol_grad, sp.accept_break, sp.stall_window,
        sp.stall_obj_mult, sp.stall_rel_decrease, sp.prefilter)
    weights = Weights(values=np.asarray(w), budget=budget) if flag != 2 else None
    return Candidate(
        mu=mu_prime, weights=weights, objective=float(obj),
        accepted=bool(accepted), per_order_gaps=np.asarray(gaps),
        converged=flag != 1)


def _reference_pgd(pts, mu_prime, g, budget, k_star, sp: SolverParams):
    """Plain-numpy PGD used for trace assertions; mirrors the kernels."""
    Psi = _features(pts, mu_prime, k_star) / budget
    D = Psi.shape[1]
    C = Psi.T @ Psi
    v = np.ones(D) / math.sqrt(D)
    for _ in range(sp.power_iters):
        nv = C @ v
        nrm = np.linalg.norm(nv)
        if nrm == 0.0:
            break
        v = nv / nrm
    L = 2.0 * float(v @ (C @ v)) * (1.0 + 1e-3) + 1e-300
    step = 1.0 / L if sp.step_size is None else sp.step_size
    step_min, step_max = step, step * 1e7
    n = pts.shape[0]
    w = np.full(n, budget / n)
    resid = Psi.T @ w - g
    obj = float(resid @ resid)
    trace = [obj]
    no_progress = 0
    for _ in range(sp.max_iters):
        grad = 2.0 * (Psi @ resid)
        w_hat = get_backend().project_capped_simplex(w - step * grad, budget)
        d = w_hat - w
        if not np.any(d):
            break
        q = Psi.T @ d
        a = float(q @ q)
        b = 2.0 * float(resid @ q)
        tau = 1.0 if a <= 0.0 else min(1.0, max(0.0, -b / (2.0 * a)))
        if tau <= 0.0:
            break
        obj_prev = obj
        w = w + tau * d
        resid = resid + tau * q
        obj = float(resid @ resid)
        trace.append(obj)
        if tau >= 0.999 and step < step_max:
            step *= 2.0
        elif tau < 0.1 and step > step_min:
            step *= 0.5
        if obj_prev - obj <= sp.tol_grad * max(1.0, obj):
            no_progress += 1
            if no_progress >= 3:
                break
        else:
            no_progress = 0
    return w, obj, trace


_CHUNK = 128


def search(data: Dataset, params: SearchParams, center: np.ndarray,
           subspace: Subspace | None = None) -> CandidateList:
    """Enumerate the cover, fit weights per point, and keep accepted
    candidates at pairwise distance >= eps/2, greedily in cover order.

    With a subspace, the cover lives in its coordinates around ``center``,
    sample points are projected onto it (the orthogonal residual is dropped:
    a standard Gaussian marginalizes to a standard Gaussian), and kept
    candidates are lifted back to the ambient space.
    """
    center = np.asarray(center, dtype=float)
    if subspace is not None:
        if subspace.rank == 0:
            return CandidateList(entries=[], eps=params.eps)
        Y = subspace.project(data.points - center[None, :])
        lift = lambda z: center + subspace.lift(z)
    else:
        Y = data.points - center[None, :]
        lift = lambda z: center + z
    d_sub = Y.shape[1]
    step = params.grid_step(d_sub)
    cover = build_cover(params.r, step, d_sub, params.cover_cap)
    g = gaussian_moment_targets(d_sub, params.k_star)
    n = Y.shape[0]
    budget = params.alpha * n
    sp = params.solver
    delta_sq = params.moment_tol ** 2
    backend = get_backend()

    kept_coords: list[np.ndarray] = []
    kept_mus: list[np.ndarray] = []
    truncated = False
    sep = params.eps / 2.0
    for start in range(0, cover.shape[0], _CHUNK):
        block = cover[start:start + _CHUNK]
        m = block.shape[0]
        skip = np.zeros(m, dtype=np.uint8)
        if kept_coords:
            # conservative coordinate-space margin; the keep decision itself
            # uses ambient distances so both agree with the final assertion
            K = np.stack(kept_coords)
            dists = np.linalg.norm(block[:, None, :] - K[None, :, :], axis=2)
            skip[np.any(dists < sep * (1.0 - 1e-9), axis=1)] = 1
        out_obj = np.empty(m)
        out_acc = np.empty(m, dtype=np.int64)
        out_iters = np.empty(m, dtype=np.int64)
        out_flags = np.empty(m, dtype=np.int64)
        out_gaps = np.empty((m, params.k_star))
        backend.pgd_fit_batch(
            Y, block, g, budget, params.k_star, delta_sq, sp.max_iters,
            sp.power_iters, sp.tol_grad, sp.accept_break, sp.stall_window,
            sp.stall_obj_mult, sp.stall_rel_decrease, sp.prefilter, skip,
            out_obj, out_acc, out_iters, out_flags, out_gaps)
        for i in range(m):
            if not out_acc[i]:
                continue
            z = block[i]
            mu_c = lift(z)
            if any(np.linalg.norm(mu_c - km) < sep for km in kept_mus):
                continue
            if len(kept_coords) >= params.candidate_cap:
                truncated = True
                break
            kept_coords.append(z)
            kept_mus.append(mu_c)
        if truncated:
            break

    entries = []
    for z in kept_coords:
        # refit to recover the witness weights (deterministic, same path)
        w, obj2, accepted, _it, flag, gaps = backend.pgd_fit(
            Y, z, g, budget, params.k_star, delta_sq, sp.max_iters,
            sp.power_iters, sp.tol_grad, sp.accept_break, sp.stall_window,
            sp.stall_obj_mult, sp.stall_rel_decrease, sp.prefilter)
        gaps = np.asarray(gaps)
        if not (accepted and np.all(gaps <= params.moment_tol * (1 + 1e-9))):
            raise AssertionError("accepted candidate fails the per-order bound")
        entries.append(Candidate(
            mu=lift(z), coords=z.copy(),
            weights=Weights(values=np.asarray(w), budget=budget),
            objective=float(obj2), accepted=True, per_order_gaps=gaps,
            converged=flag != 1))
    return CandidateList(entries=entries, eps=params.eps, truncated=truncated)

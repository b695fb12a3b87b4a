"""Gaussian samplers, density utilities, and Monte-Carlo geometry verifiers.

Covers the identifiability machinery: nearest-center (Voronoi) masses,
inner-product argmax probabilities, the fattening containment predicate,
the Gaussian isoperimetry bound for halfspaces, the hard mixture instance
that forces exponentially many consistent means, and consistency margins.

All probability estimates carry Wald standard errors; callers test with
five-sigma bands.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import rng as rng_mod

LOG_2PI = math.log(2.0 * math.pi)


def normal_cdf(x):
    """Standard normal CDF (scipy's rational-approximation erf kernel)."""
    return ndtr(x)


def normal_quantile(p):
    return ndtri(p)


def log_density_gaussian(x, mu) -> np.ndarray | float:
    """Log density of N(mu, I) at x; x may be a single point or a batch."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    diff = x - mu
    d = mu.shape[-1]
    sq = np.sum(diff * diff, axis=-1)
    out = -0.5 * (d * LOG_2PI + sq)
    return out if out.ndim else float(out)


def sample_gaussian(mu, count: int, seed) -> np.ndarray:
    """``count`` i.i.d. draws from N(mu, I), reproducible from the seed."""
    mu = np.asarray(mu, dtype=float)
    gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "gauss")
    return mu + gen.standard_normal((count, mu.shape[0]))


@dataclass
class CenterConfig:
    """A list of distinct centers with a claimed pairwise separation."""

    centers: np.ndarray  # (l, d)
    beta: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ValueError("centers must be a non-empty (l, d) array")
        l = self.centers.shape[0]
        for i in range(l):
            for j in range(i + 1, l):
                dist = float(np.linalg.norm(self.centers[i] - self.centers[j]))
                if dist < self.beta:
                    raise ValueError(
                        f"centers {i},{j} at distance {dist} violate separation {self.beta}")

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _wald(hits: int, total: int):
    p = hits / total
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / total)


def voronoi_mass(i: int, cfg: CenterConfig, n_samples: int, seed):
    """Monte-Carlo mass of the strict nearest-center region under N(mu_i, I).

    Ties count as non-membership (they have measure zero).
    """
    gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "voronoi", i)
    hits = 0
    remaining = n_samples
    mu_i = cfg.centers[i]
    while remaining > 0:
        batch = min(remaining, 200_000)
        X = mu_i + gen.standard_normal((batch, cfg.dim))
        diff = X[:, None, :] - cfg.centers[None, :, :]
        d2 = np.einsum("nld,nld->nl", diff, diff)
        own = d2[:, i]
        others = np.delete(d2, i, axis=1)
        if others.size:
            hits += int(np.sum(own < others.min(axis=1)))
        else:
            hits += batch
        remaining -= batch
    return _wald(hits, n_samples)


def argmax_prob(i: int, cfg: CenterConfig, n_samples: int, seed):
    """Probability that center i strictly maximizes <x, mu_j> under N(0, I)."""
    gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "argmax", i)
    hits = 0
    remaining = n_samples
    while remaining > 0:
        batch = min(remaining, 200_000)
        X = gen.standard_normal((batch, cfg.dim))
        inner = X @ cfg.centers.T
        own = inner[:, i]
        others = np.delete(inner, i, axis=1)
        if others.size:
            hits += int(np.sum(own > others.max(axis=1)))
        else:
            hits += batch
        remaining -= batch
    return _wald(hits, n_samples)


@dataclass
class FatteningReport:
    violations: int
    attempts: int
    rejection_failures: list[int] = field(default_factory=list)


def fattening_containment_test(cfg: CenterConfig, trials: int, seed,
                               radius: float | None = None) -> FatteningReport:
    """Exact predicate check that perturbed argmax-region points stay strictly
    nearest to their own recentered cell.

    For each center i: sample x in the argmax region (rejection from N(0,I)),
    perturb by h uniform in the ball of the given radius (default beta/2), and
    count violations of |y|^2 < |y - mu_j + mu_i|^2 for some j.  A center
    whose region is too small to sample is recorded, not fatal.
    """
    gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "fatten")
    radius = cfg.beta / 2.0 if radius is None else radius
    violations = 0
    attempts = 0
    failures = []
    for i in range(cfg.count):
        got = 0
        rounds = 0
        samples = []
        while got < trials and rounds < 400:
            rounds += 1
            X = gen.standard_normal((max(2048, trials), cfg.dim))
            inner = X @ cfg.centers.T
            own = inner[:, i]
            others = np.delete(inner, i, axis=1)
            keep = X[own > others.max(axis=1)] if others.size else X
            if keep.shape[0]:
                samples.append(keep[: trials - got])
                got += min(keep.shape[0], trials - got)
        if got < trials:
            failures.append(i)
            if got == 0:
                continue
        X = np.vstack(samples)
        m = X.shape[0]
        dirs = gen.standard_normal((m, cfg.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = radius * gen.random(m) ** (1.0 / cfg.dim)
        Y = X + dirs * radii[:, None]
        own_sq = np.einsum("nd,nd->n", Y, Y)
        for j in range(cfg.count):
            if j == i:
                continue
            shifted = Y - cfg.centers[j][None, :] + cfg.centers[i][None, :]
            other_sq = np.einsum("nd,nd->n", shifted, shifted)
            violations += int(np.sum(own_sq >= other_sq))
        attempts += m
    return FatteningReport(violations=violations, attempts=attempts,
                           rejection_failures=failures)


def halfspace_isoperimetry(p: float, eps: float) -> float:
    """Lower bound on the Gaussian mass of an eps-fattened set of mass p.

    With x the upper-tail quantile solving P[N(0,1) > x] = p, the fattened
    mass is P[N(0,1) > x - eps].
    """
    if not 0.0 < p <= 0.5:
        raise ValueError("p must lie in (0, 1/2]")
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    x = float(ndtri(1.0 - p))
    return float(ndtr(eps - x))


def upper_tail_quantile(p: float) -> float:
    """x with P[N(0,1) > x] = p."""
    return float(ndtri(1.0 - p))


@dataclass
class LowerBoundInstance:
    """Mixture forcing many well-separated consistent means.

    Components: half the mass is a centered Gaussian; each planted direction
    carries the positive part of (alpha * N(2 eps e_i, I) - half-Gaussian);
    the remainder tops up with more centered Gaussian mass.  Reconstructible
    from (alpha, eps, d_planted, seed).
    """

    alpha: float
    eps: float
    d_planted: int
    seed: int
    masses: np.ndarray            # estimated component masses m_i
    mass_stderr: np.ndarray
    mc_samples: int

    @property
    def dim(self) -> int:
        return self.d_planted

    @property
    def planted_means(self) -> np.ndarray:
        return 2.0 * self.eps * np.eye(self.d_planted)

    @property
    def remainder_mass(self) -> float:
        return 1.0 - 0.5 - float(self.masses.sum())

    def nonzero_threshold(self) -> float:
        """Coordinate level above which a planted component has density.

        From max(0, alpha N(2 eps e_i, I) - N(0,I)/2): the exponent comparison
        gives x_i > eps + log(1/(2 alpha)) / (2 eps).
        """
        return self.eps + math.log(1.0 / (2.0 * self.alpha)) / (2.0 * self.eps)

    def mass_upper_bound(self) -> float:
        """exp(-log^2(1/(2 alpha)) / (8 eps^2)), the planted-mass tail bound."""
        L = math.log(1.0 / (2.0 * self.alpha))
        return math.exp(-L * L / (8.0 * self.eps ** 2))

    def _log_n0(self, x: np.ndarray) -> np.ndarray:
        sq = np.einsum("nd,nd->n", x, x)
        return -0.5 * (self.d_planted * LOG_2PI + sq)

    def planted_excess(self, x: np.ndarray, i: int) -> np.ndarray:
        """Density of component i: max(0, alpha N_i - N_0 / 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        log_ni = log_density_gaussian(x, self.planted_means[i])
        ratio = 0.5 * np.exp(-2.0 * self.eps * x[:, i] + 2.0 * self.eps ** 2)
        return np.exp(log_ni) * np.maximum(0.0, self.alpha - ratio)

    def density(self, x) -> np.ndarray:
        """Total mixture density at the given points (batch-friendly)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n0 = np.exp(self._log_n0(x))
        out = (0.5 + self.remainder_mass) * n0
        for i in range(self.d_planted):
            out = out + self.planted_excess(x, i)
        return out

    def sample(self, count: int, seed) -> np.ndarray:
        """Exact mixture sampler; planted components go through rejection
        against their proposal Gaussian with the exact acceptance ratio."""
        gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "lb-sample")
        cum = np.concatenate([[0.5], self.masses]).cumsum()
        u = gen.random(count)
        comp = np.searchsorted(cum, u, side="right")  # d_planted+1 => remainder
        out = np.empty((count, self.d_planted))
        base = comp >= self.d_planted + 1
        base |= comp == 0
        n_base = int(np.sum(base))
        out[base] = gen.standard_normal((n_base, self.d_planted))
        for i in range(self.d_planted):
            sel = np.flatnonzero(comp == i + 1)
            need = sel.size
            filled = 0
            while filled < need:
                prop = self.planted_means[i] + gen.standard_normal(
                    (max(256, 2 * (need - filled)), self.d_planted))
                acc_p = np.maximum(
                    0.0, 1.0 - (0.5 / self.alpha) * np.exp(
                        -2.0 * self.eps * prop[:, i] + 2.0 * self.eps ** 2))
                keep = prop[gen.random(prop.shape[0]) < acc_p]
                take = min(keep.shape[0], need - filled)
                if take:
                    out[sel[filled:filled + take]] = keep[:take]
                    filled += take
        return out

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.alpha,
            "eps": self.eps,
            "d_planted": self.d_planted,
            "seed": self.seed,
            "mc_samples": self.mc_samples,
            "masses": [float(v) for v in self.masses],
            "remainder_mass": self.remainder_mass,
        }, sort_keys=True)


def lower_bound_instance(alpha: float, eps: float, d_planted: int, seed: int,
                         mc_samples: int = 1_000_000) -> LowerBoundInstance:
    """Build the hard mixture; masses are Monte-Carlo integrals of the planted
    excess densities (one-dimensional integrands along each planted axis)."""
    if not 0.0 < alpha < 1.0 / 3.0:
        raise ValueError("need alpha < 1/3")
    if not 0.0 < eps < math.sqrt(math.log(1.0 / (2.0 * alpha))) / 2.0:
        raise ValueError("need eps < sqrt(log(1/(2 alpha)))/2")
    L = math.log(1.0 / (2.0 * alpha))
    cap = max(1, math.floor(math.exp(L * L / (8.0 * eps ** 2)) / 2.0))
    if not 1 <= d_planted <= cap:
        raise ValueError(f"d_planted must lie in [1, {cap}]")
    masses = np.empty(d_planted)
    stderrs = np.empty(d_planted)
    for i in range(d_planted):
        gen = rng_mod.stream(seed, "lb-mass", i)
        t = 2.0 * eps + gen.standard_normal(mc_samples)
        vals = np.maximum(0.0, alpha - 0.5 * np.exp(-2.0 * eps * t + 2.0 * eps ** 2))
        masses[i] = float(vals.mean())
        stderrs[i] = float(vals.std() / math.sqrt(mc_samples))
    if np.any(masses > 1.0 / (2.0 * d_planted)):
        raise ValueError("planted masses exceed 1/(2 d); shrink d_planted")
    return LowerBoundInstance(alpha=alpha, eps=eps, d_planted=d_planted,
                              seed=seed, masses=masses, mass_stderr=stderrs,
                              mc_samples=mc_samples)


def alpha_consistency_check(density_fn, mu, alpha: float, test_points) -> float:
    """Minimum of D(x) - alpha N(mu, I)(x) over the test points.

    Non-negative everywhere means the mean is consistent with being an
    alpha-fraction of the observed density.
    """
    pts = np.atleast_2d(np.asarray(test_points, dtype=float))
    dens = np.asarray(density_fn(pts), dtype=float).reshape(-1)
    ref = alpha * np.exp(log_density_gaussian(pts, np.asarray(mu, dtype=float)))
    return float(np.min(dens - ref))


def sup_process_estimate(centers: np.ndarray, n_samples: int, seed):
    """Monte-Carlo mean of sup_i <x, mu_i> under x ~ N(0, I), with stderr.

    Diagnostic companion to the minoration bound; no constant is asserted.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    gen = seed if isinstance(seed, np.random.Generator) else rng_mod.stream(seed, "sup")
    vals = np.empty(n_samples)
    done = 0
    while done < n_samples:
        batch = min(n_samples - done, 200_000)
        X = gen.standard_normal((batch, centers.shape[1]))
        vals[done:done + batch] = (X @ centers.T).max(axis=1)
        done += batch
    return float(vals.mean()), float(vals.std() / math.sqrt(n_samples))


@dataclass
class VerificationReport:
    """Monte-Carlo estimates for a center configuration."""

    q_hat: list
    q_stderr: list
    p_hat: list
    p_stderr: list
    containment_violations: int
    containment_attempts: int
    consistency_margin: float | None = None
    n_samples: int = 0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "q_hat": self.q_hat,
            "q_stderr": self.q_stderr,
            "p_hat": self.p_hat,
            "p_stderr": self.p_stderr,
            "containment_violations": self.containment_violations,
            "containment_attempts": self.containment_attempts,
            "consistency_margin": self.consistency_margin,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }, sort_keys=True)


def verify_centers(cfg: CenterConfig, n_samples: int, seed: int,
                   fattening_trials: int = 10_000) -> VerificationReport:
    """Estimate every q_i and p_i and run the containment predicate."""
    q, qs, p, ps = [], [], [], []
    for i in range(cfg.count):
        qi, qe = voronoi_mass(i, cfg, n_samples, rng_mod.stream(seed, "voronoi", i))
        pi, pe = argmax_prob(i, cfg, n_samples, rng_mod.stream(seed, "argmax", i))
        q.append(qi)
        qs.append(qe)
        p.append(pi)
        ps.append(pe)
    fat = fattening_containment_test(cfg, fattening_trials, rng_mod.stream(seed, "fatten"))
    return VerificationReport(q_hat=q, q_stderr=qs, p_hat=p, p_stderr=ps,
                              containment_violations=fat.violations,
                              containment_attempts=fat.attempts,
                              n_samples=n_samples, seed=seed)

"""Pure-numpy kernel implementations (fallback backend).

Semantics match ``_kernels_numba`` exactly; see that module for the hot-loop
variants.  These stay vectorized so the fallback remains usable, just slower.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

# Prefilter window: a candidate can only pass the moment check if enough
# points sit within squared radius QCUT * d of it (sound for k_star >= 2).
QCUT = 16.0

_ROW_CHUNK = 256


def _poly_eval(a, bc, coef):
    """P(a, bc) = sum_{p,q} coef[p, q] * a**p * bc**q, elementwise."""
    p_max, q_max = coef.shape
    out = np.zeros_like(a)
    ap = np.ones_like(a)
    for p in range(p_max):
        if p:
            ap = ap * a
        inner = np.zeros_like(a)
        bq = np.ones_like(a)
        for q in range(q_max):
            if q:
                bq = bq * bc
            c = coef[p, q]
            if c != 0.0:
                inner = inner + c * bq
        out = out + ap * inner
    return out


def gram_rowsums(X, sq, coefs, alive):
    """Row sums of Hermite-feature Gram matrices, one per moment order.

    Returns ``s`` with ``s[t, i] = sum_{j alive} P_t(<x_i, x_j>, |x_i|^2 + |x_j|^2)``
    for alive ``i`` (zero elsewhere).  ``coefs`` has shape (T, P, Q).
    """
    n = X.shape[0]
    n_orders = coefs.shape[0]
    s = np.zeros((n_orders, n))
    idx_alive = np.flatnonzero(alive)
    if idx_alive.size == 0:
        return s
    Xa = X[idx_alive]
    sqa = sq[idx_alive]
    for start in range(0, idx_alive.size, _ROW_CHUNK):
        rows = idx_alive[start:start + _ROW_CHUNK]
        A = X[rows] @ Xa.T
        BC = sq[rows][:, None] + sqa[None, :]
        for t in range(n_orders):
            s[t, rows] = _poly_eval(A, BC, coefs[t]).sum(axis=1)
    return s


def gram_columns(adot, sq, sq_j, coefs):
    """P_t(adot_i, sq_i + sq_j) for every i; shape (T, n)."""
    n_orders = coefs.shape[0]
    out = np.empty((n_orders, adot.shape[0]))
    bc = sq + sq_j
    for t in range(n_orders):
        out[t] = _poly_eval(adot, bc, coefs[t])
    return out


def project_capped_simplex(v, budget):
    """Euclidean projection onto {w in [0,1]^n : sum w = budget} by bisection."""
    n = v.shape[0]
    if budget <= 0.0:
        return np.zeros(n)
    if budget >= n:
        return np.ones(n)
    lo = float(np.min(v)) - 1.0
    hi = float(np.max(v))
    tol = 1e-10 * max(1.0, budget)
    w = np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        w = np.clip(v - theta, 0.0, 1.0)
        total = float(np.sum(w))
        if abs(total - budget) <= tol:
            break
        if total > budget:
            lo = theta
        else:
            hi = theta
    return w


def _project_warm(v, budget, theta_guess, have_guess):
    """Warm-bracket bisection; returns (w, theta).  See the numba twin."""
    glo = float(np.min(v)) - 1.0
    ghi = float(np.max(v))
    tol = 1e-10 * max(1.0, budget)
    clip_sum = lambda t: float(np.sum(np.clip(v - t, 0.0, 1.0)))
    if have_guess:
        width = 1e-3 * max(1.0, abs(theta_guess))
        lo = max(glo, theta_guess - width)
        hi = min(ghi, theta_guess + width)
        if lo > hi:
            lo, hi = glo, ghi
        for _ in range(64):
            if clip_sum(lo) >= budget or lo <= glo:
                break
            width *= 4.0
            lo = max(glo, lo - width)
        for _ in range(64):
            if clip_sum(hi) <= budget or hi >= ghi:
                break
            width *= 4.0
            hi = min(ghi, hi + width)
    else:
        lo, hi = glo, ghi
    theta = 0.5 * (lo + hi)
    w = np.clip(v - theta, 0.0, 1.0)
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        w = np.clip(v - theta, 0.0, 1.0)
        total = float(np.sum(w))
        if abs(total - budget) <= tol:
            break
        if total > budget:
            lo = theta
        else:
            hi = theta
    return w, theta


def _features(Y, z, kstar):
    """Rows: concatenated flattened (y_i - z)^{(x)k}, k = 1..kstar."""
    E = Y - z[None, :]
    blocks = [E]
    cur = E
    for _ in range(2, kstar + 1):
        cur = (cur[:, :, None] * E[:, None, :]).reshape(E.shape[0], -1)
        blocks.append(cur)
    return np.concatenate(blocks, axis=1)


def _block_slices(d, kstar):
    out = []
    start = 0
    for k in range(1, kstar + 1):
        size = d ** k
        out.append((start, start + size))
        start += size
    return out


def pgd_fit(Y, z, g, budget, kstar, delta_sq, max_iters, power_iters,
            tol_grad, accept_break, stall_window, stall_obj_mult, stall_rel,
            prefilter):
    """Projected-gradient moment fit for one candidate center.

    Returns (w, objective, accepted, n_iters, flag, per_order_gaps).
    flag: 0 converged, 1 hit max_iters, 2 prefilter reject, 3 early stall
    reject, 4 accept-break.
    """
    n, d = Y.shape
    if prefilter and kstar >= 2:
        rho_sq = QCUT * d
        sq = np.sum((Y - z[None, :]) ** 2, axis=1)
        delta = np.sqrt(delta_sq)
        need = budget * (1.0 - (1.0 + delta / np.sqrt(d)) / QCUT)
        reject = float(np.sum(sq <= rho_sq)) < need
        if not reject and 0.0 < budget <= n:
            # trace window; see the numba twin for the derivation
            srt = np.sort(sq)
            full = int(budget)
            frac = budget - full
            lo_sum = float(srt[:min(full, n)].sum())
            hi_sum = float(srt[n - min(full, n):].sum())
            if full < n:
                lo_sum += frac * srt[full]
                hi_sum += frac * srt[n - full - 1]
            slack = np.sqrt(d) * delta
            if hi_sum / budget < d - slack or lo_sum / budget > d + slack:
                reject = True
        if reject:
            return (np.full(n, budget / n), np.inf, False, 0, 2,
                    np.full(kstar, np.inf))
    Psi = _features(Y, z, kstar) / budget
    D = Psi.shape[1]

    # Lipschitz constant of the gradient via power iteration on Psi^T Psi.
    C = Psi.T @ Psi
    v = np.ones(D) / np.sqrt(D)
    for _ in range(power_iters):
        nv = C @ v
        nrm = np.linalg.norm(nv)
        if nrm == 0.0:
            break
        v = nv / nrm
    lam = float(v @ (C @ v))
    L = 2.0 * lam * (1.0 + 1e-3) + 1e-300
    step = 1.0 / L

    step_min = step
    step_max = step * 1e7

    w = np.full(n, budget / n)
    resid = Psi.T @ w - g
    obj = float(resid @ resid)
    flag = 1
    it = 0
    window_obj = obj
    no_progress = 0
    theta = 0.0
    have_theta = False
    for it in range(1, max_iters + 1):
        grad = 2.0 * (Psi @ resid)
        if it % 4 == 0 and obj > delta_sq:
            # certified reject: linear lower bound over the capped simplex
            srt = np.sort(grad)
            full = min(int(budget), n)
            lin_min = float(srt[:full].sum())
            if full < n:
                lin_min += (budget - full) * srt[full]
            lower = obj - (float(grad @ w) - lin_min)
            if lower > delta_sq:
                flag = 3
                break
        trial = w - step * grad
        if budget <= 0.0:
            w_hat = np.zeros(n)
        elif budget >= n:
            w_hat = np.ones(n)
        else:
            w_hat, theta = _project_warm(trial, budget, theta, have_theta)
            have_theta = True
        dvec = w_hat - w
        move = float(np.max(np.abs(dvec))) if n else 0.0
        if move == 0.0:
            flag = 0
            break
        # exact line search along the projected-step segment (quadratic)
        q = Psi.T @ dvec
        a = float(q @ q)
        b = 2.0 * float(resid @ q)
        if a <= 0.0:
            tau = 1.0
        else:
            tau = min(1.0, max(0.0, -b / (2.0 * a)))
        if tau <= 0.0:
            flag = 0
            break
        obj_prev = obj
        w = w + tau * dvec
        resid = resid + tau * q
        obj = float(resid @ resid)
        if tau >= 0.999 and step < step_max:
            step *= 2.0
        elif tau < 0.1 and step > step_min:
            step *= 0.5
        if accept_break and obj <= delta_sq:
            flag = 4
            break
        if obj_prev - obj <= tol_grad * max(1.0, obj):
            no_progress += 1
            if no_progress >= 3:
                flag = 0
                break
        else:
            no_progress = 0
        if it % stall_window == 0:
            if (obj > stall_obj_mult * delta_sq
                    and window_obj - obj <= stall_rel * obj):
                flag = 3
                break
            window_obj = obj
    per_order = np.array([
        float(np.linalg.norm(resid[a:b])) for a, b in _block_slices(d, kstar)
    ])
    accepted = obj <= delta_sq
    return w, obj, accepted, it, flag, per_order


def pgd_fit_batch(Y, Z, g, budget, kstar, delta_sq, max_iters, power_iters,
                  tol_grad, accept_break, stall_window, stall_obj_mult,
                  stall_rel, prefilter, skip,
                  out_obj, out_acc, out_iters, out_flags, out_gaps):
    """Fit every candidate row of Z; results written to the out arrays."""
    for c in range(Z.shape[0]):
        if skip[c]:
            out_obj[c] = np.inf
            out_acc[c] = 0
            out_iters[c] = 0
            out_flags[c] = 5
            out_gaps[c] = np.inf
            continue
        _, obj, acc, iters, flag, gaps = pgd_fit(
            Y, Z[c], g, budget, kstar, delta_sq, max_iters, power_iters,
            tol_grad, accept_break, stall_window, stall_obj_mult, stall_rel,
            prefilter)
        out_obj[c] = obj
        out_acc[c] = 1 if acc else 0
        out_iters[c] = iters
        out_flags[c] = flag
        out_gaps[c] = gaps

"""Numba kernel implementations (default backend).

Same contracts as ``_kernels_numpy``; loops are fused here so the filter's
pairwise feature products and the weight fitter stay off the interpreter.
All kernels release the GIL so pipeline branches can overlap on threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"

QCUT = 16.0


@njit(cache=True, nogil=True, inline="always")
def _poly_eval_scalar(a, bc, coef):
    p_max, q_max = coef.shape
    out = 0.0
    ap = 1.0
    for p in range(p_max):
        if p:
            ap *= a
        inner = 0.0
        bq = 1.0
        for q in range(q_max):
            if q:
                bq *= bc
            c = coef[p, q]
            if c != 0.0:
                inner += c * bq
        out += ap * inner
    return out


@njit(cache=True, nogil=True)
def gram_rowsums(X, sq, coefs, alive):
    n, d = X.shape
    n_orders = coefs.shape[0]
    s = np.zeros((n_orders, n))
    for i in range(n):
        if not alive[i]:
            continue
        for j in range(n):
            if not alive[j]:
                continue
            a = 0.0
            for c in range(d):
                a += X[i, c] * X[j, c]
            bc = sq[i] + sq[j]
            for t in range(n_orders):
                s[t, i] += _poly_eval_scalar(a, bc, coefs[t])
    return s


@njit(cache=True, nogil=True)
def gram_columns(adot, sq, sq_j, coefs):
    n = adot.shape[0]
    n_orders = coefs.shape[0]
    out = np.empty((n_orders, n))
    for i in range(n):
        bc = sq[i] + sq_j
        for t in range(n_orders):
            out[t, i] = _poly_eval_scalar(adot[i], bc, coefs[t])
    return out


@njit(cache=True, nogil=True)
def project_capped_simplex(v, budget):
    n = v.shape[0]
    w = np.empty(n)
    if budget <= 0.0:
        for i in range(n):
            w[i] = 0.0
        return w
    if budget >= n:
        for i in range(n):
            w[i] = 1.0
        return w
    lo = v[0]
    hi = v[0]
    for i in range(1, n):
        if v[i] < lo:
            lo = v[i]
        if v[i] > hi:
            hi = v[i]
    lo -= 1.0
    tol = 1e-10 * max(1.0, budget)
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        total = 0.0
        for i in range(n):
            wi = v[i] - theta
            if wi < 0.0:
                wi = 0.0
            elif wi > 1.0:
                wi = 1.0
            w[i] = wi
            total += wi
        if abs(total - budget) <= tol:
            break
        if total > budget:
            lo = theta
        else:
            hi = theta
    return w


@njit(cache=True, nogil=True, inline="always")
def _clip_sum(v, theta, w):
    total = 0.0
    for i in range(v.shape[0]):
        wi = v[i] - theta
        if wi < 0.0:
            wi = 0.0
        elif wi > 1.0:
            wi = 1.0
        w[i] = wi
        total += wi
    return total


@njit(cache=True, nogil=True)
def _project_warm(v, budget, w, theta_guess, have_guess):
    """Bisection projection with a warm bracket around the previous shift.

    Writes clip(v - theta) into ``w`` and returns theta.  The clip-sum is
    monotone decreasing in theta, so expanding the warm bracket until it
    straddles the budget keeps every probe O(n).
    """
    n = v.shape[0]
    glo = v[0]
    ghi = v[0]
    for i in range(1, n):
        if v[i] < glo:
            glo = v[i]
        if v[i] > ghi:
            ghi = v[i]
    glo -= 1.0
    tol = 1e-10 * max(1.0, budget)
    if have_guess:
        width = 1e-3 * max(1.0, abs(theta_guess))
        lo = max(glo, theta_guess - width)
        hi = min(ghi, theta_guess + width)
        if lo > hi:
            lo, hi = glo, ghi
        # grow until S(lo) >= budget >= S(hi)
        for _ in range(64):
            if _clip_sum(v, lo, w) >= budget or lo <= glo:
                break
            width *= 4.0
            lo = max(glo, lo - width)
        for _ in range(64):
            if _clip_sum(v, hi, w) <= budget or hi >= ghi:
                break
            width *= 4.0
            hi = min(ghi, hi + width)
    else:
        lo, hi = glo, ghi
    theta = 0.5 * (lo + hi)
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        total = _clip_sum(v, theta, w)
        if abs(total - budget) <= tol:
            break
        if total > budget:
            lo = theta
        else:
            hi = theta
    return theta


@njit(cache=True, nogil=True)
def _fill_features(Y, z, kstar, Psi):
    """Rows of Psi <- concat of (y_i - z)^{(x)k} for k=1..kstar (unscaled)."""
    n, d = Y.shape
    for i in range(n):
        for c in range(d):
            Psi[i, c] = Y[i, c] - z[c]
        prev_start = 0
        prev_len = d
        offset = d
        for _ in range(2, kstar + 1):
            for p in range(prev_len):
                base = Psi[i, prev_start + p]
                for b in range(d):
                    Psi[i, offset + p * d + b] = base * Psi[i, b]
            prev_start = offset
            prev_len *= d
            offset += prev_len


@njit(cache=True, nogil=True)
def pgd_fit_core(Y, z, g, budget, kstar, delta_sq, max_iters, power_iters,
                 tol_grad, accept_break, stall_window, stall_obj_mult,
                 stall_rel, prefilter, w_out, gaps_out):
    n, d = Y.shape
    if prefilter and kstar >= 2:
        rho_sq = QCUT * d
        sq = np.empty(n)
        near = 0
        for i in range(n):
            dist = 0.0
            for c in range(d):
                diff = Y[i, c] - z[c]
                dist += diff * diff
            sq[i] = dist
            if dist <= rho_sq:
                near += 1
        need = budget * (1.0 - (1.0 + np.sqrt(delta_sq) / np.sqrt(d)) / QCUT)
        reject = near < need
        if not reject and 0.0 < budget <= n:
            # trace window: any accepted w has budget-weighted mean squared
            # radius within sqrt(d) Delta of d; the extreme achievable means
            # come from the largest / smallest budget-worth of radii
            srt = np.sort(sq)
            full = int(budget)
            frac = budget - full
            lo_sum = 0.0
            for i in range(min(full, n)):
                lo_sum += srt[i]
            if full < n:
                lo_sum += frac * srt[full]
            hi_sum = 0.0
            for i in range(n - min(full, n), n):
                hi_sum += srt[i]
            if full < n:
                hi_sum += frac * srt[n - full - 1]
            slack = np.sqrt(d) * np.sqrt(delta_sq)
            if hi_sum / budget < d - slack or lo_sum / budget > d + slack:
                reject = True
        if reject:
            for i in range(n):
                w_out[i] = budget / n
            for k in range(kstar):
                gaps_out[k] = np.inf
            return np.inf, 0, 0, 2

    D = 0
    size = 1
    for _ in range(kstar):
        size *= d
        D += size
    Psi = np.empty((n, D))
    _fill_features(Y, z, kstar, Psi)
    inv_b = 1.0 / budget
    for i in range(n):
        for c in range(D):
            Psi[i, c] *= inv_b

    C = np.zeros((D, D))
    for i in range(n):
        for c1 in range(D):
            v1 = Psi[i, c1]
            if v1 != 0.0:
                for c2 in range(c1, D):
                    C[c1, c2] += v1 * Psi[i, c2]
    for c1 in range(D):
        for c2 in range(c1 + 1, D):
            C[c2, c1] = C[c1, c2]
    vec = np.full(D, 1.0 / np.sqrt(D))
    tmp = np.empty(D)
    for _ in range(power_iters):
        nrm = 0.0
        for c1 in range(D):
            acc = 0.0
            for c2 in range(D):
                acc += C[c1, c2] * vec[c2]
            tmp[c1] = acc
            nrm += acc * acc
        nrm = np.sqrt(nrm)
        if nrm == 0.0:
            break
        for c1 in range(D):
            vec[c1] = tmp[c1] / nrm
    lam = 0.0
    for c1 in range(D):
        acc = 0.0
        for c2 in range(D):
            acc += C[c1, c2] * vec[c2]
        lam += vec[c1] * acc
    L = 2.0 * lam * (1.0 + 1e-3) + 1e-300
    step = 1.0 / L
    step_min = step
    step_max = step * 1e7

    w = np.full(n, budget / n)
    resid = np.zeros(D)
    for i in range(n):
        wi = w[i]
        for c in range(D):
            resid[c] += Psi[i, c] * wi
    obj = 0.0
    for c in range(D):
        resid[c] -= g[c]
        obj += resid[c] * resid[c]

    trial = np.empty(n)
    w_hat = np.empty(n)
    grad = np.empty(n)
    q = np.empty(D)
    flag = 1
    it = 0
    window_obj = obj
    no_progress = 0
    theta = 0.0
    have_theta = False
    for it in range(1, max_iters + 1):
        for i in range(n):
            acc = 0.0
            for c in range(D):
                acc += Psi[i, c] * resid[c]
            grad[i] = 2.0 * acc
            trial[i] = w[i] - step * grad[i]
        if it % 4 == 0 and obj > delta_sq:
            # certified reject: linear lower bound over the capped simplex
            gdotw = 0.0
            for i in range(n):
                gdotw += grad[i] * w[i]
            srt = np.sort(grad)
            full = int(budget)
            if full > n:
                full = n
            lin_min = 0.0
            for i in range(full):
                lin_min += srt[i]
            if full < n:
                lin_min += (budget - full) * srt[full]
            lower = obj - (gdotw - lin_min)
            if lower > delta_sq:
                flag = 3
                break
        if budget <= 0.0:
            for i in range(n):
                w_hat[i] = 0.0
        elif budget >= n:
            for i in range(n):
                w_hat[i] = 1.0
        else:
            theta = _project_warm(trial, budget, w_hat, theta, have_theta)
            have_theta = True
        move = 0.0
        for i in range(n):
            w_hat[i] -= w[i]  # w_hat now holds the segment direction d
            diff = abs(w_hat[i])
            if diff > move:
                move = diff
        if move == 0.0:
            flag = 0
            break
        # exact line search along the projected-step segment (quadratic)
        for c in range(D):
            q[c] = 0.0
        for i in range(n):
            di = w_hat[i]
            if di != 0.0:
                for c in range(D):
                    q[c] += Psi[i, c] * di
        a = 0.0
        b = 0.0
        for c in range(D):
            a += q[c] * q[c]
            b += 2.0 * resid[c] * q[c]
        if a <= 0.0:
            tau = 1.0
        else:
            tau = -b / (2.0 * a)
            if tau > 1.0:
                tau = 1.0
        if tau <= 0.0:
            flag = 0
            break
        obj_prev = obj
        obj = 0.0
        for i in range(n):
            w[i] += tau * w_hat[i]
        for c in range(D):
            resid[c] += tau * q[c]
            obj += resid[c] * resid[c]
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
            if obj > stall_obj_mult * delta_sq and window_obj - obj <= stall_rel * obj:
                flag = 3
                break
            window_obj = obj

    for i in range(n):
        w_out[i] = w[i]
    start = 0
    size = 1
    for k in range(kstar):
        size *= d
        acc = 0.0
        for c in range(start, start + size):
            acc += resid[c] * resid[c]
        gaps_out[k] = np.sqrt(acc)
        start += size
    accepted = 1 if obj <= delta_sq else 0
    return obj, accepted, it, flag


@njit(cache=True, nogil=True)
def pgd_fit_batch(Y, Z, g, budget, kstar, delta_sq, max_iters, power_iters,
                  tol_grad, accept_break, stall_window, stall_obj_mult,
                  stall_rel, prefilter, skip,
                  out_obj, out_acc, out_iters, out_flags, out_gaps):
    n = Y.shape[0]
    w_tmp = np.empty(n)
    for c in range(Z.shape[0]):
        if skip[c]:
            out_obj[c] = np.inf
            out_acc[c] = 0
            out_iters[c] = 0
            out_flags[c] = 5
            for k in range(out_gaps.shape[1]):
                out_gaps[c, k] = np.inf
            continue
        obj, acc, iters, flag = pgd_fit_core(
            Y, Z[c], g, budget, kstar, delta_sq, max_iters, power_iters,
            tol_grad, accept_break, stall_window, stall_obj_mult, stall_rel,
            prefilter, w_tmp, out_gaps[c])
        out_obj[c] = obj
        out_acc[c] = acc
        out_iters[c] = iters
        out_flags[c] = flag


def pgd_fit(Y, z, g, budget, kstar, delta_sq, max_iters, power_iters,
            tol_grad, accept_break, stall_window, stall_obj_mult, stall_rel,
            prefilter):
    """Single-candidate wrapper matching the numpy backend's signature."""
    n = Y.shape[0]
    w = np.empty(n)
    gaps = np.empty(kstar)
    obj, acc, iters, flag = pgd_fit_core(
        Y, z, g, budget, kstar, delta_sq, max_iters, power_iters, tol_grad,
        accept_break, stall_window, stall_obj_mult, stall_rel, prefilter,
        w, gaps)
    return w, obj, bool(acc), iters, flag, gaps

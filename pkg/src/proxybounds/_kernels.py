"""Numba kernels for the projected-subgradient dual solver.

Both solve kernels maximize

    J(gamma, beta) = sum_i w_i * min_c [ qtilde(i, c)' A_r gamma - Phi(c)' beta ] + mu' beta

over the unit ball in gamma and per-block unit balls in beta (the multiplier
ellipsoid and the sieve coefficient bound are folded into ``A_r``, ``Phi`` and
``mu`` by the caller). Each iteration's argmin pattern yields a free upper
bound ||g_gamma|| + sum_blocks ||g_beta||, so runs carry a duality-gap
certificate. Ties in the inner minimum keep the first candidate in
enumeration order.
"""

import numpy as np
from numba import njit

# stopping reasons
STOP_CAP = 0
STOP_GAP = 1
STOP_STALL = 2


@njit(cache=True)
def _project_blocks(bet, block_ends):
    b0 = 0
    for bi in range(block_ends.shape[0]):
        b1 = block_ends[bi]
        nb = 0.0
        for k in range(b0, b1):
            nb += bet[k] * bet[k]
        nb = np.sqrt(nb)
        if nb > 1.0:
            for k in range(b0, b1):
                bet[k] /= nb
        b0 = b1


@njit(cache=True)
def _block_norm_sum(g, block_ends):
    total = 0.0
    b0 = 0
    for bi in range(block_ends.shape[0]):
        b1 = block_ends[bi]
        nb = 0.0
        for k in range(b0, b1):
            nb += g[k] * g[k]
        total += np.sqrt(nb)
        b0 = b1
    return total


@njit(cache=True)
def solve_dense(TA, Phi, mu, w, block_ends, max_iters, step_scale, tol,
                improve_tol, improve_window, polyak):
    n, m, d = TA.shape
    K = Phi.shape[1]
    gam = np.zeros(d)
    bet = np.zeros(K)
    ggam = np.zeros(d)
    gbet = np.zeros(K)
    pc = np.zeros(m)
    avg_g = np.zeros(d)
    avg_b = np.zeros(K)
    best_val = -np.inf
    best_gam = np.zeros(d)
    best_bet = np.zeros(K)
    upper = np.inf
    window_best = -np.inf
    cert_every = 25
    a0 = -1.0
    gnorm = 0.0
    it = 0
    stop = STOP_CAP
    for t in range(max_iters):
        it = t + 1
        for c in range(m):
            s = 0.0
            for k in range(K):
                s += Phi[c, k] * bet[k]
            pc[c] = s
        obj = 0.0
        for j in range(d):
            ggam[j] = 0.0
        for k in range(K):
            gbet[k] = mu[k]
        for i in range(n):
            vmin = np.inf
            cmin = 0
            for c in range(m):
                v = -pc[c]
                for j in range(d):
                    v += TA[i, c, j] * gam[j]
                if v < vmin:
                    vmin = v
                    cmin = c
            obj += w[i] * vmin
            for j in range(d):
                ggam[j] += w[i] * TA[i, cmin, j]
            for k in range(K):
                gbet[k] -= w[i] * Phi[cmin, k]
        for k in range(K):
            obj += mu[k] * bet[k]
        if obj > best_val:
            best_val = obj
            best_gam[:] = gam
            best_bet[:] = bet
        u_t = np.sqrt((ggam * ggam).sum()) + _block_norm_sum(gbet, block_ends)
        if u_t < upper:
            upper = u_t
        avg_g += ggam
        avg_b += gbet
        if (t + 1) % cert_every == 0:
            u_avg = np.sqrt((avg_g * avg_g).sum()) / cert_every + _block_norm_sum(avg_b, block_ends) / cert_every
            if u_avg < upper:
                upper = u_avg
            avg_g[:] = 0.0
            avg_b[:] = 0.0
        if upper - best_val <= tol:
            stop = STOP_GAP
            break
        if (t + 1) % improve_window == 0:
            if best_val - window_best < improve_tol:
                stop = STOP_STALL
                break
            window_best = best_val
        gnorm = np.sqrt((ggam * ggam).sum() + (gbet * gbet).sum())
        if a0 < 0.0:
            a0 = step_scale / max(gnorm, 1e-300)
        if polyak and np.isfinite(upper) and gnorm > 0.0:
            step = (upper - obj) / (gnorm * gnorm)
        else:
            step = a0 / np.sqrt(t + 1.0)
        for j in range(d):
            gam[j] += step * ggam[j]
        for k in range(K):
            bet[k] += step * gbet[k]
        ng = np.sqrt((gam * gam).sum())
        if ng > 1.0:
            gam /= ng
        _project_blocks(bet, block_ends)
    gap = upper - best_val
    return best_gam, best_bet, best_val, it, gnorm, stop, gap


@njit(cache=True)
def eval_dense(TA, Phi, gam, bet):
    n, m, d = TA.shape
    K = Phi.shape[1]
    pc = np.zeros(m)
    for c in range(m):
        s = 0.0
        for k in range(K):
            s += Phi[c, k] * bet[k]
        pc[c] = s
    u = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    for i in range(n):
        vmin = np.inf
        cmin = 0
        for c in range(m):
            v = -pc[c]
            for j in range(d):
                v += TA[i, c, j] * gam[j]
            if v < vmin:
                vmin = v
                cmin = c
        u[i] = vmin
        arg[i] = cmin
    return u, arg


@njit(cache=True)
def _bisect_left(x, lo, hi, v):
    while lo < hi:
        mid = (lo + hi) // 2
        if x[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _grouped_pass(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink,
                  gam, bet, w, pen, pmin, parg, smin, sarg,
                  u_out, qacc, gbet, want_rows):
    """One evaluation of the grouped objective; fills subgradient accumulators.

    Returns the weighted objective term sum_i w_i u_i. ``qacc`` accumulates the
    raw augmented moment at the argmin; ``gbet`` must be pre-filled with mu and
    gets the -phi part subtracted.
    """
    n, G, dq = q_pre.shape
    ds = s_abs.shape[2]
    d = Ar.shape[0]
    K = Phi.shape[1]
    m = x_all.shape[0]
    # lam = A_r @ gam
    lam = np.zeros(d)
    for r in range(d):
        s = 0.0
        for j in range(d):
            s += Ar[r, j] * gam[j]
        lam[r] = s
    lam_zh = lam[dq]
    for c in range(m):
        s = 0.0
        for k in range(K):
            s += Phi[c, k] * bet[k]
        pen[c] = -s
    for g in range(G):
        lo = grp_start[g]
        hi = grp_start[g + 1]
        run = np.inf
        runa = -1
        for c in range(lo, hi):
            v = pen[c] - lam_zh * x_all[c]
            if v < run:
                run = v
                runa = c
            pmin[c] = run
            parg[c] = runa
        run = np.inf
        runa = -1
        for c in range(hi - 1, lo - 1, -1):
            v = pen[c] + lam_zh * x_all[c]
            if v <= run:
                run = v
                runa = c
            smin[c] = run
            sarg[c] = runa
    total = 0.0
    for i in range(n):
        ubest = np.inf
        gbest = 0
        cbest = -1  # candidate index; -1 means the kink at zh[i]
        for g in range(G):
            base = 0.0
            for j in range(dq):
                base += lam[j] * q_pre[i, g, j]
            for j in range(ds):
                base += lam[dq + 1 + j] * s_abs[i, g, j]
            lo = grp_start[g]
            hi = grp_start[g + 1]
            vbest = np.inf
            karg = -1
            pos = _bisect_left(x_all, lo, hi, zh[i])
            if pos > lo:
                v = lam_zh * zh[i] + pmin[pos - 1]
                if v < vbest:
                    vbest = v
                    karg = parg[pos - 1]
            if pos < hi:
                v = -lam_zh * zh[i] + smin[pos]
                if v < vbest:
                    vbest = v
                    karg = sarg[pos]
            if has_kink:
                v = 0.0
                for k in range(K):
                    v -= PhiKink[i, g, k] * bet[k]
                if v < vbest:
                    vbest = v
                    karg = -1
            v = base + vbest
            if v < ubest:
                ubest = v
                gbest = g
                cbest = karg
        if want_rows:
            u_out[i] = ubest
        total += w[i] * ubest
        for j in range(dq):
            qacc[j] += w[i] * q_pre[i, gbest, j]
        if cbest >= 0:
            qacc[dq] += w[i] * abs(zh[i] - x_all[cbest])
            for k in range(K):
                gbet[k] -= w[i] * Phi[cbest, k]
        else:
            for k in range(K):
                gbet[k] -= w[i] * PhiKink[i, gbest, k]
        for j in range(ds):
            qacc[dq + 1 + j] += w[i] * s_abs[i, gbest, j]
    return total


@njit(cache=True)
def solve_grouped(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink,
                  mu, w, block_ends, max_iters, step_scale, tol,
                  improve_tol, improve_window, polyak):
    n, G, dq = q_pre.shape
    d = Ar.shape[0]
    K = Phi.shape[1]
    m = x_all.shape[0]
    gam = np.zeros(d)
    bet = np.zeros(K)
    pen = np.zeros(m)
    pmin = np.zeros(m)
    smin = np.zeros(m)
    parg = np.zeros(m, dtype=np.int64)
    sarg = np.zeros(m, dtype=np.int64)
    qacc = np.zeros(d)
    ggam = np.zeros(d)
    gbet = np.zeros(K)
    avg_q = np.zeros(d)
    avg_b = np.zeros(K)
    u_dummy = np.zeros(1)
    best_val = -np.inf
    best_gam = np.zeros(d)
    best_bet = np.zeros(K)
    upper = np.inf
    window_best = -np.inf
    cert_every = 25
    a0 = -1.0
    gnorm = 0.0
    it = 0
    stop = STOP_CAP
    for t in range(max_iters):
        it = t + 1
        for j in range(d):
            qacc[j] = 0.0
        for k in range(K):
            gbet[k] = mu[k]
        obj = _grouped_pass(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink,
                            gam, bet, w, pen, pmin, parg, smin, sarg,
                            u_dummy, qacc, gbet, False)
        for k in range(K):
            obj += mu[k] * bet[k]
        # gamma-subgradient is A_r' applied to the mean augmented moment
        for r in range(d):
            s = 0.0
            for j in range(d):
                s += Ar[j, r] * qacc[j]
            ggam[r] = s
        if obj > best_val:
            best_val = obj
            best_gam[:] = gam
            best_bet[:] = bet
        u_t = np.sqrt((ggam * ggam).sum()) + _block_norm_sum(gbet, block_ends)
        if u_t < upper:
            upper = u_t
        avg_q += ggam
        avg_b += gbet
        if (t + 1) % cert_every == 0:
            u_avg = np.sqrt((avg_q * avg_q).sum()) / cert_every + _block_norm_sum(avg_b, block_ends) / cert_every
            if u_avg < upper:
                upper = u_avg
            avg_q[:] = 0.0
            avg_b[:] = 0.0
        if upper - best_val <= tol:
            stop = STOP_GAP
            break
        if (t + 1) % improve_window == 0:
            if best_val - window_best < improve_tol:
                stop = STOP_STALL
                break
            window_best = best_val
        gnorm = np.sqrt((ggam * ggam).sum() + (gbet * gbet).sum())
        if a0 < 0.0:
            a0 = step_scale / max(gnorm, 1e-300)
        if polyak and np.isfinite(upper) and gnorm > 0.0:
            step = (upper - obj) / (gnorm * gnorm)
        else:
            step = a0 / np.sqrt(t + 1.0)
        for j in range(d):
            gam[j] += step * ggam[j]
        for k in range(K):
            bet[k] += step * gbet[k]
        ng = np.sqrt((gam * gam).sum())
        if ng > 1.0:
            gam /= ng
        _project_blocks(bet, block_ends)
    gap = upper - best_val
    return best_gam, best_bet, best_val, it, gnorm, stop, gap


@njit(cache=True)
def eval_grouped(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink, gam, bet):
    n, G, dq = q_pre.shape
    d = Ar.shape[0]
    K = Phi.shape[1]
    m = x_all.shape[0]
    pen = np.zeros(m)
    pmin = np.zeros(m)
    smin = np.zeros(m)
    parg = np.zeros(m, dtype=np.int64)
    sarg = np.zeros(m, dtype=np.int64)
    qacc = np.zeros(d)
    gbet = np.zeros(K)
    u = np.zeros(n)
    w = np.full(n, 1.0 / n)
    _grouped_pass(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink,
                  gam, bet, w, pen, pmin, parg, smin, sarg,
                  u, qacc, gbet, True)
    return u


@njit(cache=True)
def argmin_grouped(Ar, q_pre, s_abs, zh, x_all, grp_start, Phi, PhiKink, has_kink, gam, bet):
    """Per-row argmin description: (group, candidate index or -1 for the kink)."""
    n, G, dq = q_pre.shape
    d = Ar.shape[0]
    K = Phi.shape[1]
    m = x_all.shape[0]
    ds = s_abs.shape[2]
    lam = np.zeros(d)
    for r in range(d):
        s = 0.0
        for j in range(d):
            s += Ar[r, j] * gam[j]
        lam[r] = s
    lam_zh = lam[dq]
    pen = np.zeros(m)
    for c in range(m):
        s = 0.0
        for k in range(K):
            s += Phi[c, k] * bet[k]
        pen[c] = -s
    groups = np.empty(n, dtype=np.int64)
    cands = np.empty(n, dtype=np.int64)
    for i in range(n):
        ubest = np.inf
        for g in range(G):
            base = 0.0
            for j in range(dq):
                base += lam[j] * q_pre[i, g, j]
            for j in range(ds):
                base += lam[dq + 1 + j] * s_abs[i, g, j]
            lo = grp_start[g]
            hi = grp_start[g + 1]
            for c in range(lo, hi):
                v = base + lam_zh * abs(zh[i] - x_all[c]) + pen[c]
                if v < ubest:
                    ubest = v
                    groups[i] = g
                    cands[i] = c
            if has_kink:
                v = base
                for k in range(K):
                    v -= PhiKink[i, g, k] * bet[k]
                if v < ubest:
                    ubest = v
                    groups[i] = g
                    cands[i] = -1
    return groups, cands

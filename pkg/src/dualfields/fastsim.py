"""Compiled event loops for the occupancy process and for fields along it.

The k-th order field has a closed power-sum form: with ``kappa_q`` and
``eps_q`` the Taylor coefficients of ``log h`` and ``log e``,

    log prod_x f(t phi_x, eta_x) = sum_q t^q (eps_q A_q + kappa_q W_q),
    A_q = sum_x phi_x^q,   W_q = sum_x eta_x phi_x^q,

so the field is ``n^{-kd/2} E_k(P)`` where ``E(P) = exp(P(t))``.  A jump
``x -> y`` shifts ``W_q`` by ``phi_y^q - phi_x^q`` and changes the field by
``sum_j E_{k-j}(P) e_j(move)`` with ``e_j(move) = [t^j] exp(sum_q kappa_q dW_q t^q)``,
a constant per move.  Generator and carre-du-champ sums then reduce to the
per-move aggregates ``B_j = sum rate e_j`` and ``C_{jl} = sum rate e_j e_l``,
which are updated locally after each jump.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["simulate_events", "series_exp", "move_coefficients", "run_field_path",
           "OUTPUT_COLUMNS"]

OUTPUT_COLUMNS = ("Y", "drift_int", "cdc_int", "closed_int", "qvc_int", "ylow_sq_int",
                  "rep1_int", "rep2_int")


@njit(cache=True)
def _fen_add(tree, i, delta):
    i += 1
    n = tree.shape[0]
    while i < n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fen_build(tree, w):
    tree[:] = 0.0
    for i in range(w.shape[0]):
        _fen_add(tree, i, w[i])


@njit(cache=True)
def _fen_find(tree, target, top_bit):
    """Smallest index whose prefix sum exceeds ``target``."""
    pos = 0
    bit = top_bit
    n = tree.shape[0]
    while bit:
        nxt = pos + bit
        if nxt < n and tree[nxt] <= target:
            target -= tree[nxt]
            pos = nxt
        bit >>= 1
    return pos


@njit(cache=True)
def _site_rate(eta, s, nbr, probs, alpha, sigma):
    if eta[s] == 0:
        return 0.0
    acc = 0.0
    for m in range(nbr.shape[1]):
        acc += probs[m] * (alpha + sigma * eta[nbr[s, m]])
    return eta[s] * acc


@njit(cache=True)
def _pick(eta, tree, w, total, top_bit, nbr, probs, alpha, sigma):
    u = np.random.random() * total
    s = _fen_find(tree, u, top_bit)
    V = eta.shape[0]
    if s >= V:
        s = V - 1
    while w[s] <= 0.0:  # guard against roundoff landing on an empty site
        s = (s + V - 1) % V
    inner = np.random.random() * w[s] / eta[s]
    M = nbr.shape[1]
    chosen = M - 1
    acc = 0.0
    for m in range(M):
        acc += probs[m] * (alpha + sigma * eta[nbr[s, m]])
        if inner < acc:
            chosen = m
            break
    while probs[chosen] * (alpha + sigma * eta[nbr[s, chosen]]) <= 0.0:
        chosen = (chosen + M - 1) % M
    return s, nbr[s, chosen]


@njit(cache=True)
def simulate_events(eta, nbr, probs, alpha, sigma, horizon, seed):
    """Exact jump times on ``[0, horizon]`` (unscaled rates)."""
    np.random.seed(seed)
    V = eta.shape[0]
    w = np.empty(V)
    for s in range(V):
        w[s] = _site_rate(eta, s, nbr, probs, alpha, sigma)
    tree = np.zeros(V + 1)
    _fen_build(tree, w)
    top_bit = 1
    while top_bit * 2 <= V:
        top_bit *= 2
    cap = 1024
    times = np.empty(cap)
    src = np.empty(cap, np.int64)
    dst = np.empty(cap, np.int64)
    count = 0
    t = 0.0
    since = 0
    while True:
        total = tree_total(tree, V)
        if total <= 0.0:
            break
        t += np.random.exponential(1.0 / total)
        if t > horizon:
            break
        i, j = _pick(eta, tree, w, total, top_bit, nbr, probs, alpha, sigma)
        eta[i] -= 1
        eta[j] += 1
        _refresh(eta, w, tree, i, j, nbr, probs, alpha, sigma)
        if count == cap:
            cap *= 2
            times = _grow_f(times, cap)
            src = _grow_i(src, cap)
            dst = _grow_i(dst, cap)
        times[count] = t
        src[count] = i
        dst[count] = j
        count += 1
        since += 1
        if since >= V:
            _fen_build(tree, w)
            since = 0
    return times[:count].copy(), src[:count].copy(), dst[:count].copy()


@njit(cache=True)
def tree_total(tree, V):
    acc = 0.0
    i = V
    while i > 0:
        acc += tree[i]
        i -= i & (-i)
    return acc


@njit(cache=True)
def _grow_f(a, cap):
    out = np.empty(cap)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _grow_i(a, cap):
    out = np.empty(cap, np.int64)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _refresh(eta, w, tree, i, j, nbr, probs, alpha, sigma):
    for s in (i, j):
        new = _site_rate(eta, s, nbr, probs, alpha, sigma)
        _fen_add(tree, s, new - w[s])
        w[s] = new
    if sigma != 0:
        M = nbr.shape[1]
        for c in (i, j):
            for m in range(M):
                s = nbr[c, m]
                if s == i or s == j:
                    continue
                new = _site_rate(eta, s, nbr, probs, alpha, sigma)
                _fen_add(tree, s, new - w[s])
                w[s] = new


@njit(cache=True)
def series_exp(p, k):
    """``[t^0..t^k] exp(sum_q p_q t^q)`` (``p[0]`` ignored)."""
    out = np.zeros(k + 1)
    out[0] = 1.0
    for m in range(1, k + 1):
        acc = 0.0
        for q in range(1, m + 1):
            acc += q * p[q] * out[m - q]
        out[m] = acc / m
    return out


def move_coefficients(phi_pows, nbr, kappa, k):
    """``e_j(x, m)`` for every move ``x -> nbr[x, m]``; shape ``(V, M, k+1)``."""
    V, M = nbr.shape
    dW = phi_pows[nbr] - phi_pows[:, None, :]  # (V, M, k+1)
    P = dW * kappa[None, None, :]
    out = np.zeros((V, M, k + 1))
    out[..., 0] = 1.0
    for m in range(1, k + 1):
        acc = np.zeros((V, M))
        for q in range(1, m + 1):
            acc += q * P[..., q] * out[..., m - q]
        out[..., m] = acc / m
    return out


@njit(cache=True)
def _move_rate(eta, s, m, nbr, probs, alpha, sigma):
    return probs[m] * eta[s] * (alpha + sigma * eta[nbr[s, m]])


@njit(cache=True)
def _aggregate(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C):
    V, M = nbr.shape
    K = B.shape[0]
    B[:] = 0.0
    C[:, :] = 0.0
    rep2 = 0.0
    for s in range(V):
        for m in range(M):
            rep2 += Gxm[s, m] * (eta[s] - rho) * (eta[nbr[s, m]] - rho)
            r = _move_rate(eta, s, m, nbr, probs, alpha, sigma)
            if r == 0.0:
                continue
            for a in range(K):
                B[a] += r * emove[s, m, a]
                for b in range(K):
                    C[a, b] += r * emove[s, m, a] * emove[s, m, b]
    return rep2


@njit(cache=True)
def _touch(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C, sites, nsites, i, j, sign):
    """Add ``sign`` times the contributions of every move whose rate or
    pair term depends on the occupancies at ``i`` or ``j``."""
    M = nbr.shape[1]
    K = B.shape[0]
    rep2 = 0.0
    for a_idx in range(nsites):
        s = sites[a_idx]
        for m in range(M):
            t = nbr[s, m]
            if not (s == i or s == j or t == i or t == j):
                continue
            rep2 += Gxm[s, m] * (eta[s] - rho) * (eta[t] - rho)
            r = _move_rate(eta, s, m, nbr, probs, alpha, sigma)
            if r == 0.0:
                continue
            r *= sign
            for a in range(K):
                B[a] += r * emove[s, m, a]
                for b in range(K):
                    C[a, b] += r * emove[s, m, a] * emove[s, m, b]
    return sign * rep2


@njit(cache=True)
def _state_values(W, U, A, AU, eps, kappa, k, scale_k, scale_low, B, C, n2, mob_c2_G_over_nd,
                  closed_coef):
    """Field, generator, carre-du-champ, closed drift and closed QV at the
    current aggregates."""
    K = k + 1
    P = np.zeros(K)
    Pd = np.zeros(K)
    for q in range(1, K):
        P[q] = eps[q] * A[q] + kappa[q] * W[q]
        Pd[q] = q * (eps[q] * AU[q] + kappa[q] * U[q])
    E = series_exp(P, k)
    Y = scale_k * E[k]
    drift = 0.0
    for j in range(1, K):
        drift += E[k - j] * B[j]
    drift *= n2 * scale_k
    cdc = 0.0
    for j in range(1, K):
        for l in range(1, K):
            cdc += E[k - j] * E[k - l] * C[j, l]
    cdc *= n2 * scale_k * scale_k
    mixed = 0.0
    for q in range(1, K):
        mixed += E[k - q] * Pd[q]
    mixed *= scale_k / k
    closed = closed_coef * mixed
    ylow = scale_low * E[k - 1]
    qvc = mob_c2_G_over_nd * ylow * ylow
    return Y, drift, cdc, closed, qvc, ylow


@njit(cache=True)
def run_field_path(eta, nbr, probs, alpha, sigma, rho, seed, k, grid, n2,
                   phi_pows, psi_low, eps, kappa, emove, Gx, Gxm, scale_k, scale_low,
                   mob_c2_G_over_nd, closed_coef, inv_nd, out):
    """Simulate one replica and fill ``out[g, :]`` with the columns of
    ``OUTPUT_COLUMNS`` at scaled times ``grid[g]``.  Integrals are in
    macroscopic time (scaled time divided by ``n2``)."""
    np.random.seed(seed)
    V, M = nbr.shape
    K = k + 1
    A = np.zeros(K)
    W = np.zeros(K)
    AU = np.zeros(K)
    U = np.zeros(K)
    for q in range(1, K):
        for x in range(V):
            A[q] += phi_pows[x, q]
            W[q] += eta[x] * phi_pows[x, q]
            AU[q] += psi_low[x, q]
            U[q] += eta[x] * psi_low[x, q]
    B = np.zeros(K)
    C = np.zeros((K, K))
    rep2 = _aggregate(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C)
    rep1 = 0.0
    for x in range(V):
        rep1 += Gx[x] * (eta[x] - rho)
    w = np.empty(V)
    for s in range(V):
        w[s] = _site_rate(eta, s, nbr, probs, alpha, sigma)
    tree = np.zeros(V + 1)
    _fen_build(tree, w)
    top_bit = 1
    while top_bit * 2 <= V:
        top_bit *= 2

    Y, drift, cdc, closed, qvc, ylow = _state_values(
        W, U, A, AU, eps, kappa, k, scale_k, scale_low, B, C, n2, mob_c2_G_over_nd, closed_coef)
    ints = np.zeros(7)
    sites = np.empty(2 + 2 * M, np.int64)
    s_now = 0.0
    g = 0
    ngrid = grid.shape[0]
    since = 0
    while g < ngrid:
        total = tree_total(tree, V)
        if total > 0.0:
            s_next = s_now + np.random.exponential(1.0 / total)
        else:
            s_next = np.inf
        while g < ngrid and grid[g] <= s_next:
            dt = (grid[g] - s_now) / n2
            ints[0] += dt * drift
            ints[1] += dt * cdc
            ints[2] += dt * closed
            ints[3] += dt * qvc
            ints[4] += dt * ylow * ylow
            ints[5] += dt * rep1 * inv_nd
            ints[6] += dt * rep2 * inv_nd
            s_now = grid[g]
            out[g, 0] = Y
            for c in range(7):
                out[g, c + 1] = ints[c]
            g += 1
        if g >= ngrid:
            break
        dt = (s_next - s_now) / n2
        ints[0] += dt * drift
        ints[1] += dt * cdc
        ints[2] += dt * closed
        ints[3] += dt * qvc
        ints[4] += dt * ylow * ylow
        ints[5] += dt * rep1 * inv_nd
        ints[6] += dt * rep2 * inv_nd
        s_now = s_next

        i, j = _pick(eta, tree, w, total, top_bit, nbr, probs, alpha, sigma)
        # affected sites: i, j and their neighbourhoods (the kernel is symmetric)
        nsites = 0
        for c in (i, j):
            for cand in range(M + 1):
                s = c if cand == M else nbr[c, cand]
                dup = False
                for z in range(nsites):
                    if sites[z] == s:
                        dup = True
                        break
                if not dup:
                    sites[nsites] = s
                    nsites += 1
        rep2 += _touch(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C, sites, nsites, i, j, -1.0)
        eta[i] -= 1
        eta[j] += 1
        rep2 += _touch(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C, sites, nsites, i, j, 1.0)
        rep1 += Gx[j] - Gx[i]
        for q in range(1, K):
            W[q] += phi_pows[j, q] - phi_pows[i, q]
            U[q] += psi_low[j, q] - psi_low[i, q]
        _refresh(eta, w, tree, i, j, nbr, probs, alpha, sigma)
        since += 1
        if since >= 4 * V:
            _fen_build(tree, w)
            rep2 = _aggregate(eta, nbr, probs, alpha, sigma, emove, Gxm, rho, B, C)
            for q in range(1, K):
                W[q] = 0.0
                U[q] = 0.0
                for x in range(V):
                    W[q] += eta[x] * phi_pows[x, q]
                    U[q] += eta[x] * psi_low[x, q]
            since = 0
        Y, drift, cdc, closed, qvc, ylow = _state_values(
            W, U, A, AU, eps, kappa, k, scale_k, scale_low, B, C, n2, mob_c2_G_over_nd, closed_coef)
    return eta

"""Compiled inner loop of the sampler.

Posets are stored as int64 bitmask rows (``succ[i]`` has bit ``j`` set when
``i`` precedes ``j``), so catalogs are limited to 62 actions here.  The pure
Python routes in :mod:`traceorder.likelihood`, :mod:`traceorder.priors` and
:mod:`traceorder.sampler` compute the same quantities and are used to check
these kernels.

Likelihood kinds: 0 = disabled (prior only), 1 = frontier softmax,
2 = queue-jump.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_M = 62
LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
RHO_MAX = 1.0 - 1e-9

KIND_NONE = 0
KIND_FRONTIER = 1
KIND_QJ = 2

# rows of the acceptance counter
ST_U, ST_RHO, ST_BETA, ST_UP, ST_DOWN = 0, 1, 2, 3, 4


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def dominance_rows(U, succ, pred):
    m, K = U.shape
    one = np.int64(1)
    for i in range(m):
        succ[i] = 0
        pred[i] = 0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            dom = True
            for k in range(K):
                if not U[i, k] > U[j, k]:
                    dom = False
                    break
            if dom:
                succ[i] |= one << j
                pred[j] |= one << i


@njit(cache=True)
def frontier_trace_loglik(items, T, succ, pred, beta, eps):
    # full recomputation of frontier and successor counts at every step
    one = np.int64(1)
    rem = np.int64(0)
    for t in range(T):
        rem |= one << items[t]
    logits = np.empty(T)
    total = 0.0
    for t in range(T):
        top = -np.inf
        for s in range(t, T):
            a = items[s]
            if pred[a] & rem:
                logits[s] = -np.inf
            else:
                logits[s] = beta * math.log1p(popcount(succ[a] & rem))
                if logits[s] > top:
                    top = logits[s]
        z = 0.0
        for s in range(t, T):
            if logits[s] > -np.inf:
                z += math.exp(logits[s] - top)
        soft = 0.0
        if logits[t] > -np.inf:
            soft = math.exp(logits[t] - top) / z
        p = (1.0 - eps) * soft + eps / (T - t)
        if p <= 0.0:
            return -np.inf
        total += math.log(p)
        rem &= ~(one << items[t])
    return total


@njit(cache=True)
def qj_trace_loglik(items, T, pred, jump_p):
    # f[S] = number of linear extensions of the subposet on trace positions S
    one = np.int64(1)
    local = np.zeros(T, dtype=np.int64)
    for s in range(T):
        for r in range(T):
            if (pred[items[s]] >> items[r]) & 1:
                local[s] |= one << r
    n = one << T
    f = np.zeros(n)
    f[0] = 1.0
    for S in range(1, n):
        acc = 0.0
        for s in range(T):
            if (S >> s) & 1 and not (local[s] & S):
                acc += f[S ^ (one << s)]
        f[S] = acc
    S = n - 1
    total = 0.0
    for t in range(T):
        ratio = 0.0
        if not (local[t] & S):
            ratio = f[S ^ (one << t)] / f[S]
        p = (1.0 - jump_p) * ratio + jump_p / (T - t)
        if p <= 0.0:
            return -np.inf
        total += math.log(p)
        S ^= one << t
    return total


@njit(cache=True)
def dataset_loglik(kind, traces, lengths, weights, succ, pred, beta, eps, jump_p):
    if kind == KIND_NONE:
        return 0.0
    total = 0.0
    for n in range(traces.shape[0]):
        if kind == KIND_FRONTIER:
            ll = frontier_trace_loglik(traces[n], lengths[n], succ, pred, beta, eps)
        else:
            ll = qj_trace_loglik(traces[n], lengths[n], pred, jump_p)
        if ll == -np.inf:
            return -np.inf
        total += weights[n] * ll
    return total


# -- priors ---------------------------------------------------------------------


@njit(cache=True)
def row_logpdf(row, rho):
    K = row.shape[0]
    c = rho / (1.0 + (K - 1) * rho)
    logdet = (K - 1) * math.log1p(-rho) + math.log1p((K - 1) * rho)
    sq = 0.0
    s = 0.0
    for k in range(K):
        sq += row[k] * row[k]
        s += row[k]
    return -0.5 * (K * LOG_2PI + logdet + (sq - c * s * s) / (1.0 - rho))


@njit(cache=True)
def U_logpdf(U, rho):
    total = 0.0
    for i in range(U.shape[0]):
        total += row_logpdf(U[i], rho)
    return total


@njit(cache=True)
def log_prior_rho(rho, alpha_rho):
    return math.log(alpha_rho) + (alpha_rho - 1.0) * math.log1p(-rho)


@njit(cache=True)
def log_prior_beta(beta, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(beta) - b * beta


@njit(cache=True)
def log_prior_K(K, lam):
    return K * math.log(lam) - lam - math.lgamma(K + 1.0) - math.log(-math.expm1(-lam))


# -- acceptance ratios ----------------------------------------------------------


@njit(cache=True)
def delta_loglik(ll_new, ll_old):
    if ll_new == -np.inf:
        return -np.inf
    if ll_old == -np.inf:
        return np.inf
    return ll_new - ll_old


@njit(cache=True)
def u_row_log_accept(old_row, new_row, rho, ll_old, ll_new):
    return row_logpdf(new_row, rho) - row_logpdf(old_row, rho) + delta_loglik(ll_new, ll_old)


@njit(cache=True)
def rho_log_accept(U, rho, rho_new, delta, alpha_rho):
    if rho_new < 0.0 or rho_new > RHO_MAX:
        return -np.inf
    return (
        log_prior_rho(rho_new, alpha_rho)
        - log_prior_rho(rho, alpha_rho)
        + U_logpdf(U, rho_new)
        - U_logpdf(U, rho)
        - math.log(delta)
    )


@njit(cache=True)
def beta_log_accept(beta, beta_new, ll_old, ll_new, a, b):
    return (
        delta_loglik(ll_new, ll_old)
        + log_prior_beta(beta_new, a, b)
        - log_prior_beta(beta, a, b)
        + math.log(beta_new / beta)
    )


@njit(cache=True)
def k_move_log_ratio(K, up, lam):
    """Prior mass ratio plus move-probability ratio for K -> K +/- 1."""
    if up:
        # p(up | 1) = 1, p(down | 2) = 0.5
        move = -LOG_2 if K == 1 else 0.0
        return log_prior_K(K + 1, lam) - log_prior_K(K, lam) + move
    move = LOG_2 if K == 2 else 0.0
    return log_prior_K(K - 1, lam) - log_prior_K(K, lam) + move


@njit(cache=True)
def conditional_column(row, rho):
    K = row.shape[0]
    denom = 1.0 + (K - 1) * rho
    s = 0.0
    for k in range(K):
        s += row[k]
    return rho / denom * s, (1.0 + (K - 1) * rho - K * rho * rho) / denom


# -- the chain ------------------------------------------------------------------


@njit(cache=True)
def _accept(log_alpha):
    return math.log(np.random.random()) < log_alpha


@njit(cache=True)
def advance(
    U, rho, beta, loglik, succ, pred, n_steps, sched, pos,
    kind, traces, lengths, weights, eps, jump_p, hp, u_scale, stats,
):
    """Apply ``n_steps`` kernels from the cycling schedule.

    ``sched`` is reshuffled in place whenever a cycle is exhausted; ``succ``,
    ``pred`` and ``stats`` are updated in place.  Returns the new
    ``(U, rho, beta, loglik, pos)``.
    """
    m = U.shape[0]
    alpha_rho, ga, gb, lam, d_r, sig = hp[0], hp[1], hp[2], hp[3], hp[4], hp[5]
    L = sched.shape[0]
    nsucc = np.empty(m, dtype=np.int64)
    npred = np.empty(m, dtype=np.int64)
    for _ in range(n_steps):
        if pos >= L:
            np.random.shuffle(sched)
            pos = 0
        kern = sched[pos]
        pos += 1
        K = U.shape[1]

        if kern < m:
            i = kern
            old = U[i].copy()
            new = np.empty(K)
            a = math.sqrt(1.0 - rho)
            b = math.sqrt(rho)
            z0 = np.random.standard_normal()
            for k in range(K):
                new[k] = old[k] + u_scale * (a * np.random.standard_normal() + b * z0)
            ll_new = loglik
            if kind != KIND_NONE:
                U[i] = new
                dominance_rows(U, nsucc, npred)
                ll_new = dataset_loglik(kind, traces, lengths, weights, nsucc, npred, beta, eps, jump_p)
            stats[ST_U, 0] += 1
            if _accept(u_row_log_accept(old, new, rho, loglik, ll_new)):
                stats[ST_U, 1] += 1
                U[i] = new
                loglik = ll_new
                if kind != KIND_NONE:
                    succ[:] = nsucc
                    pred[:] = npred
            else:
                U[i] = old

        elif kern == m:
            delta = d_r + (1.0 / d_r - d_r) * np.random.random()
            rho_new = 1.0 - (1.0 - rho) * delta
            stats[ST_RHO, 0] += 1
            if _accept(rho_log_accept(U, rho, rho_new, delta, alpha_rho)):
                stats[ST_RHO, 1] += 1
                rho = rho_new

        elif kern == m + 1:
            eta = sig * np.random.standard_normal()
            beta_new = beta * math.exp(eta)
            ll_new = loglik
            if kind == KIND_FRONTIER:
                ll_new = dataset_loglik(kind, traces, lengths, weights, succ, pred, beta_new, eps, jump_p)
            stats[ST_BETA, 0] += 1
            if _accept(beta_log_accept(beta, beta_new, loglik, ll_new, ga, gb)):
                stats[ST_BETA, 1] += 1
                beta = beta_new
                loglik = ll_new

        else:
            up = K == 1 or np.random.random() < 0.5
            if up:
                c = np.random.randint(0, K + 1)
                newU = np.empty((m, K + 1))
                for r in range(m):
                    mu, var = conditional_column(U[r], rho)
                    v = mu + math.sqrt(var) * np.random.standard_normal()
                    for k in range(c):
                        newU[r, k] = U[r, k]
                    newU[r, c] = v
                    for k in range(c, K):
                        newU[r, k + 1] = U[r, k]
                row = ST_UP
            else:
                c = np.random.randint(0, K)
                newU = np.empty((m, K - 1))
                for r in range(m):
                    for k in range(c):
                        newU[r, k] = U[r, k]
                    for k in range(c + 1, K):
                        newU[r, k - 1] = U[r, k]
                row = ST_DOWN
            ll_new = loglik
            if kind != KIND_NONE:
                dominance_rows(newU, nsucc, npred)
                ll_new = dataset_loglik(kind, traces, lengths, weights, nsucc, npred, beta, eps, jump_p)
            stats[row, 0] += 1
            if _accept(k_move_log_ratio(K, up, lam) + delta_loglik(ll_new, loglik)):
                stats[row, 1] += 1
                U = newU
                loglik = ll_new
                if kind != KIND_NONE:
                    succ[:] = nsucc
                    pred[:] = npred
    return U, rho, beta, loglik, pos

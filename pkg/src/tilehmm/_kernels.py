"""Compiled inner loops.  All arrays are C-contiguous float64 / int64."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def forward_backward_kernel(logphi, trans, cat, init, want_xi):
    """Scaled forward-backward over one chain.

    The transition into probe t uses ``trans[cat[t]]``; probe 0 is drawn from
    ``init``.  Emissions are shifted by their row maximum before
    exponentiation and the shift is folded back into ``log_c``.

    Returns (alpha, beta, phi, c, log_c, tau, xi_counts, xi, fail) where
    ``fail`` is the first probe index with zero predictive likelihood or -1.
    """
    n, k = logphi.shape
    npc = trans.shape[0]
    alpha = np.zeros((n, k))
    beta = np.ones((n, k))
    phi = np.empty((n, k))
    c = np.empty(n)
    log_c = np.empty(n)
    tau = np.zeros((n, k))
    xi_counts = np.zeros((npc, k, k))
    if want_xi:
        xi = np.zeros((max(n - 1, 0), k, k))
    else:
        xi = np.zeros((0, k, k))

    for t in range(n):
        mx = logphi[t, 0]
        for j in range(1, k):
            if logphi[t, j] > mx:
                mx = logphi[t, j]
        if not np.isfinite(mx):
            return alpha, beta, phi, c, log_c, tau, xi_counts, xi, t
        s = 0.0
        for j in range(k):
            if t == 0:
                a = init[j]
            else:
                a = 0.0
                tr = trans[cat[t]]
                for i in range(k):
                    a += alpha[t - 1, i] * tr[i, j]
            phi[t, j] = np.exp(logphi[t, j] - mx)
            alpha[t, j] = a * phi[t, j]
            s += alpha[t, j]
        if not (s > 0.0) or not np.isfinite(s):
            return alpha, beta, phi, c, log_c, tau, xi_counts, xi, t
        for j in range(k):
            alpha[t, j] /= s
        c[t] = s
        log_c[t] = np.log(s) + mx

    for t in range(n - 2, -1, -1):
        tr = trans[cat[t + 1]]
        for i in range(k):
            b = 0.0
            for j in range(k):
                b += tr[i, j] * phi[t + 1, j] * beta[t + 1, j]
            beta[t, i] = b / c[t + 1]

    for t in range(n):
        s = 0.0
        for j in range(k):
            tau[t, j] = alpha[t, j] * beta[t, j]
            s += tau[t, j]
        for j in range(k):
            tau[t, j] /= s

    for t in range(1, n):
        p = cat[t]
        tr = trans[p]
        s = 0.0
        for i in range(k):
            for j in range(k):
                s += alpha[t - 1, i] * tr[i, j] * phi[t, j] * beta[t, j]
        for i in range(k):
            for j in range(k):
                v = alpha[t - 1, i] * tr[i, j] * phi[t, j] * beta[t, j] / s
                xi_counts[p, i, j] += v
                if want_xi:
                    xi[t - 1, i, j] = v
    return alpha, beta, phi, c, log_c, tau, xi_counts, xi, -1


@njit(cache=True, nogil=True)
def constrained_pass_kernel(prev, init, trans, cat, phi, c, mask, end_weight, from_start):
    """Log-probability that every masked probe of a span sits in state k, for each k.

    The span's probes are described by ``cat``, ``phi`` (emission weights),
    ``c`` (normalisers of the unconstrained pass) and ``mask``.  When
    ``from_start`` the first probe is drawn from ``init``, otherwise from
    ``prev`` propagated through one transition.  ``end_weight`` multiplies
    the final vector (backward variable, or ones for a prior).
    """
    m = cat.shape[0]
    k = init.shape[0]
    out = np.empty(k)
    v = np.empty(k)
    w = np.empty(k)
    for state in range(k):
        logacc = 0.0
        dead = False
        for t in range(m):
            if t == 0:
                if from_start:
                    for j in range(k):
                        v[j] = init[j]
                else:
                    for j in range(k):
                        v[j] = prev[j]
            if t > 0 or not from_start:
                tr = trans[cat[t]]
                for j in range(k):
                    a = 0.0
                    for i in range(k):
                        a += v[i] * tr[i, j]
                    w[j] = a
                for j in range(k):
                    v[j] = w[j]
            s = 0.0
            for j in range(k):
                v[j] = v[j] * phi[t, j] / c[t]
                if mask[t] and j != state:
                    v[j] = 0.0
                s += v[j]
            if not (s > 0.0):
                dead = True
                break
            logacc += np.log(s)
            for j in range(k):
                v[j] /= s
        if dead:
            out[state] = -np.inf
            continue
        s = 0.0
        for j in range(k):
            s += v[j] * end_weight[j]
        out[state] = logacc + np.log(s) if s > 0.0 else -np.inf
    return out


@njit(cache=True, nogil=True)
def sample_states_kernel(init_cum, trans_cum, cat, forced, uniforms):
    """Inverse-CDF sampling of a heterogeneous chain.

    ``forced[t] >= 0`` overrides the state at probe t; the chain continues
    from the forced state.
    """
    n = cat.shape[0]
    k = init_cum.shape[1]
    z = np.empty(n, dtype=np.int64)
    for t in range(n):
        if t == 0:
            row = init_cum[cat[0]]
        else:
            row = trans_cum[cat[t], z[t - 1]]
        s = 0
        while s < k - 1 and uniforms[t] >= row[s]:
            s += 1
        z[t] = s if forced[t] < 0 else forced[t]
    return z

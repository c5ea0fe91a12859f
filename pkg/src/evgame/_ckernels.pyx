# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the charging-energy subgame.

Operation-for-operation twin of ``_pykernels``; see that module for the
maths.  Slot indices are 0-based.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, log, pow
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double LAMBDA_ATOL = 1e-12
cdef double BUDGET_RTOL = 1e-13
cdef int MAX_ROOT_ITERS = 400


class InfeasibleBudget(ValueError):
    pass


cdef inline double _draw(double mu, double base, double phi, double g,
                         double xbar, double upper) noexcept nogil:
    cdef double v
    if mu >= base + 2.0 * phi * xbar:
        v = (mu - base) / (2.0 * phi)
    else:
        v = (mu - base + 2.0 * g * xbar) / (2.0 * phi + 2.0 * g)
    if v < 0.0:
        return 0.0
    if v > upper:
        return upper
    return v


cdef double _fill(double mu, const double* base, const double* phi, const double* g,
                  const double* xbar, int n, double budget, double upper,
                  double* out) noexcept nogil:
    cdef double total = 0.0, rem, xb, v
    cdef int t
    for t in range(n):
        if xbar == NULL:
            rem = budget - total
            xb = rem / (n - t) if rem > 0.0 else 0.0
        else:
            xb = xbar[t]
        v = _draw(mu, base[t], phi[t], g[t], xb, upper)
        out[t] = v
        total += v
    return total


cdef int _solve(const double* base, const double* phi, const double* g,
                const double* xbar, int n, double budget, double upper,
                double* out) noexcept nogil:
    """Returns 0 on success, 1 if the budget exceeds the window capacity."""
    cdef int t, it
    cdef double cap, gmax, lo, hi, s_lo, s_hi, mu, s, tol, c
    if budget <= 0.0:
        for t in range(n):
            out[t] = 0.0
        return 0
    cap = n * upper
    if budget > cap * (1.0 + 1e-12):
        return 1
    if budget >= cap:
        for t in range(n):
            out[t] = upper
        return 0
    if n == 1:
        out[0] = budget
        return 0

    gmax = g[0]
    lo = base[0]
    hi = base[0] + 2.0 * phi[0] * upper
    for t in range(1, n):
        if g[t] > gmax:
            gmax = g[t]
        if base[t] < lo:
            lo = base[t]
        c = base[t] + 2.0 * phi[t] * upper
        if c > hi:
            hi = c
    lo = lo - 2.0 * gmax * budget - 1.0
    hi = hi + 1.0
    s_lo = 0.0
    s_hi = cap
    tol = BUDGET_RTOL * budget
    for it in range(MAX_ROOT_ITERS):
        if hi - lo <= LAMBDA_ATOL:
            break
        if it % 2 == 0 and s_hi > s_lo:
            mu = lo + (budget - s_lo) * (hi - lo) / (s_hi - s_lo)
            if not (lo < mu < hi):
                mu = 0.5 * (lo + hi)
        else:
            mu = 0.5 * (lo + hi)
        s = _fill(mu, base, phi, g, xbar, n, budget, upper, out)
        if fabs(s - budget) <= tol:
            return 0
        if s < budget:
            lo = mu
            s_lo = s
        else:
            hi = mu
            s_hi = s
    if s_hi > s_lo:
        mu = lo + (budget - s_lo) * (hi - lo) / (s_hi - s_lo)
    else:
        mu = 0.5 * (lo + hi)
    _fill(mu, base, phi, g, xbar, n, budget, upper, out)
    return 0


cdef _raise_infeasible(double budget, double cap):
    raise InfeasibleBudget(f"budget {budget:.6g} exceeds window capacity {cap:.6g}")


def best_response(others, phi, delta, xbar, g, double budget, double upper):
    cdef double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[::1] base = np.ascontiguousarray(
        np.asarray(phi, dtype=np.float64) * np.asarray(others, dtype=np.float64)
        + np.asarray(delta, dtype=np.float64))
    cdef double[::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[::1] xb = np.ascontiguousarray(xbar, dtype=np.float64)
    cdef int n = base.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    if n == 0:
        return out
    if _solve(&base[0], &ph[0], &gg[0], &xb[0], n, budget, upper, &o[0]):
        _raise_infeasible(budget, n * upper)
    return out


def consistent_response(others, phi, delta, g, double budget, double upper):
    cdef double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[::1] base = np.ascontiguousarray(
        np.asarray(phi, dtype=np.float64) * np.asarray(others, dtype=np.float64)
        + np.asarray(delta, dtype=np.float64))
    cdef double[::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef int n = base.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    if n == 0:
        return out
    if _solve(&base[0], &ph[0], &gg[0], NULL, n, budget, upper, &o[0]):
        _raise_infeasible(budget, n * upper)
    return out


def targets(double budget, ref):
    cdef double[::1] r = np.ascontiguousarray(ref, dtype=np.float64)
    cdef int n = r.shape[0], t
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double before = 0.0, rem
    for t in range(n):
        rem = budget - before
        o[t] = rem / (n - t) if rem > 0.0 else 0.0
        before += r[t]
    return out


cdef double _window_cost(const double* x, const double* others, const double* phi,
                         const double* delta, const double* xbar, const double* g,
                         int n) noexcept nogil:
    cdef double c = 0.0, short
    cdef int t
    for t in range(n):
        short = xbar[t] - x[t]
        c += (phi[t] * (others[t] + x[t]) + delta[t]) * x[t]
        if short > 0.0:
            c += g[t] * short * short
    return c


def window_cost(x, others, phi, delta, xbar, g):
    cdef double[::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] oo = np.ascontiguousarray(others, dtype=np.float64)
    cdef double[::1] pp = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[::1] dd = np.ascontiguousarray(delta, dtype=np.float64)
    cdef double[::1] tt = np.ascontiguousarray(xbar, dtype=np.float64)
    cdef double[::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    if xx.shape[0] == 0:
        return 0.0
    return _window_cost(&xx[0], &oo[0], &pp[0], &dd[0], &tt[0], &gg[0], xx.shape[0])


def solve_subgame(base_load, phi, delta, budget, upper, weights, starts, x0,
                  double eps, int max_sweeps, double damping):
    cdef double[::1] bl = np.ascontiguousarray(base_load, dtype=np.float64)
    cdef double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[::1] de = np.ascontiguousarray(delta, dtype=np.float64)
    cdef double[::1] bu = np.ascontiguousarray(budget, dtype=np.float64)
    cdef double[::1] up = np.ascontiguousarray(upper, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    x_arr = np.array(x0, dtype=np.float64, order="C", copy=True)
    new_arr = np.zeros_like(x_arr)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] nw = new_arr
    cdef int N = x.shape[0], T = x.shape[1]
    cdef int i, t, k, s, m, bad = -1
    cdef double num, den, d, v, residual = float("inf")
    cdef double* load = <double*> malloc(T * sizeof(double))
    cdef double* base = <double*> malloc(T * sizeof(double))
    cdef double* resp = <double*> malloc(T * sizeof(double))
    cdef bint converged = False
    try:
        with nogil:
            for k in range(1, max_sweeps + 1):
                for t in range(T):
                    v = bl[t]
                    for i in range(N):
                        v = v + x[i, t]
                    load[t] = v
                num = 0.0
                den = 0.0
                for i in range(N):
                    s = <int> st[i]
                    m = T - s
                    for t in range(s, T):
                        base[t - s] = ph[t] * (load[t] - x[i, t]) + de[t]
                    if m > 0 and _solve(base, &ph[s], &w[i, s], NULL, m, bu[i], up[i], resp):
                        bad = i
                        break
                    for t in range(T):
                        v = resp[t - s] if t >= s else 0.0
                        nw[i, t] = v
                        d = v - x[i, t]
                        num += d * d
                        den += v * v
                if bad >= 0:
                    break
                residual = sqrt(num / den) if den > 0.0 else 0.0
                if residual <= eps:
                    converged = True
                    break
                for i in range(N):
                    for t in range(T):
                        x[i, t] += damping * (nw[i, t] - x[i, t])
    finally:
        free(load)
        free(base)
        free(resp)
    if bad >= 0:
        _raise_infeasible(bu[bad], (T - st[bad]) * up[bad])
    if converged:
        return new_arr, k, residual, True
    return x_arr, max_sweeps, residual, False


def certify(base_load, phi, delta, budget, upper, weights, starts, x):
    cdef double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[::1] de = np.ascontiguousarray(delta, dtype=np.float64)
    cdef double[::1] bu = np.ascontiguousarray(budget, dtype=np.float64)
    cdef double[::1] up = np.ascontiguousarray(upper, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    load_arr = np.ascontiguousarray(np.asarray(base_load, dtype=np.float64) + np.asarray(x).sum(axis=0))
    cdef double[::1] load = load_arr
    cdef int N = xx.shape[0], T = xx.shape[1]
    payoffs_arr = np.empty(N)
    gains_arr = np.empty(N)
    cdef double[::1] pay = payoffs_arr
    cdef double[::1] gain = gains_arr
    cdef double* others = <double*> malloc(T * sizeof(double))
    cdef double* base = <double*> malloc(T * sizeof(double))
    cdef double* tgt = <double*> malloc(T * sizeof(double))
    cdef double* br = <double*> malloc(T * sizeof(double))
    cdef int i, t, s, m, bad = -1
    cdef double before, rem, cost
    try:
        for i in range(N):
            s = <int> starts[i]
            m = T - s
            before = 0.0
            for t in range(s, T):
                others[t - s] = load[t] - xx[i, t]
                base[t - s] = ph[t] * others[t - s] + de[t]
                rem = bu[i] - before
                tgt[t - s] = rem / (T - t) if rem > 0.0 else 0.0
                before += xx[i, t]
            if m == 0:
                pay[i] = 0.0
                gain[i] = 0.0
                continue
            cost = _window_cost(&xx[i, s], others, &ph[s], &de[s], tgt, &w[i, s], m)
            if _solve(base, &ph[s], &w[i, s], tgt, m, bu[i], up[i], br):
                bad = i
                break
            pay[i] = -cost
            gain[i] = cost - _window_cost(br, others, &ph[s], &de[s], tgt, &w[i, s], m)
    finally:
        free(others)
        free(base)
        free(tgt)
        free(br)
    if bad >= 0:
        _raise_infeasible(bu[bad], (T - starts[bad]) * up[bad])
    return payoffs_arr, gains_arr


# --------------------------------------------------------------------------
# start-time game (see _pykernels for the array layout)


cdef void _contract(const double* f, const long* shape, int N, const double* V, int ldv,
                    int i, double* buf1, double* buf2, double* q) noexcept nogil:
    cdef const double* src = f
    cdef double* dst = buf1
    cdef long L = 1, P, r, p, t, n
    cdef int j
    cdef double acc
    for j in range(N):
        L *= shape[j]
    for j in range(N - 1, i, -1):
        n = shape[j]
        P = L // n
        for p in range(P):
            acc = 0.0
            for t in range(n):
                acc += src[p * n + t] * V[j * ldv + t]
            dst[p] = acc
        L = P
        src = dst
        dst = buf2 if dst == buf1 else buf1
    for j in range(i):
        n = shape[j]
        P = L // n
        for r in range(P):
            dst[r] = 0.0
        for t in range(n):
            acc = V[j * ldv + t]
            for r in range(P):
                dst[r] += acc * src[t * P + r]
        L = P
        src = dst
        dst = buf2 if dst == buf1 else buf1
    for t in range(L):
        q[t] = src[t]


def slot_values(f, shape, vecs, int i):
    cdef double[::1] ff = np.ascontiguousarray(f, dtype=np.float64)
    cdef long[::1] sh = np.ascontiguousarray(shape, dtype=np.int64)
    cdef double[:, ::1] V = np.ascontiguousarray(vecs, dtype=np.float64)
    cdef int N = sh.shape[0]
    cdef long K = ff.shape[0]
    b1 = np.empty(K)
    b2 = np.empty(K)
    out = np.empty(sh[i])
    cdef double[::1] bb1 = b1, bb2 = b2, o = out
    _contract(&ff[0], &sh[0], N, &V[0, 0], V.shape[1], i, &bb1[0], &bb2[0], &o[0])
    return out


cdef inline double _prelec(double p, double alpha) noexcept nogil:
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    if alpha == 1.0:
        return p
    return exp(-pow(-log(p), alpha))


def outer_iterate(F, shape, A, alphas, double beta, long max_iters, double eps_target,
                  double tie_rtol):
    cdef double[:, ::1] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef long[::1] sh = np.ascontiguousarray(shape, dtype=np.int64)
    A_arr = np.array(A, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] a = A_arr
    cdef int N = sh.shape[0], M = a.shape[1]
    cdef bint pt = alphas is not None
    cdef double[::1] al = np.ascontiguousarray(alphas if pt else np.ones(N), dtype=np.float64)
    W_arr = np.empty((N, M))
    b1 = np.empty(f.shape[1])
    b2 = np.empty(f.shape[1])
    q_arr = np.empty(M)
    z_arr = np.empty(N, dtype=np.int64)
    cdef double[:, ::1] W = W_arr
    cdef double[::1] bb1 = b1, bb2 = b2, q = q_arr
    cdef long[::1] z = z_arr
    cdef const double* V
    cdef long k = 0
    cdef int i, j, t, n
    cdef double eps, m, dot, step, thr
    with nogil:
        while True:
            eps = 0.0
            V = &a[0, 0]
            for i in range(N):
                if pt and (i == 0 or al[i] != al[i - 1]):
                    for j in range(N):
                        for t in range(M):
                            W[j, t] = _prelec(a[j, t], al[i])
                if pt:
                    V = &W[0, 0]
                _contract(&f[i, 0], &sh[0], N, V, M, i, &bb1[0], &bb2[0], &q[0])
                n = <int> sh[i]
                m = q[0]
                dot = 0.0
                for t in range(n):
                    if q[t] > m:
                        m = q[t]
                    dot += a[i, t] * q[t]
                if m - dot > eps:
                    eps = m - dot
                thr = m - tie_rtol * fabs(m)
                for t in range(n):
                    if q[t] >= thr:
                        z[i] = t
                        break
            if eps <= eps_target or k >= max_iters:
                break
            step = beta / (k + 1)
            for i in range(N):
                for t in range(M):
                    a[i, t] *= 1.0 - step
                a[i, z[i]] += step
            k += 1
    return A_arr, k, eps

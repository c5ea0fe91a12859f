"""Pure-Python kernels for the charging-energy subgame.

Mirrors ``_ckernels.pyx`` operation for operation; used when the extension
is not built.  Slot indices are 0-based.  Inside the hot loops values are
plain Python floats (numpy scalars are several times slower here).

Per-slot marginal cost of drawing ``x`` against others' load ``O``::

    m_t(x) = phi*O + delta + 2*phi*x - 2*g*max(xbar - x, 0)

strictly increasing and piecewise linear, so for a multiplier ``mu`` the
slot draw is the clipped inverse of ``m_t``, and the budget ``sum x = B``
fixes ``mu``.
"""

import math

import numpy as np

LAMBDA_ATOL = 1e-12
BUDGET_RTOL = 1e-13
MAX_ROOT_ITERS = 400


class InfeasibleBudget(ValueError):
    pass


def _draw(mu, base, phi, g, xbar, upper):
    if mu >= base + 2.0 * phi * xbar:
        v = (mu - base) / (2.0 * phi)
    else:
        v = (mu - base + 2.0 * g * xbar) / (2.0 * phi + 2.0 * g)
    if v < 0.0:
        return 0.0
    if v > upper:
        return upper
    return v


def _fill(mu, base, phi, g, xbar, budget, upper, out):
    """Draws at multiplier ``mu``; ``xbar=None`` derives targets on the fly."""
    n = len(base)
    total = 0.0
    for t in range(n):
        if xbar is None:
            rem = budget - total
            xb = rem / (n - t) if rem > 0.0 else 0.0
        else:
            xb = xbar[t]
        v = _draw(mu, base[t], phi[t], g[t], xb, upper)
        out[t] = v
        total += v
    return total


def _solve(base, phi, g, xbar, budget, upper):
    n = len(base)
    if budget <= 0.0:
        return [0.0] * n
    cap = n * upper
    if budget > cap * (1.0 + 1e-12):
        raise InfeasibleBudget(f"budget {budget:.6g} exceeds window capacity {cap:.6g}")
    if budget >= cap:
        return [upper] * n
    if n == 1:
        return [budget]

    gmax = max(g)
    lo = min(base) - 2.0 * gmax * budget - 1.0
    hi = max(b + 2.0 * p * upper for b, p in zip(base, phi)) + 1.0
    s_lo, s_hi = 0.0, cap
    out = [0.0] * n
    tol = BUDGET_RTOL * budget
    # alternate false-position and bisection: the budget is piecewise linear
    # in mu, so false position is exact once the bracket sits in one piece
    for it in range(MAX_ROOT_ITERS):
        if hi - lo <= LAMBDA_ATOL:
            break
        if it % 2 == 0 and s_hi > s_lo:
            mu = lo + (budget - s_lo) * (hi - lo) / (s_hi - s_lo)
            if not lo < mu < hi:
                mu = 0.5 * (lo + hi)
        else:
            mu = 0.5 * (lo + hi)
        s = _fill(mu, base, phi, g, xbar, budget, upper, out)
        if abs(s - budget) <= tol:
            return out
        if s < budget:
            lo, s_lo = mu, s
        else:
            hi, s_hi = mu, s
    mu = lo + (budget - s_lo) * (hi - lo) / (s_hi - s_lo) if s_hi > s_lo else 0.5 * (lo + hi)
    _fill(mu, base, phi, g, xbar, budget, upper, out)
    return out


def best_response(others, phi, delta, xbar, g, budget, upper):
    """Cost-minimising window profile with the targets ``xbar`` held fixed."""
    phi_l = np.asarray(phi, dtype=float).tolist()
    base = (np.asarray(phi) * np.asarray(others) + np.asarray(delta)).tolist()
    return np.array(_solve(base, phi_l, np.asarray(g, dtype=float).tolist(),
                           np.asarray(xbar, dtype=float).tolist(), float(budget), float(upper)))


def consistent_response(others, phi, delta, g, budget, upper):
    """Best response whose targets are those implied by the response itself.

    This is the limit of repeatedly best-responding with targets taken from
    the previous own profile, computed in one root search: for a fixed
    multiplier the targets only depend on earlier slots, so one forward pass
    evaluates the budget.
    """
    phi_l = np.asarray(phi, dtype=float).tolist()
    base = (np.asarray(phi) * np.asarray(others) + np.asarray(delta)).tolist()
    return np.array(_solve(base, phi_l, np.asarray(g, dtype=float).tolist(), None,
                           float(budget), float(upper)))


def targets(budget, ref):
    n = len(ref)
    out = np.empty(n)
    before = 0.0
    for t in range(n):
        rem = budget - before
        out[t] = rem / (n - t) if rem > 0.0 else 0.0
        before += ref[t]
    return out


def window_cost(x, others, phi, delta, xbar, g):
    c = 0.0
    for t in range(len(x)):
        short = xbar[t] - x[t]
        c += (phi[t] * (others[t] + x[t]) + delta[t]) * x[t]
        if short > 0.0:
            c += g[t] * short * short
    return c


def solve_subgame(base_load, phi, delta, budget, upper, weights, starts, x0,
                  eps, max_sweeps, damping):
    """Synchronous damped best-response sweeps from ``x0``.

    Every aggregator responds to the previous sweep's loads; the new iterate
    moves ``damping`` of the way to the joint response.  Returns
    ``(x, sweeps, residual, converged)`` where ``residual`` is the relative
    distance between the last iterate and its joint response.
    """
    N, T = x0.shape
    base_l = np.asarray(base_load, dtype=float).tolist()
    phi_l = np.asarray(phi, dtype=float).tolist()
    delta_l = np.asarray(delta, dtype=float).tolist()
    w_l = np.asarray(weights, dtype=float).tolist()
    x = np.asarray(x0, dtype=float).tolist()
    new = [[0.0] * T for _ in range(N)]
    residual = math.inf
    for k in range(1, max_sweeps + 1):
        load = [base_l[t] + sum(x[i][t] for i in range(N)) for t in range(T)]
        num = den = 0.0
        for i in range(N):
            s = starts[i]
            xi = x[i]
            base = [phi_l[t] * (load[t] - xi[t]) + delta_l[t] for t in range(s, T)]
            r = _solve(base, phi_l[s:], w_l[i][s:], None, float(budget[i]), float(upper[i]))
            row = new[i]
            for t in range(T):
                v = r[t - s] if t >= s else 0.0
                row[t] = v
                d = v - xi[t]
                num += d * d
                den += v * v
        residual = math.sqrt(num / den) if den > 0.0 else 0.0
        if residual <= eps:
            return np.array(new), k, residual, True
        for i in range(N):
            xi, ni = x[i], new[i]
            for t in range(T):
                xi[t] += damping * (ni[t] - xi[t])
    return np.array(x), max_sweeps, residual, False


def certify(base_load, phi, delta, budget, upper, weights, starts, x):
    """Payoffs at ``x`` (targets from each own profile) and the largest
    unilateral gain from a fixed-target best response."""
    N, T = x.shape
    load = base_load + x.sum(axis=0)
    payoffs = np.empty(N)
    gains = np.empty(N)
    for i in range(N):
        s = starts[i]
        xi = x[i, s:]
        others = load[s:] - xi
        tgt = targets(budget[i], xi)
        cost = window_cost(xi, others, phi[s:], delta[s:], tgt, weights[i, s:])
        br = best_response(others, phi[s:], delta[s:], tgt, weights[i, s:], budget[i], upper[i])
        payoffs[i] = -cost
        gains[i] = cost - window_cost(br, others, phi[s:], delta[s:], tgt, weights[i, s:])
    return payoffs, gains


# --------------------------------------------------------------------------
# start-time game
#
# F is (N, K): row i holds aggregator i's payoff over the flattened profile
# grid (C order, axis j of length shape[j]).  Mixed strategies are packed in
# an (N, max(shape)) array padded with zeros.


def slot_values(f, shape, vecs, i):
    """Contract every axis of one payoff row except ``i`` with ``vecs``."""
    cur = np.asarray(f, dtype=float)
    for j in range(len(shape) - 1, i, -1):
        cur = cur.reshape(-1, shape[j]) @ vecs[j, :shape[j]]
    for j in range(i):
        cur = vecs[j, :shape[j]] @ cur.reshape(shape[j], -1)
    return cur


def _prelec(p, alpha):
    if alpha == 1.0:
        return p.copy()
    with np.errstate(divide="ignore"):
        w = np.exp(-np.power(-np.log(p), alpha))
    return np.where(p >= 1.0, 1.0, w)


def _best(q, tie_rtol):
    m = q.max()
    return int(np.flatnonzero(q >= m - tie_rtol * abs(m))[0])


def outer_iterate(F, shape, A, alphas, beta, max_iters, eps_target, tie_rtol):
    """Returns ``(A, iterations, eps)``; ``alphas=None`` means expected utility."""
    F = np.ascontiguousarray(F, dtype=float)
    shape = [int(n) for n in shape]
    A = np.array(A, dtype=float, order="C", copy=True)
    N = len(shape)
    k = 0
    while True:
        eps = 0.0
        best = []
        W = A
        for i in range(N):
            if alphas is not None and (i == 0 or alphas[i] != alphas[i - 1]):
                W = _prelec(A, float(alphas[i]))
            q = slot_values(F[i], shape, W, i)
            a = A[i, :shape[i]]
            eps = max(eps, q.max() - a @ q)
            best.append(_best(q, tie_rtol))
        if eps <= eps_target or k >= max_iters:
            return A, k, eps
        step = beta / (k + 1)
        A *= 1.0 - step
        for i, z in enumerate(best):
            A[i, z] += step
        k += 1

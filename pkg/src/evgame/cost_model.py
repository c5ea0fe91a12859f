"""Grid pricing, target schedules and aggregator cost.

All functions accept scalars or numpy arrays; slot-indexed tariffs are
passed in directly rather than looked up, so the same code serves one slot
or a whole window.
"""

from __future__ import annotations

import numpy as np

# slack on "profile never over-delivers E_i"
BUDGET_RTOL = 1e-9


def unit_price(total_load, phi, delta):
    """Per-kWh grid price ``phi * L + delta``."""
    L = np.asarray(total_load, dtype=float)
    if np.any(L < 0):
        raise ValueError("total load must be nonnegative")
    p = phi * L + delta
    return float(p) if np.ndim(p) == 0 else p


def grid_cost(total_load, phi, delta):
    """Quadratic grid cost ``phi * L**2 + delta * L``."""
    L = np.asarray(total_load, dtype=float)
    if np.any(L < 0):
        raise ValueError("total load must be nonnegative")
    c = phi * L * L + delta * L
    return float(c) if np.ndim(c) == 0 else c


def target_schedule(demand, efficiency, reference, horizon=None):
    """Targets for the remaining window given a reference profile.

    ``reference`` holds grid-side draws for slots ``start..T``.  The target at
    each slot is the battery-side demand still outstanding, converted to grid
    side and spread evenly over the slots left::

        xbar_t = (E - eta * sum(reference[:t])) / eta / (n - t)

    ``horizon`` (the window length) is only used to check the reference.
    """
    ref = np.asarray(reference, dtype=float)
    n = ref.shape[-1]
    if horizon is not None and n != horizon:
        raise ValueError(f"reference spans {n} slots, window has {horizon}")
    delivered = efficiency * ref.sum(axis=-1)
    if np.any(delivered > demand * (1 + BUDGET_RTOL) + 1e-12):
        raise ValueError("reference profile over-delivers the demand")
    before = np.cumsum(ref, axis=-1) - ref
    remaining = demand / efficiency - before
    return np.maximum(remaining, 0.0) / np.arange(n, 0, -1)


def deviation_cost(x, target, weight):
    """One-sided penalty ``g * (xbar - x)**2`` for under-charging."""
    short = np.maximum(np.asarray(target, dtype=float) - np.asarray(x, dtype=float), 0.0)
    d = weight * short * short
    return float(d) if np.ndim(d) == 0 else d


def aggregator_cost(profile, others_load, targets, phi, delta, weights):
    """Energy cost plus deviation cost over a window (negate for the payoff).

    The price in each slot is set by the full load ``others_load + profile``.
    """
    x = np.asarray(profile, dtype=float)
    O = np.asarray(others_load, dtype=float)
    tgt = np.asarray(targets, dtype=float)
    if not (x.shape == O.shape == tgt.shape):
        raise ValueError("profile, loads and targets must span the same slots")
    p = unit_price(O + x, phi, delta)
    return float(np.sum(p * x + deviation_cost(x, tgt, weights)))


def payoff(profile, others_load, targets, phi, delta, weights):
    return -aggregator_cost(profile, others_load, targets, phi, delta, weights)

"""Second-stage charging-energy game for a fixed start-time profile.

Each aggregator minimises its energy plus deviation cost over its charging
window subject to the energy budget and per-slot rate caps.  The unique
equilibrium is found by synchronous best-response sweeps; the hot loops live
in a compiled extension when available (``BACKEND == "cython"``) and in
``_pykernels`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import BACKEND, InfeasibleBudget, kernels as _kernels
from .scenario import Aggregator, Scenario, ScenarioArrays


class ConvergenceError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    eps_alg: float = 1e-6
    max_sweeps: int = 500
    damping: float | None = None  # None -> min(1, 4 / (N + 2))
    init: str = "uniform"  # or "random"
    seed: int | None = None  # for init="random"

    def damping_for(self, n_players: int) -> float:
        if self.damping is not None:
            return float(self.damping)
        return min(1.0, 4.0 / (n_players + 2))


@dataclass
class ChargingProfile:
    start: int  # 1-based slot
    values: np.ndarray  # grid-side kWh for slots start..T

    def full(self, horizon: int) -> np.ndarray:
        out = np.zeros(horizon)
        out[self.start - 1:] = self.values
        return out


@dataclass
class SubgameSolution:
    starts: tuple[int, ...]  # 1-based
    loads: np.ndarray  # (N, T), zero before each start
    payoffs: np.ndarray  # (N,)
    iterations: int
    residual: float
    converged: bool
    gains: np.ndarray  # (N,) unilateral improvement available to each player

    @property
    def br_gap(self) -> float:
        return float(max(0.0, self.gains.max())) if self.gains.size else 0.0

    @property
    def profiles(self) -> list[ChargingProfile]:
        return [ChargingProfile(s, self.loads[i, s - 1:].copy())
                for i, s in enumerate(self.starts)]

    def certified(self, rtol: float = 1e-4) -> bool:
        return self.converged and bool(np.all(self.gains <= rtol * np.abs(self.payoffs) + 1e-12))


# --------------------------------------------------------------------------
# single-player responses


def best_response(aggregator: Aggregator, start: int, others_loads, targets,
                  phi, delta, slot_hours: float) -> ChargingProfile:
    """Optimal window profile against ``others_loads`` with ``targets`` frozen.

    All vectors span slots ``start..T`` (``start`` is 1-based).
    """
    others = np.asarray(others_loads, dtype=float)
    if np.any(others < 0):
        raise ValueError("others' loads must be nonnegative")
    budget = aggregator.demand / aggregator.efficiency
    g = np.asarray(aggregator.deviation_weights, dtype=float)[-len(others):]
    x = _kernels.best_response(others, np.asarray(phi, float), np.asarray(delta, float),
                               np.asarray(targets, float), g, budget,
                               aggregator.max_draw(slot_hours))
    return ChargingProfile(start, x)


def consistent_response(aggregator: Aggregator, start: int, others_loads, phi, delta,
                        slot_hours: float) -> ChargingProfile:
    """Best response whose targets are recomputed from the response itself."""
    others = np.asarray(others_loads, dtype=float)
    budget = aggregator.demand / aggregator.efficiency
    g = np.asarray(aggregator.deviation_weights, dtype=float)[-len(others):]
    x = _kernels.consistent_response(others, np.asarray(phi, float), np.asarray(delta, float),
                                     g, budget, aggregator.max_draw(slot_hours))
    return ChargingProfile(start, x)


# --------------------------------------------------------------------------
# subgame


def _check_starts(arrays: ScenarioArrays, starts) -> np.ndarray:
    starts = np.asarray(starts, dtype=np.int64)
    if starts.shape != (len(arrays.start_sets),):
        raise ValueError(f"need one start per aggregator, got {starts.shape}")
    for i, (s, n) in enumerate(zip(starts, arrays.start_sets)):
        if not 1 <= s <= n:
            raise ValueError(f"aggregator {i + 1}: start {s} not in {{1..{n}}}")
    return starts - 1


def random_feasible(arrays: ScenarioArrays, starts0, rng) -> np.ndarray:
    """A random feasible joint profile (mix of a random greedy vertex and the flat profile)."""
    N, T = len(arrays.demand), len(arrays.base_load)
    x = np.zeros((N, T))
    budget = arrays.demand / arrays.efficiency
    for i, s in enumerate(starts0):
        n = T - s
        flat = np.full(n, budget[i] / n)
        vertex = np.zeros(n)
        left = budget[i]
        for t in rng.permutation(n):
            take = min(arrays.upper[i], left)
            vertex[t] = take
            left -= take
        w = rng.random()
        x[i, s:] = w * vertex + (1 - w) * flat
    return x


def initial_profile(arrays: ScenarioArrays, starts0, options: SolveOptions) -> np.ndarray:
    if options.init == "random":
        return random_feasible(arrays, starts0, np.random.default_rng(options.seed))
    N, T = len(arrays.demand), len(arrays.base_load)
    x = np.zeros((N, T))
    budget = arrays.demand / arrays.efficiency
    for i, s in enumerate(starts0):
        x[i, s:] = budget[i] / (T - s)
    return x


def solve_arrays(arrays: ScenarioArrays, starts, options: SolveOptions | None = None,
                 x0=None) -> SubgameSolution:
    options = options or SolveOptions()
    s0 = _check_starts(arrays, starts)
    N = len(s0)
    budget = arrays.demand / arrays.efficiency
    if x0 is None:
        x0 = initial_profile(arrays, s0, options)
    x, sweeps, residual, converged = _kernels.solve_subgame(
        arrays.base_load, arrays.phi, arrays.delta, budget, arrays.upper, arrays.weights,
        s0, np.ascontiguousarray(x0, dtype=float), options.eps_alg, options.max_sweeps,
        options.damping_for(N))
    payoffs, gains = _kernels.certify(arrays.base_load, arrays.phi, arrays.delta, budget,
                                      arrays.upper, arrays.weights, s0, x)
    return SubgameSolution(starts=tuple(int(s) + 1 for s in s0), loads=x, payoffs=payoffs,
                           iterations=int(sweeps), residual=float(residual),
                           converged=bool(converged), gains=gains)


def solve_subgame(scenario: Scenario, start_profile, options: SolveOptions | None = None,
                  x0=None) -> SubgameSolution:
    """Equilibrium charging profiles for the start-slot profile ``start_profile`` (1-based)."""
    return solve_arrays(scenario.arrays(), start_profile, options, x0)


def verify_equilibrium(scenario: Scenario, solution: SubgameSolution) -> float:
    """Largest payoff any aggregator gains by re-solving its best response
    against the others' loads in ``solution`` (targets from its own profile)."""
    A = scenario.arrays()
    s0 = _check_starts(A, solution.starts)
    _, gains = _kernels.certify(A.base_load, A.phi, A.delta, A.demand / A.efficiency,
                                A.upper, A.weights, s0, np.ascontiguousarray(solution.loads))
    return float(max(0.0, gains.max()))


def payoffs_at(scenario: Scenario, starts, loads) -> np.ndarray:
    """Payoffs of an arbitrary joint profile; targets follow each own profile."""
    A = scenario.arrays()
    s0 = _check_starts(A, starts)
    p, _ = _kernels.certify(A.base_load, A.phi, A.delta, A.demand / A.efficiency,
                            A.upper, A.weights, s0, np.ascontiguousarray(loads, dtype=float))
    return p

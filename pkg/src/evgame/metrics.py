"""Reported quantities: uncoordinated baseline, expected outcomes, savings and PAR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_model import aggregator_cost, target_schedule
from .outer_game import OuterSolution
from .payoff_tensor import PayoffTensor
from .scenario import Scenario


class DigestMismatch(ValueError):
    pass


class UndefinedPercentage(ZeroDivisionError):
    pass


def peak_to_average(load) -> float:
    load = np.asarray(load, dtype=float)
    mean = load.mean()
    if mean <= 0:
        raise ValueError("PAR undefined for a load profile with zero mean")
    return float(load.max() / mean)


@dataclass
class BaselineResult:
    costs: np.ndarray  # (N,)
    profiles: np.ndarray  # (N, T) grid-side kWh
    aggregate_load: np.ndarray  # (T,) base + EV
    par: float
    scenario_digest: str


@dataclass
class ExpectedOutcome:
    costs: np.ndarray  # (N,) expected cost under the objective product measure
    ev_loads: np.ndarray  # (N, T) expected grid-side draws
    aggregate_load: np.ndarray  # (T,)
    par: float
    model: dict
    scenario_digest: str
    tensor_digest: str


@dataclass
class SavingsReport:
    savings_pct: np.ndarray  # (N,)
    par_reduction_pct: float
    baseline_costs: np.ndarray
    expected_costs: np.ndarray


def uncoordinated_profiles(scenario: Scenario) -> np.ndarray:
    """Every EV at full rate from slot 1 until full; grid-side kWh per slot."""
    T, dt = scenario.horizon_slots, scenario.slot_hours
    out = np.zeros((scenario.n_aggregators, T))
    for i, agg in enumerate(scenario.aggregators):
        for ev in agg.evs:
            n = ev.slots_needed(dt)  # same rounding guard as the start sets
            if n == 0:
                continue
            full = ev.max_rate * dt
            out[i, :n - 1] += full / agg.efficiency
            out[i, n - 1] += (ev.demand - (n - 1) * full) / agg.efficiency
    return out


def uncoordinated_baseline(scenario: Scenario) -> BaselineResult:
    x = uncoordinated_profiles(scenario)
    g = scenario.grid
    base = np.asarray(g.base_load, dtype=float)
    total = base + x.sum(axis=0)
    costs = np.empty(len(x))
    for i, agg in enumerate(scenario.aggregators):
        tgt = target_schedule(agg.demand, agg.efficiency, x[i])
        costs[i] = aggregator_cost(x[i], total - x[i], tgt, g.phi, g.delta, agg.deviation_weights)
    return BaselineResult(costs=costs, profiles=x, aggregate_load=total,
                          par=peak_to_average(total), scenario_digest=scenario.digest())


def profile_probabilities(strategies) -> np.ndarray:
    """Objective probability of every start profile, flat lexicographic order."""
    p = np.ones(1)
    for a in strategies:
        p = np.multiply.outer(p, np.asarray(a, dtype=float)).ravel()
    return p


def expected_outcome(scenario: Scenario, tensor: PayoffTensor,
                     solution: OuterSolution) -> ExpectedOutcome:
    tensor.require_complete()
    sd = scenario.digest()
    if tensor.scenario_digest != sd:
        raise DigestMismatch("tensor was built for a different scenario")
    if solution.scenario_digest and solution.scenario_digest != sd:
        raise DigestMismatch("solution belongs to a different scenario")
    td = tensor.digest()
    if solution.tensor_digest and solution.tensor_digest != td:
        raise DigestMismatch("solution was computed on a different tensor")

    pr = profile_probabilities(solution.strategies)
    support = np.flatnonzero(pr)
    w = pr[support]
    N = tensor.n_players
    ev = np.tensordot(w, tensor.loads[support], axes=1)
    costs = -(w @ tensor.payoffs.reshape(tensor.size, N)[support])
    total = np.asarray(scenario.grid.base_load, dtype=float) + ev.sum(axis=0)
    return ExpectedOutcome(costs=costs, ev_loads=ev, aggregate_load=total,
                           par=peak_to_average(total), model=solution.model.describe(),
                           scenario_digest=sd, tensor_digest=td)


def savings_report(baseline: BaselineResult, coordinated: ExpectedOutcome) -> SavingsReport:
    if baseline.scenario_digest != coordinated.scenario_digest:
        raise DigestMismatch("baseline and outcome come from different scenarios")
    if np.any(baseline.costs == 0):
        raise UndefinedPercentage("baseline cost is zero for some aggregator")
    s = (baseline.costs - coordinated.costs) / baseline.costs * 100.0
    par = (baseline.par - coordinated.par) / baseline.par * 100.0
    return SavingsReport(savings_pct=s, par_reduction_pct=float(par),
                         baseline_costs=baseline.costs.copy(),
                         expected_costs=coordinated.costs.copy())

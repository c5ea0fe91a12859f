"""First-stage start-time game under expected utility and prospect theory.

Aggregators randomise over their admissible start slots.  Under prospect
theory an aggregator sees each opponent's probabilities through its own
Prelec weighting function; its own probabilities enter undistorted, so every
expected payoff is linear in the player's own mixed strategy and pure
deviations are enough to certify an epsilon-equilibrium.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels as _kernels
from .payoff_tensor import PayoffTensor

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BehaviorModel:
    kind: str = "eut"  # "eut" | "pt"
    alphas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("eut", "pt"):
            raise ValueError(f"unknown behaviour model {self.kind!r}")
        if self.kind == "pt":
            if not self.alphas:
                raise ValueError("prospect theory needs an alpha per aggregator")
            for a in self.alphas:
                if not 0 < a <= 1:
                    raise ValueError(f"alpha must lie in (0, 1], got {a}")

    @classmethod
    def eut(cls) -> "BehaviorModel":
        return cls("eut")

    @classmethod
    def pt(cls, alpha, n_players: int | None = None) -> "BehaviorModel":
        if np.isscalar(alpha):
            if n_players is None:
                raise ValueError("scalar alpha needs n_players")
            alphas = (float(alpha),) * n_players
        else:
            alphas = tuple(float(a) for a in alpha)
            if n_players is not None and len(alphas) != n_players:
                raise ValueError(f"expected {n_players} alphas, got {len(alphas)}")
        return cls("pt", alphas)

    def perceived(self, i: int, probs: np.ndarray) -> np.ndarray:
        """Opponent probabilities as aggregator ``i`` perceives them."""
        if self.kind == "eut" or self.alphas[i] == 1.0:
            return probs
        return prelec_weight(probs, self.alphas[i])

    def describe(self) -> dict:
        return {"kind": self.kind, "alphas": list(self.alphas)}


def prelec_weight(p, alpha):
    """Prelec weighting ``exp(-(-ln p)**alpha)`` with w(0) = 0 and w(1) = 1."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        w = np.exp(-np.power(-np.log(p), alpha))
    w = np.where(p == 1.0, 1.0, w)
    return float(w) if w.ndim == 0 else w


# --------------------------------------------------------------------------
# payoffs


def _check(tensor: PayoffTensor, strategies) -> list[np.ndarray]:
    tensor.require_complete()
    if len(strategies) != tensor.n_players:
        raise ValueError(f"need {tensor.n_players} strategies, got {len(strategies)}")
    out = []
    for i, (a, n) in enumerate(zip(strategies, tensor.shape)):
        a = np.asarray(a, dtype=float)
        if a.shape != (n,):
            raise ValueError(f"aggregator {i + 1}: strategy over {a.shape} slots, expected {n}")
        out.append(a)
    return out


def _pack(strategies, width: int) -> np.ndarray:
    out = np.zeros((len(strategies), width))
    for i, a in enumerate(strategies):
        out[i, :len(a)] = a
    return out


def slot_payoffs(tensor: PayoffTensor, strategies, model: BehaviorModel, i: int) -> np.ndarray:
    """q_i(t) for every own start slot ``t`` against the opponents' mixtures."""
    vecs = _pack([model.perceived(i, np.asarray(a, float)) for a in strategies], max(tensor.shape))
    return _kernels.slot_values(tensor.player_rows()[i], np.asarray(tensor.shape), vecs, i)


def pure_strategy_payoff(tensor: PayoffTensor, start: int, strategies,
                         model: BehaviorModel, i: int) -> float:
    """Expected payoff of aggregator ``i`` (0-based) committing to slot ``start`` (1-based)."""
    strategies = _check(tensor, strategies)
    if not 1 <= start <= tensor.shape[i]:
        raise ValueError(f"start {start} outside 1..{tensor.shape[i]}")
    return float(slot_payoffs(tensor, strategies, model, i)[start - 1])


def expected_payoff(tensor: PayoffTensor, strategies, model: BehaviorModel, i: int) -> float:
    strategies = _check(tensor, strategies)
    return float(strategies[i] @ slot_payoffs(tensor, strategies, model, i))


def best_slot(q: np.ndarray) -> int:
    """0-based argmax with near-ties resolved toward the earliest slot."""
    m = q.max()
    return int(np.flatnonzero(q >= m - TIE_RTOL * abs(m))[0])


def best_reply_vertex(tensor: PayoffTensor, strategies, model: BehaviorModel, i: int) -> np.ndarray:
    strategies = _check(tensor, strategies)
    z = np.zeros(tensor.shape[i])
    z[best_slot(slot_payoffs(tensor, strategies, model, i))] = 1.0
    return z


def _regrets(tensor, strategies, model) -> tuple[np.ndarray, list[np.ndarray]]:
    qs = [slot_payoffs(tensor, strategies, model, i) for i in range(tensor.n_players)]
    gaps = np.array([max(q.max() - a @ q, 0.0) for q, a in zip(qs, strategies)])
    return gaps, qs


def epsilon_certificate(tensor: PayoffTensor, strategies, model: BehaviorModel) -> float:
    """Smallest epsilon for which ``strategies`` is an epsilon-Nash equilibrium."""
    strategies = _check(tensor, strategies)
    gaps, _ = _regrets(tensor, strategies, model)
    return float(gaps.max())


# --------------------------------------------------------------------------
# iteration


@dataclass
class OuterSolution:
    strategies: list[np.ndarray]
    epsilon: float
    iterations: int
    eps_target: float
    model: BehaviorModel
    beta: float
    tensor_digest: str = ""
    scenario_digest: str = ""
    trajectory: list[list[np.ndarray]] | None = field(default=None, repr=False)

    @property
    def reached(self) -> bool:
        return self.epsilon <= self.eps_target

    def modal_slots(self) -> list[int]:
        """1-based most likely start slot of each aggregator."""
        return [int(np.argmax(a)) + 1 for a in self.strategies]

    def to_dict(self) -> dict:
        return {
            "format": "evgame-solution/1",
            "scenario_digest": self.scenario_digest,
            "tensor_digest": self.tensor_digest,
            "model": self.model.describe(),
            "beta": self.beta,
            "epsilon": self.epsilon,
            "eps_target": self.eps_target,
            "reached": self.reached,
            "iterations": self.iterations,
            "strategies": [a.tolist() for a in self.strategies],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OuterSolution":
        if d.get("format") != "evgame-solution/1":
            raise ValueError(f"unsupported solution format {d.get('format')!r}")
        m = d["model"]
        return cls(strategies=[np.array(a, dtype=float) for a in d["strategies"]],
                   epsilon=float(d["epsilon"]), iterations=int(d["iterations"]),
                   eps_target=float(d["eps_target"]),
                   model=BehaviorModel(m["kind"], tuple(m["alphas"])), beta=float(d["beta"]),
                   tensor_digest=d["tensor_digest"], scenario_digest=d["scenario_digest"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "OuterSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_eps_target(tensor: PayoffTensor) -> float:
    return 1e-5 * float(np.median(np.abs(tensor.payoffs)))


def uniform_strategies(tensor: PayoffTensor) -> list[np.ndarray]:
    return [np.full(n, 1.0 / n) for n in tensor.shape]


def iterate_to_equilibrium(tensor: PayoffTensor, init=None, model: BehaviorModel | None = None,
                           beta: float = 0.7, max_iters: int = 100_000,
                           eps_target: float | None = None,
                           trajectory: bool = False) -> OuterSolution:
    """Inertia-weighted best-reply iteration, stopped on a certified epsilon.

    ``a <- a + beta/(k+1) * (z - a)`` for every aggregator simultaneously,
    ``z`` the best pure reply to the current opponents' mixtures.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    model = model or BehaviorModel.eut()
    if model.kind == "pt" and len(model.alphas) != tensor.n_players:
        raise ValueError(f"expected {tensor.n_players} alphas, got {len(model.alphas)}")
    a = _check(tensor, init if init is not None else uniform_strategies(tensor))
    a = [x.copy() for x in a]
    if eps_target is None:
        eps_target = default_eps_target(tensor)
    if not trajectory:
        alphas = np.array(model.alphas) if model.kind == "pt" else None
        A, k, eps = _kernels.outer_iterate(tensor.player_rows(), np.asarray(tensor.shape),
                                           _pack(a, max(tensor.shape)), alphas, beta,
                                           max_iters, eps_target, TIE_RTOL)
        a = [A[i, :n].copy() for i, n in enumerate(tensor.shape)]
        traj = None
    else:
        traj = [[x.copy() for x in a]]
        k = 0
        while True:
            gaps, qs = _regrets(tensor, a, model)
            eps = float(gaps.max())
            if eps <= eps_target or k >= max_iters:
                break
            step = beta / (k + 1)
            for i, q in enumerate(qs):
                z = best_slot(q)
                a[i] *= 1.0 - step
                a[i][z] += step
            k += 1
            traj.append([x.copy() for x in a])

    return OuterSolution(strategies=a, epsilon=float(eps), iterations=int(k), eps_target=eps_target,
                         model=model, beta=beta, tensor_digest=tensor.digest(),
                         scenario_digest=tensor.scenario_digest, trajectory=traj)

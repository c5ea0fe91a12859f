"""Problem instances: EV fleets, aggregators, grid tariffs and seeded generation.

Units are fixed package-wide: energy in kWh, power in kW, time in hours and
money in tariff cents.  Every per-slot quantity drawn from the grid
(``x_{i,t}``) is energy per slot.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "evgame-scenario/1"
RNG_ALGORITHM = "numpy.random.PCG64"


class ScenarioError(ValueError):
    """Raised for configs or files that cannot produce a valid scenario."""


@dataclass(frozen=True)
class EvSpec:
    max_rate: float  # kW, battery side
    capacity: float  # kWh
    initial_soc_frac: float
    model: str = ""

    @property
    def demand(self) -> float:
        """Battery-side energy needed to reach full charge (kWh)."""
        return self.capacity * (1.0 - self.initial_soc_frac)

    def slots_needed(self, slot_hours: float) -> int:
        if self.demand <= 0.0:
            return 0
        # guard against 9.9/1.65 -> 6.000000000000001
        ratio = self.demand / (self.max_rate * slot_hours)
        return int(math.ceil(ratio - 1e-12))


@dataclass(frozen=True)
class Aggregator:
    id: int
    evs: tuple[EvSpec, ...]
    efficiency: float
    deviation_weights: tuple[float, ...]

    @property
    def demand(self) -> float:
        """Total battery-side energy E_i (kWh)."""
        return float(sum(ev.demand for ev in self.evs))

    @property
    def total_rate(self) -> float:
        return float(sum(ev.max_rate for ev in self.evs))

    def max_draw(self, slot_hours: float) -> float:
        """Grid-side per-slot energy cap, sum(R_v) * dt / eta."""
        return self.total_rate * slot_hours / self.efficiency

    def min_slots(self, slot_hours: float) -> int:
        return max((ev.slots_needed(slot_hours) for ev in self.evs), default=0)

    def start_slots(self, horizon: int, slot_hours: float) -> range:
        """Admissible 1-based start slots {1, ..., T - tau + 1}."""
        tau = self.min_slots(slot_hours)
        return range(1, horizon - max(tau, 1) + 2)


@dataclass(frozen=True)
class GridModel:
    base_load: tuple[float, ...]  # kWh per slot
    phi: tuple[float, ...]  # cents / kWh^2
    delta: tuple[float, ...]  # cents / kWh


@dataclass(frozen=True)
class Scenario:
    horizon_slots: int
    slot_hours: float
    aggregators: tuple[Aggregator, ...]
    grid: GridModel
    seed: int | None = None
    schema_version: str = SCHEMA_VERSION
    rng: str = RNG_ALGORITHM

    @property
    def n_aggregators(self) -> int:
        return len(self.aggregators)

    def start_sets(self) -> list[range]:
        return [a.start_slots(self.horizon_slots, self.slot_hours) for a in self.aggregators]

    def arrays(self) -> "ScenarioArrays":
        return ScenarioArrays.from_scenario(self)

    def digest(self) -> str:
        return scenario_digest(self)


@dataclass(frozen=True)
class ScenarioArrays:
    """Flat numpy view of a scenario, the form consumed by the solvers."""

    base_load: np.ndarray  # (T,)
    phi: np.ndarray  # (T,)
    delta: np.ndarray  # (T,)
    demand: np.ndarray  # (N,) battery side
    efficiency: np.ndarray  # (N,)
    upper: np.ndarray  # (N,) grid-side per-slot cap
    weights: np.ndarray  # (N, T)
    start_sets: tuple[int, ...]  # |I_i|

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "ScenarioArrays":
        dt = sc.slot_hours
        return cls(
            base_load=np.asarray(sc.grid.base_load, dtype=float),
            phi=np.asarray(sc.grid.phi, dtype=float),
            delta=np.asarray(sc.grid.delta, dtype=float),
            demand=np.array([a.demand for a in sc.aggregators]),
            efficiency=np.array([a.efficiency for a in sc.aggregators]),
            upper=np.array([a.max_draw(dt) for a in sc.aggregators]),
            weights=np.array([a.deviation_weights for a in sc.aggregators], dtype=float),
            start_sets=tuple(len(s) for s in sc.start_sets()),
        )


# --------------------------------------------------------------------------
# generation

EV_CATALOG = {
    "prius": (3.8, 4.4),
    "volt": (3.8, 16.0),
    "leaf": (3.3, 24.0),
}

# aggregator -> counts per catalog entry, in catalog order
DEFAULT_FLEETS = (
    {"prius": 2, "volt": 3, "leaf": 5},
    {"prius": 2, "volt": 5, "leaf": 3},
    {"prius": 3, "volt": 2, "leaf": 5},
    {"prius": 3, "volt": 5, "leaf": 2},
    {"prius": 5, "volt": 3, "leaf": 2},
)

# Residential base load of ~200 households, 08:00-16:00, kWh per 30-min slot.
# The measured network profile is not public; this is a spring-weekday shape
# (morning tail, midday trough, afternoon rise).
DEFAULT_BASE_LOAD = (
    42.0, 39.0, 36.0, 34.0, 32.0, 31.0, 30.0, 30.0,
    30.0, 30.5, 31.0, 32.0, 33.5, 35.0, 37.0, 40.0,
)

# Seeds whose SOC draws reproduce the start-slot set sizes (5, 7, 10, 8, 11)
# under the paper-default config (found by exhaustive scan from 0).
SIZE_MATCHED_SEEDS = (712699, 1021104, 5512881, 5790559, 5945900, 6775724)
PAPER_DEFAULT_SEED = SIZE_MATCHED_SEEDS[0]


@dataclass
class GenerationConfig:
    horizon_slots: int = 16
    slot_hours: float = 0.5
    fleets: tuple[dict, ...] = DEFAULT_FLEETS
    catalog: dict = field(default_factory=lambda: dict(EV_CATALOG))
    efficiency: float = 0.864
    phi: float | tuple[float, ...] = 0.2
    delta: float | tuple[float, ...] = 0.2
    base_load: tuple[float, ...] = DEFAULT_BASE_LOAD
    weight_range: tuple[int, int] = (10, 20)

    @classmethod
    def paper_default(cls) -> "GenerationConfig":
        return cls()


def _per_slot(value, horizon: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        vec = (float(value),) * horizon
    else:
        vec = tuple(float(v) for v in value)
    if len(vec) != horizon:
        raise ScenarioError(f"{name}: expected {horizon} slots, got {len(vec)}")
    return vec


def generate_instance(config: GenerationConfig, seed: int) -> Scenario:
    """Draw a scenario from ``config``; a pure function of ``(config, seed)``.

    Draw order: one uniform SOC fraction per EV for all aggregators in one
    call (aggregator order, catalog order within a fleet), then one integer
    deviation weight per aggregator, shared by every slot.
    """
    T = int(config.horizon_slots)
    dt = float(config.slot_hours)
    if T < 1:
        raise ScenarioError("horizon_slots must be >= 1")
    if not dt > 0:
        raise ScenarioError("slot_hours must be positive")
    phi = _per_slot(config.phi, T, "phi")
    delta = _per_slot(config.delta, T, "delta")
    if min(phi) <= 0 or min(delta) <= 0:
        raise ScenarioError("tariff constants must be positive")
    base = _per_slot(config.base_load, T, "base_load")
    if not config.fleets:
        raise ScenarioError("at least one aggregator is required")
    lo, hi = config.weight_range

    fleets = []
    for i, fleet in enumerate(config.fleets):
        unknown = set(fleet) - set(config.catalog)
        if unknown:
            raise ScenarioError(f"aggregator {i + 1}: unknown EV models {sorted(unknown)}")
        fleets.append([m for m in config.catalog for _ in range(int(fleet.get(m, 0)))])

    rng = np.random.Generator(np.random.PCG64(seed))
    socs = rng.random(sum(len(f) for f in fleets))
    weights = rng.integers(lo, hi + 1, size=len(fleets))

    aggregators = []
    offset = 0
    for i, models in enumerate(fleets):
        evs = tuple(
            EvSpec(max_rate=config.catalog[m][0], capacity=config.catalog[m][1],
                   initial_soc_frac=float(s), model=m)
            for m, s in zip(models, socs[offset:offset + len(models)])
        )
        offset += len(models)
        agg = Aggregator(id=i + 1, evs=evs, efficiency=float(config.efficiency),
                         deviation_weights=(float(weights[i]),) * T)
        if agg.min_slots(dt) > T:
            raise ScenarioError(
                f"aggregator {i + 1} needs {agg.min_slots(dt)} slots but the horizon has {T}")
        aggregators.append(agg)

    return Scenario(horizon_slots=T, slot_hours=dt, aggregators=tuple(aggregators),
                    grid=GridModel(base_load=base, phi=phi, delta=delta), seed=int(seed))


def paper_default(seed: int = PAPER_DEFAULT_SEED) -> Scenario:
    return generate_instance(GenerationConfig.paper_default(), seed)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, where: str, what: str) -> None:
        self.violations.append(f"{where}: {what}")


def validate(sc: Scenario) -> ValidationReport:
    rep = ValidationReport()
    T = sc.horizon_slots
    if not isinstance(T, int) or T < 1:
        rep.add("horizon_slots", "must be an integer >= 1")
        return rep
    if not sc.slot_hours > 0:
        rep.add("slot_hours", "must be positive")
    if not sc.aggregators:
        rep.add("aggregators", "at least one aggregator is required")

    for name in ("base_load", "phi", "delta"):
        vec = getattr(sc.grid, name)
        if len(vec) != T:
            rep.add(f"grid.{name}", f"vector length mismatch ({len(vec)} != {T})")
        elif any(not v > 0 for v in vec):
            rep.add(f"grid.{name}", "entries must be strictly positive")

    for i, agg in enumerate(sc.aggregators):
        where = f"aggregators[{i}]"
        if not 0 < agg.efficiency <= 1:
            rep.add(where, "efficiency out of (0,1]")
        if len(agg.deviation_weights) != T:
            rep.add(f"{where}.deviation_weights",
                    f"vector length mismatch ({len(agg.deviation_weights)} != {T})")
        if any(not g > 0 for g in agg.deviation_weights):
            rep.add(f"{where}.deviation_weights", "entries must be strictly positive")
        for k, ev in enumerate(agg.evs):
            ew = f"{where}.evs[{k}]"
            if not ev.max_rate > 0:
                rep.add(ew, "max_rate must be positive")
            if not ev.capacity > 0:
                rep.add(ew, "capacity must be positive")
            if not 0 <= ev.initial_soc_frac <= 1:
                rep.add(ew, "initial_soc_frac out of [0,1]")
        if sc.slot_hours > 0 and all(ev.max_rate > 0 for ev in agg.evs):
            if agg.min_slots(sc.slot_hours) > T:
                rep.add(where, "min_slots exceeds horizon (no feasible start slot)")
    return rep


# --------------------------------------------------------------------------
# serialization


def to_dict(sc: Scenario) -> dict:
    return {
        "schema_version": sc.schema_version,
        "rng": sc.rng,
        "seed": sc.seed,
        "horizon_slots": sc.horizon_slots,
        "slot_hours": sc.slot_hours,
        "grid": {
            "base_load_kwh": list(sc.grid.base_load),
            "phi_cents_per_kwh2": list(sc.grid.phi),
            "delta_cents_per_kwh": list(sc.grid.delta),
        },
        "aggregators": [
            {
                "id": a.id,
                "efficiency": a.efficiency,
                "deviation_weights_cents_per_kwh2": list(a.deviation_weights),
                "evs": [
                    {
                        "model": ev.model,
                        "max_rate_kw": ev.max_rate,
                        "capacity_kwh": ev.capacity,
                        "initial_soc_frac": ev.initial_soc_frac,
                    }
                    for ev in a.evs
                ],
                # derived, informational only; recomputed on load
                "demand_kwh": a.demand,
                "min_slots": a.min_slots(sc.slot_hours),
                "start_slots": [1, len(a.start_slots(sc.horizon_slots, sc.slot_hours))],
            }
            for a in sc.aggregators
        ],
    }


def from_dict(data: dict) -> Scenario:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION!r})")
    try:
        T = int(data["horizon_slots"])
        grid = data["grid"]
        aggs = tuple(
            Aggregator(
                id=int(a["id"]),
                efficiency=float(a["efficiency"]),
                deviation_weights=tuple(float(g) for g in a["deviation_weights_cents_per_kwh2"]),
                evs=tuple(
                    EvSpec(max_rate=float(ev["max_rate_kw"]), capacity=float(ev["capacity_kwh"]),
                           initial_soc_frac=float(ev["initial_soc_frac"]),
                           model=str(ev.get("model", "")))
                    for ev in a["evs"]
                ),
            )
            for a in data["aggregators"]
        )
        return Scenario(
            horizon_slots=T,
            slot_hours=float(data["slot_hours"]),
            aggregators=aggs,
            grid=GridModel(
                base_load=tuple(float(v) for v in grid["base_load_kwh"]),
                phi=tuple(float(v) for v in grid["phi_cents_per_kwh2"]),
                delta=tuple(float(v) for v in grid["delta_cents_per_kwh"]),
            ),
            seed=data.get("seed"),
            rng=data.get("rng", RNG_ALGORITHM),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario file: {exc!r}") from exc


def save(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(to_dict(sc), indent=2) + "\n")


def load(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)


def scenario_digest(sc: Scenario) -> str:
    """SHA-256 over a canonical binary encoding (floats as big-endian f64)."""
    h = hashlib.sha256()

    def put_str(s: str) -> None:
        b = s.encode()
        h.update(struct.pack(">I", len(b)) + b)

    def put_floats(vals) -> None:
        vals = list(vals)
        h.update(struct.pack(f">I{len(vals)}d", len(vals), *vals))

    put_str(sc.schema_version)
    h.update(struct.pack(">I", sc.horizon_slots))
    put_floats([sc.slot_hours])
    put_floats(sc.grid.base_load)
    put_floats(sc.grid.phi)
    put_floats(sc.grid.delta)
    h.update(struct.pack(">I", len(sc.aggregators)))
    for a in sc.aggregators:
        h.update(struct.pack(">I", a.id))
        put_floats([a.efficiency])
        put_floats(a.deviation_weights)
        h.update(struct.pack(">I", len(a.evs)))
        for ev in a.evs:
            put_floats([ev.max_rate, ev.capacity, ev.initial_soc_frac])
    return h.hexdigest()

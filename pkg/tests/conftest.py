import hashlib
import os
import time
from pathlib import Path

import numpy as np
import pytest

from evgame import _pykernels
from evgame.payoff_tensor import PayoffTensor, TensorOptions, build_tensor
from evgame.scenario import (Aggregator, EvSpec, GenerationConfig, GridModel, Scenario,
                             generate_instance, paper_default)

try:
    from evgame import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KERNELS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    KERNELS.append(pytest.param(_ckernels, id="cython"))

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def kernels(request):
    return request.param


def pytest_generate_tests(metafunc):
    if "kernels" in metafunc.fixturenames:
        metafunc.parametrize("kernels", KERNELS, indirect=True)


# --------------------------------------------------------------------------
# scenarios


def toy_scenario(n_players=2, horizon=2, energy=2.0, cap=2.0, phi=1.0, delta=0.0,
                 g=0.0, base=0.0) -> Scenario:
    """eta = 1, one EV per aggregator sized so the per-slot box is [0, cap]."""
    dt = 0.5
    aggs = tuple(
        Aggregator(id=i + 1, evs=(EvSpec(max_rate=cap / dt, capacity=energy, initial_soc_frac=0.0),),
                   efficiency=1.0, deviation_weights=(g,) * horizon)
        for i in range(n_players))
    grid = GridModel(base_load=(base,) * horizon, phi=(phi,) * horizon, delta=(delta,) * horizon)
    return Scenario(horizon_slots=horizon, slot_hours=dt, aggregators=aggs, grid=grid)


def small_config(**kw) -> GenerationConfig:
    """Three small fleets over 8 one-hour slots; a few dozen start profiles."""
    base = dict(horizon_slots=8, slot_hours=1.0,
                fleets=({"prius": 1, "volt": 1}, {"leaf": 1, "prius": 1}, {"volt": 1}),
                base_load=(30.0, 28.0, 27.0, 27.0, 28.0, 30.0, 33.0, 36.0))
    base.update(kw)
    return GenerationConfig(**base)


@pytest.fixture
def small():
    return generate_instance(small_config(), 7)


def tensor_from(F, digest="0" * 64) -> PayoffTensor:
    """Complete tensor holding the payoff arrays ``F[i]`` (all of one shape)."""
    F = [np.asarray(f, dtype=float) for f in F]
    t = PayoffTensor.empty(digest, F[0].shape, 1)
    t.payoffs[...] = np.stack(F, axis=-1)
    t.br_gap[:] = 0.0
    t.residual[:] = 0.0
    t.converged[:] = True
    t.filled[:] = True
    return t


# --------------------------------------------------------------------------
# the paper-default tensor, built once and kept in pytest's cache directory


@pytest.fixture(scope="session")
def default_scenario():
    return paper_default()


def _solver_fingerprint() -> str:
    """Hash of the sources that determine tensor entries (stale caches get a new name)."""
    import evgame
    root = Path(evgame.__file__).parent
    h = hashlib.sha256()
    for name in ("_pykernels.py", "_ckernels.pyx", "inner_game.py", "payoff_tensor.py", "scenario.py"):
        h.update((root / name).read_bytes())
    return h.hexdigest()[:12]


@pytest.fixture(scope="session")
def default_build(request, default_scenario):
    """(tensor, seconds spent building it in this session; ~0 on a cache hit)."""
    key = f"default-{default_scenario.digest()[:12]}-{_solver_fingerprint()}.bin"
    path = request.config.cache.mkdir("evgame") / key
    if os.environ.get("EVGAME_FRESH_TENSOR") == "1" and path.exists():
        path.unlink()
    t0 = time.perf_counter()
    tensor = build_tensor(default_scenario, TensorOptions(cache=path))
    return tensor, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_tensor(default_build):
    return default_build[0]

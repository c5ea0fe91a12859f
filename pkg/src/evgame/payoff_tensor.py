"""First-stage payoffs: every start-slot profile solved to its subgame equilibrium.

The tensor is the backward-induction step: entry ``sigma`` holds each
aggregator's equilibrium payoff (and loads) in the charging subgame that
``sigma`` induces.  Builds are resumable through an append-only binary
cache keyed by the scenario digest.

Cache layout (little-endian)::

    header:  b"EVGTENS\\n" | u32 version | 32B sha256(scenario) | u32 N | u32 T
             | u64 K | N x u32 start-set sizes
    record:  N x u16 start slots (1-based) | N x f64 payoffs | u32 sweeps
             | f64 residual | f64 br_gap | u8 converged | N*T x f64 loads
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import inner_game
from .inner_game import SolveOptions
from .scenario import Scenario, ScenarioArrays

log = logging.getLogger(__name__)

MAGIC = b"EVGTENS\n"
FORMAT_VERSION = 1
CERT_RTOL = 1e-4


class CacheError(RuntimeError):
    pass


class DigestMismatch(CacheError):
    pass


class IncompleteTensor(RuntimeError):
    pass


def record_dtype(N: int, T: int) -> np.dtype:
    return np.dtype([
        ("sigma", "<u2", (N,)),
        ("payoffs", "<f8", (N,)),
        ("iterations", "<u4"),
        ("residual", "<f8"),
        ("br_gap", "<f8"),
        ("converged", "u1"),
        ("loads", "<f8", (N, T)),
    ])


def enumerate_profiles(scenario: Scenario) -> Iterator[tuple[int, ...]]:
    """All start-slot profiles in lexicographic order (1-based slots)."""
    return itertools.product(*(range(1, len(s) + 1) for s in scenario.start_sets()))


@dataclass
class PayoffTensor:
    scenario_digest: str
    shape: tuple[int, ...]  # |I_1|, ..., |I_N|
    horizon: int
    payoffs: np.ndarray  # shape + (N,)
    loads: np.ndarray  # (K, N, T), flat lexicographic order
    iterations: np.ndarray  # (K,)
    residual: np.ndarray  # (K,)
    br_gap: np.ndarray  # (K,)
    converged: np.ndarray  # (K,) bool
    filled: np.ndarray  # (K,) bool
    _rows: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def empty(cls, digest: str, shape, horizon: int) -> "PayoffTensor":
        shape = tuple(int(s) for s in shape)
        K, N = int(np.prod(shape)), len(shape)
        return cls(digest, shape, horizon,
                   payoffs=np.zeros(shape + (N,)),
                   loads=np.zeros((K, N, horizon)),
                   iterations=np.zeros(K, dtype=np.int64),
                   residual=np.full(K, np.nan),
                   br_gap=np.full(K, np.nan),
                   converged=np.zeros(K, dtype=bool),
                   filled=np.zeros(K, dtype=bool))

    @property
    def n_players(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def __len__(self) -> int:
        return int(self.filled.sum())

    def flat_index(self, sigma) -> int:
        return int(np.ravel_multi_index(tuple(s - 1 for s in sigma), self.shape))

    def profile(self, k: int) -> tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.unravel_index(k, self.shape))

    @property
    def certified(self) -> np.ndarray:
        """Entries whose unilateral-improvement gap is within tolerance."""
        flat = self.payoffs.reshape(self.size, self.n_players)
        scale = np.abs(flat).min(axis=1)
        return self.filled & (self.br_gap <= CERT_RTOL * scale + 1e-12)

    @property
    def complete(self) -> bool:
        return bool(self.certified.all())

    def failures(self) -> list[tuple[int, ...]]:
        return [self.profile(k) for k in np.flatnonzero(self.filled & ~self.certified)]

    def missing(self) -> np.ndarray:
        return np.flatnonzero(~self.filled)

    def payoff(self, i: int) -> np.ndarray:
        """F_i over all profiles, shape ``self.shape`` (0-based player index)."""
        return self.payoffs[..., i]

    def player_rows(self) -> np.ndarray:
        """Payoffs as a contiguous (N, K) array, row i = F_i flattened."""
        if self._rows is None:
            self._rows = np.ascontiguousarray(
                np.moveaxis(self.payoffs, -1, 0).reshape(self.n_players, self.size))
        return self._rows

    def require_complete(self) -> None:
        if not self.complete:
            raise IncompleteTensor(
                f"payoff tensor incomplete: {len(self)}/{self.size} entries, "
                f"{len(self.failures())} uncertified")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.scenario_digest.encode())
        h.update(struct.pack("<I", len(self.shape)) + struct.pack(f"<{len(self.shape)}I", *self.shape))
        h.update(np.ascontiguousarray(self.payoffs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.loads, dtype="<f8").tobytes())
        return h.hexdigest()

    def put(self, records: np.ndarray) -> None:
        N = self.n_players
        self._rows = None
        for rec in records:
            k = self.flat_index(rec["sigma"])
            if self.filled[k]:
                continue
            self.payoffs.reshape(self.size, N)[k] = rec["payoffs"]
            self.loads[k] = rec["loads"]
            self.iterations[k] = rec["iterations"]
            self.residual[k] = rec["residual"]
            self.br_gap[k] = rec["br_gap"]
            self.converged[k] = bool(rec["converged"])
            self.filled[k] = True

    def records(self) -> np.ndarray:
        N, T = self.n_players, self.horizon
        idx = np.flatnonzero(self.filled)
        out = np.zeros(len(idx), dtype=record_dtype(N, T))
        out["sigma"] = np.array(np.unravel_index(idx, self.shape)).T + 1
        out["payoffs"] = self.payoffs.reshape(self.size, N)[idx]
        out["iterations"] = self.iterations[idx]
        out["residual"] = self.residual[idx]
        out["br_gap"] = self.br_gap[idx]
        out["converged"] = self.converged[idx]
        out["loads"] = self.loads[idx]
        return out


# --------------------------------------------------------------------------
# cache file


def _header(digest: str, shape, horizon: int) -> bytes:
    N = len(shape)
    return (MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes.fromhex(digest)
            + struct.pack("<IIQ", N, horizon, int(np.prod(shape)))
            + struct.pack(f"<{N}I", *shape))


def _read_header(f) -> tuple[str, tuple[int, ...], int, int]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise CacheError("not a payoff-tensor cache (bad magic)")
    raw = f.read(4)
    if len(raw) != 4:
        raise CacheError("truncated cache header")
    (version,) = struct.unpack("<I", raw)
    if version != FORMAT_VERSION:
        raise CacheError(f"cache format version {version}, expected {FORMAT_VERSION}")
    rest = f.read(32 + 16)
    if len(rest) != 48:
        raise CacheError("truncated cache header")
    digest = rest[:32].hex()
    N, T, K = struct.unpack("<IIQ", rest[32:])
    raw = f.read(4 * N)
    if len(raw) != 4 * N:
        raise CacheError("truncated cache header")
    shape = struct.unpack(f"<{N}I", raw)
    if int(np.prod(shape)) != K:
        raise CacheError("corrupt cache header (K does not match start-set sizes)")
    return digest, tuple(shape), T, f.tell()


def cache_store(tensor: PayoffTensor, path) -> None:
    """Write ``tensor`` as a fresh cache file (atomically replaces ``path``)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_header(tensor.scenario_digest, tensor.shape, tensor.horizon))
        f.write(tensor.records().tobytes())
    os.replace(tmp, path)


def _load_raw(path) -> tuple[PayoffTensor, int]:
    """Returns the tensor and the byte offset just past the last whole record."""
    with open(path, "rb") as f:
        digest, shape, T, offset = _read_header(f)
        body = f.read()
    dt = record_dtype(len(shape), T)
    n = len(body) // dt.itemsize
    recs = np.frombuffer(body[:n * dt.itemsize], dtype=dt)
    if n and (np.any(recs["sigma"] < 1) or np.any(recs["sigma"] > np.array(shape))):
        raise CacheError("corrupt cache record (start slot out of range)")
    tensor = PayoffTensor.empty(digest, shape, T)
    tensor.put(recs)
    return tensor, offset + n * dt.itemsize


def cache_load(path, scenario: Scenario | None = None) -> PayoffTensor:
    """Read a cache file; with ``scenario`` given, reject a digest mismatch.

    A trailing partial record (interrupted write) is ignored.
    """
    path = Path(path)
    if not path.exists():
        raise CacheError(f"{path}: no such cache file")
    tensor, _ = _load_raw(path)
    if scenario is not None and tensor.scenario_digest != scenario.digest():
        raise DigestMismatch(
            f"{path}: cache belongs to scenario {tensor.scenario_digest[:12]}, "
            f"not {scenario.digest()[:12]}")
    return tensor


# --------------------------------------------------------------------------
# building

_WORKER: dict = {}


def _init_worker(arrays: ScenarioArrays, options: SolveOptions) -> None:
    _WORKER["arrays"] = arrays
    _WORKER["options"] = options


def _solve_chunk(flat: np.ndarray) -> np.ndarray:
    arrays: ScenarioArrays = _WORKER["arrays"]
    options: SolveOptions = _WORKER["options"]
    shape = arrays.start_sets
    N, T = len(shape), len(arrays.base_load)
    out = np.zeros(len(flat), dtype=record_dtype(N, T))
    for j, k in enumerate(flat):
        sigma = tuple(int(i) + 1 for i in np.unravel_index(int(k), shape))
        sol = inner_game.solve_arrays(arrays, sigma, options)
        rec = out[j]
        rec["sigma"] = sigma
        rec["payoffs"] = sol.payoffs
        rec["iterations"] = sol.iterations
        rec["residual"] = sol.residual
        rec["br_gap"] = sol.br_gap
        rec["converged"] = sol.converged
        rec["loads"] = sol.loads
    return out


@dataclass
class TensorOptions:
    workers: int = 1
    chunk: int = 256
    solve: SolveOptions = field(default_factory=SolveOptions)
    cache: str | os.PathLike | None = None
    limit: int | None = None  # stop after this many new entries (partial builds)


def build_tensor(scenario: Scenario, options: TensorOptions | None = None,
                 progress: Callable[[int, int], None] | None = None) -> PayoffTensor:
    """Solve every subgame (or the ones the cache lacks) and return the tensor.

    Entries are merged by profile key, so the result does not depend on the
    worker count or completion order.  Uncertified entries are kept in the
    tensor but make it incomplete; see ``PayoffTensor.failures``.
    """
    options = options or TensorOptions()
    arrays = scenario.arrays()
    digest = scenario.digest()
    shape = arrays.start_sets
    T = scenario.horizon_slots

    cache = Path(options.cache) if options.cache else None
    if cache is not None and cache.exists():
        tensor, end = _load_raw(cache)
        if tensor.scenario_digest != digest:
            raise DigestMismatch(f"{cache}: cache belongs to a different scenario")
        with open(cache, "r+b") as f:
            f.truncate(end)  # drop a torn trailing record
    else:
        tensor = PayoffTensor.empty(digest, shape, T)
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            cache.write_bytes(_header(digest, shape, T))

    todo = tensor.missing()
    if options.limit is not None:
        todo = todo[:options.limit]
    K = tensor.size
    done = len(tensor)
    if progress:
        progress(done, K)
    if len(todo) == 0:
        return tensor

    chunks = [todo[i:i + options.chunk] for i in range(0, len(todo), options.chunk)]
    sink = open(cache, "ab") if cache is not None else None
    pool = None
    try:
        if options.workers <= 1:
            _init_worker(arrays, options.solve)
            results = map(_solve_chunk, chunks)
        else:
            pool = ProcessPoolExecutor(max_workers=options.workers, initializer=_init_worker,
                                       initargs=(arrays, options.solve))
            results = pool.map(_solve_chunk, chunks)
        for recs in results:
            tensor.put(recs)
            if sink is not None:
                sink.write(recs.tobytes())
                sink.flush()
            done += len(recs)
            if progress:
                progress(done, K)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
        if sink is not None:
            sink.close()

    bad = tensor.failures()
    if bad:
        log.warning("%d subgame(s) failed certification, e.g. %s", len(bad), bad[:3])
    return tensor

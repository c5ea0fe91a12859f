import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import small_config, toy_scenario
from evgame import payoff_tensor as P
from evgame.scenario import generate_instance, paper_default


def test_enumerate_lexicographic(small):
    profiles = list(P.enumerate_profiles(small))
    assert len(profiles) == 8 * 3 * 6
    assert profiles[0] == (1, 1, 1) and profiles[1] == (1, 1, 2) and profiles[-1] == (8, 3, 6)
    assert profiles == sorted(profiles)


def test_enumerate_default_count():
    assert sum(1 for _ in P.enumerate_profiles(paper_default())) == 30_800


def test_enumerate_tiny():
    one = toy_scenario(n_players=1, horizon=1)
    assert list(P.enumerate_profiles(one)) == [(1,)]


def _toy_oracle(sigma, step=0.01):
    """Grid-search equilibrium payoffs of the 2-slot toy for one start profile."""
    grid = np.arange(0, 2 + step / 2, step)
    free = [s == 1 for s in sigma]  # start 1 may split, start 2 puts all 2 kWh in slot 2
    choices = [grid if f else np.array([0.0]) for f in free]
    a, b = np.meshgrid(choices[0], choices[1], indexing="ij")
    L1, L2 = a + b, (2 - a) + (2 - b)
    c1 = L1 * a + L2 * (2 - a)
    c2 = L1 * b + L2 * (2 - b)
    br1 = c1.argmin(axis=0)  # per b index
    br2 = c2.argmin(axis=1)  # per a index
    eq = [(i, j) for j, i in enumerate(br1) if br2[i] == j]
    i, j = eq[0]
    return -c1[i, j], -c2[i, j]


def test_toy_tensor_vs_grid_oracle():
    sc = toy_scenario()
    t = P.build_tensor(sc)
    assert t.shape == (2, 2) and t.complete
    for sigma in P.enumerate_profiles(sc):
        want = _toy_oracle(sigma)
        got = t.payoffs[sigma[0] - 1, sigma[1] - 1]
        # payoff error from a 0.01 grid on a quadratic: O(step^2) times curvature
        np.testing.assert_allclose(got, want, atol=2e-3)


@pytest.fixture(scope="module")
def small_tensor(tmp_path_factory):
    sc = generate_instance(small_config(), 7)
    path = tmp_path_factory.mktemp("t") / "small.bin"
    return sc, P.build_tensor(sc, P.TensorOptions(cache=path)), path


def test_small_tensor_complete(small_tensor):
    sc, t, _ = small_tensor
    assert len(t) == t.size == 144 and t.complete
    assert np.all(t.payoffs < 0)
    assert np.all(t.br_gap <= P.CERT_RTOL * np.abs(t.payoffs).reshape(t.size, -1).min(axis=1))
    k = t.flat_index((3, 2, 5))
    assert t.profile(k) == (3, 2, 5)


def test_round_trip(small_tensor, tmp_path):
    sc, t, _ = small_tensor
    P.cache_store(t, tmp_path / "copy.bin")
    back = P.cache_load(tmp_path / "copy.bin", sc)
    assert back.digest() == t.digest()
    np.testing.assert_array_equal(back.payoffs, t.payoffs)
    np.testing.assert_array_equal(back.loads, t.loads)


def test_digest_mismatch(small_tensor):
    _, _, path = small_tensor
    with pytest.raises(P.DigestMismatch):
        P.cache_load(path, generate_instance(small_config(), 8))


def test_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a cache at all")
    with pytest.raises(P.CacheError, match="magic"):
        P.cache_load(tmp_path / "x.bin")
    with pytest.raises(P.CacheError):
        P.cache_load(tmp_path / "missing.bin")


def test_resume_partial(small_tensor, tmp_path):
    sc, full, _ = small_tensor
    path = tmp_path / "part.bin"
    part = P.build_tensor(sc, P.TensorOptions(cache=path, limit=50))
    assert len(part) == 50 and not part.complete
    with pytest.raises(P.IncompleteTensor):
        part.require_complete()
    seen = []
    done = P.build_tensor(sc, P.TensorOptions(cache=path), progress=lambda d, k: seen.append(d))
    assert seen[0] == 50 and seen[-1] == 144
    assert done.digest() == full.digest()
    # complete cache: nothing recomputed
    again = []
    P.build_tensor(sc, P.TensorOptions(cache=path), progress=lambda d, k: again.append(d))
    assert again == [144]


def test_torn_record_is_dropped(small_tensor, tmp_path):
    sc, full, _ = small_tensor
    path = tmp_path / "torn.bin"
    P.build_tensor(sc, P.TensorOptions(cache=path, limit=20))
    with open(path, "ab") as f:
        f.write(b"\x01\x02\x03")  # interrupted write
    assert len(P.cache_load(path, sc)) == 20
    assert P.build_tensor(sc, P.TensorOptions(cache=path)).digest() == full.digest()
    size = P.record_dtype(3, 8).itemsize * 144
    assert os.path.getsize(path) == len(P._header(sc.digest(), (8, 3, 6), 8)) + size


def test_workers_bit_identical(small_tensor):
    sc, full, _ = small_tensor
    par = P.build_tensor(sc, P.TensorOptions(workers=3, chunk=7))
    assert par.digest() == full.digest()
    np.testing.assert_array_equal(par.payoffs, full.payoffs)


def test_python_backend_matches(small_tensor, tmp_path):
    sc, full, _ = small_tensor
    from evgame import scenario as S
    S.save(sc, tmp_path / "s.json")
    code = ("import sys; from evgame import scenario as S, payoff_tensor as P, BACKEND;"
            "assert BACKEND == 'python', BACKEND;"
            f"P.build_tensor(S.load(r'{tmp_path / 's.json'}'), P.TensorOptions(cache=r'{tmp_path / 'py.bin'}'))")
    env = dict(os.environ, EVGAME_PURE_PYTHON="1")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)
    py = P.cache_load(tmp_path / "py.bin", sc)
    assert py.complete
    np.testing.assert_allclose(py.payoffs, full.payoffs, rtol=1e-11)
    np.testing.assert_allclose(py.loads, full.loads, atol=1e-9)


def test_uncertified_entries_reported(small):
    opts = P.TensorOptions(solve=P.SolveOptions(eps_alg=1e-15, max_sweeps=1), limit=5)
    t = P.build_tensor(small, opts)
    assert len(t.failures()) == 5
    assert not t.complete


def test_put_resets_row_cache(small_tensor):
    _, full, _ = small_tensor
    t = P.PayoffTensor.empty(full.scenario_digest, full.shape, full.horizon)
    t.put(full.records()[:10])
    first = t.player_rows().copy()
    t.put(full.records()[10:])
    assert not np.array_equal(first, t.player_rows())
    np.testing.assert_array_equal(t.player_rows()[1], full.payoff(1).ravel())

"""Command-line pipeline: generate -> tensor -> solve -> report.

Exit codes: 0 ok, 2 usage, 3 invalid input or digest mismatch,
4 solver did not converge or certify, 5 file I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, outer_game, payoff_tensor, scenario
from .inner_game import ConvergenceError, SolveOptions

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# argument helpers


def _alpha(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha {text!r}") from None
    for v in vals:
        if not 0 < v <= 1:
            raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1], got {v}")
    return vals[0] if len(vals) == 1 else tuple(vals)


def _beta(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"beta must lie in (0, 1), got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _sweep(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep is LO:HI:STEP") from None
    if not (0 < lo <= hi <= 1 and step > 0):
        raise argparse.ArgumentTypeError("sweep needs 0 < LO <= HI <= 1 and STEP > 0")
    n = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(n), 10)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_scenario(path) -> scenario.Scenario:
    try:
        sc = scenario.load(path)
    except OSError as e:
        raise CliError(f"cannot read scenario: {e}", EXIT_IO) from e
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(f"invalid scenario file {path}: {e}", EXIT_INVALID) from e
    report = scenario.validate(sc)
    if not report.ok:
        raise CliError("invalid scenario:\n  " + "\n  ".join(report.violations), EXIT_INVALID)
    return sc


def _load_tensor(path, sc) -> payoff_tensor.PayoffTensor:
    try:
        tensor = payoff_tensor.cache_load(path, sc)
    except payoff_tensor.DigestMismatch as e:
        raise CliError(str(e), EXIT_INVALID) from e
    except (OSError, payoff_tensor.CacheError) as e:
        raise CliError(f"cannot read tensor cache: {e}", EXIT_IO) from e
    if not tensor.complete:
        raise CliError(f"tensor incomplete ({len(tensor)}/{tensor.size} entries, "
                       f"{len(tensor.failures())} uncertified); run `evgame tensor`",
                       EXIT_CONVERGENCE)
    return tensor


def _model(kind: str, alpha, n: int) -> outer_game.BehaviorModel:
    if kind == "eut":
        return outer_game.BehaviorModel.eut()
    if alpha is None:
        raise CliError("--model pt needs --alpha", EXIT_USAGE)
    try:
        return outer_game.BehaviorModel.pt(alpha, n)
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE) from e


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO) from e


def _digest_lines(**digests) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in digests.items())


# --------------------------------------------------------------------------
# tables


def format_start_sets(sc: scenario.Scenario) -> str:
    lines = ["aggregator\tstart_slots\tsize"]
    for agg, s in zip(sc.aggregators, sc.start_sets()):
        lines.append(f"{agg.id}\t{{{s.start},...,{s.stop - 1}}}\t{len(s)}")
    return "\n".join(lines) + "\n"


def savings_table(rep: metrics.SavingsReport) -> str:
    lines = ["aggregator\tbaseline_cost\texpected_cost\tsaving_pct"]
    for i, (b, c, s) in enumerate(zip(rep.baseline_costs, rep.expected_costs, rep.savings_pct)):
        lines.append(f"{i + 1}\t{b:.6f}\t{c:.6f}\t{s:.4f}")
    lines.append(f"# par_reduction_pct: {rep.par_reduction_pct:.4f}")
    return "\n".join(lines) + "\n"


def load_table(sc, base: metrics.BaselineResult, outcomes: dict) -> str:
    cols = list(outcomes)
    lines = ["slot\tbase_load\tuncoordinated\t" + "\t".join(cols)]
    for t in range(sc.horizon_slots):
        row = [f"{t + 1}", f"{sc.grid.base_load[t]:.6f}", f"{base.aggregate_load[t]:.6f}"]
        row += [f"{outcomes[c].aggregate_load[t]:.6f}" for c in cols]
        lines.append("\t".join(row))
    lines.append("# par\t\t" + f"{base.par:.6f}\t" + "\t".join(f"{outcomes[c].par:.6f}" for c in cols))
    return "\n".join(lines) + "\n"


def slot_one_table(base: metrics.BaselineResult, outcomes: dict) -> str:
    cols = list(outcomes)
    lines = ["aggregator\tuncoordinated\t" + "\t".join(cols)]
    for i in range(len(base.costs)):
        row = [f"{i + 1}", f"{base.profiles[i, 0]:.6f}"]
        row += [f"{outcomes[c].ev_loads[i, 0]:.6f}" for c in cols]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.preset != "paper-default":
        raise CliError(f"unknown preset {args.preset!r}", EXIT_USAGE)
    try:
        sc = scenario.paper_default(args.seed)
    except scenario.ScenarioError as e:
        raise CliError(str(e), EXIT_INVALID) from e
    try:
        scenario.save(sc, args.out)
    except OSError as e:
        raise CliError(f"cannot write {args.out}: {e}", EXIT_IO) from e
    print(f"scenario {sc.digest()} -> {args.out}")
    print(format_start_sets(sc), end="")
    K = int(np.prod([len(s) for s in sc.start_sets()]))
    print(f"profiles: {K}")
    return EXIT_OK


def cmd_tensor(args) -> int:
    sc = _load_scenario(args.scenario)
    opts = payoff_tensor.TensorOptions(
        workers=args.workers, cache=args.cache,
        solve=SolveOptions(eps_alg=args.eps_alg, max_sweeps=args.max_sweeps))
    step = max(1, int(np.prod([len(s) for s in sc.start_sets()])) // 20)

    def progress(done, K):
        if done == K or done % step < opts.chunk:
            print(f"\r{done}/{K}", end="", file=sys.stderr, flush=True)

    try:
        tensor = payoff_tensor.build_tensor(sc, opts, progress)
    except payoff_tensor.DigestMismatch as e:
        raise CliError(str(e), EXIT_INVALID) from e
    except (OSError, payoff_tensor.CacheError) as e:
        raise CliError(f"tensor cache: {e}", EXIT_IO) from e
    except ConvergenceError as e:
        raise CliError(str(e), EXIT_CONVERGENCE) from e
    print(file=sys.stderr)
    print(f"entries: {len(tensor)}/{tensor.size}")
    print(f"max sweeps: {int(tensor.iterations.max())}  max br_gap: {np.nanmax(tensor.br_gap):.3e}")
    if not tensor.complete:
        print(f"uncertified entries: {len(tensor.failures())}", file=sys.stderr)
        return EXIT_CONVERGENCE
    print(f"tensor digest: {tensor.digest()}")
    return EXIT_OK


def _solve_one(tensor, model, args):
    return outer_game.iterate_to_equilibrium(tensor, model=model, beta=args.beta,
                                             max_iters=args.max_iters, eps_target=args.eps_target)


def cmd_solve(args) -> int:
    sc = _load_scenario(args.scenario)
    tensor = _load_tensor(args.cache, sc)
    base = metrics.uncoordinated_baseline(sc)
    digests = dict(scenario_digest=sc.digest(), tensor_digest=tensor.digest())

    if args.alpha_sweep is not None:
        lines = ["alpha\tepsilon\treached\titerations\tpar\tpar_reduction_pct\tmean_saving_pct\tmodal_slots"]
        ok = True
        for a in args.alpha_sweep:
            sol = _solve_one(tensor, _model("pt", float(a), tensor.n_players), args)
            out = metrics.expected_outcome(sc, tensor, sol)
            rep = metrics.savings_report(base, out)
            ok &= sol.reached
            lines.append(f"{a:g}\t{sol.epsilon:.6e}\t{int(sol.reached)}\t{sol.iterations}\t{out.par:.6f}\t"
                         f"{rep.par_reduction_pct:.4f}\t{rep.savings_pct.mean():.4f}\t"
                         + ",".join(map(str, sol.modal_slots())))
        text = _digest_lines(**digests) + "\n".join(lines) + "\n"
        _write(args.out, text)
        print(text, end="")
        return EXIT_OK if ok else EXIT_CONVERGENCE

    model = _model(args.model, args.alpha, tensor.n_players)
    sol = _solve_one(tensor, model, args)
    try:
        sol.save(args.out)
    except OSError as e:
        raise CliError(f"cannot write {args.out}: {e}", EXIT_IO) from e
    rep = metrics.savings_report(base, metrics.expected_outcome(sc, tensor, sol))
    report_path = args.report or str(Path(args.out).with_suffix(".savings.tsv"))
    _write(report_path, _digest_lines(**digests, solution_digest=_file_digest(args.out))
           + savings_table(rep))
    print(f"model: {model.kind} {list(model.alphas) or ''}".rstrip())
    print(f"iterations: {sol.iterations}  epsilon: {sol.epsilon:.4e}  target: {sol.eps_target:.4e}")
    for i, a in enumerate(sol.strategies):
        print(f"  aggregator {i + 1}: " + " ".join(f"{p:.4f}" for p in a))
    print(f"PAR reduction: {rep.par_reduction_pct:.2f}%")
    if not sol.reached:
        print("warning: epsilon target not reached within --max-iters", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_report(args) -> int:
    sc = _load_scenario(args.scenario)
    tensor = _load_tensor(args.cache, sc)
    base = metrics.uncoordinated_baseline(sc)
    outcomes, digests = {}, dict(scenario_digest=sc.digest(), tensor_digest=tensor.digest())
    for path in args.solution:
        try:
            sol = outer_game.OuterSolution.load(path)
        except OSError as e:
            raise CliError(f"cannot read solution: {e}", EXIT_IO) from e
        except (ValueError, KeyError) as e:
            raise CliError(f"invalid solution file {path}: {e}", EXIT_INVALID) from e
        try:
            out = metrics.expected_outcome(sc, tensor, sol)
        except metrics.DigestMismatch as e:
            raise CliError(f"{path}: {e}", EXIT_INVALID) from e
        m = sol.model
        label = "eut" if m.kind == "eut" else "pt(" + ",".join(f"{a:g}" for a in dict.fromkeys(m.alphas)) + ")"
        while label in outcomes:
            label += "'"
        outcomes[label] = out
        digests[f"solution_digest[{label}]"] = _file_digest(path)

    outdir = Path(args.out_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {outdir}: {e}", EXIT_IO) from e
    head = _digest_lines(**digests)
    for label, out in outcomes.items():
        name = label.replace("(", "_").replace(")", "").replace(",", "_").replace("'", "b")
        _write(outdir / f"savings_{name}.tsv", head + savings_table(metrics.savings_report(base, out)))
    _write(outdir / "expected_load.tsv", head + load_table(sc, base, outcomes))
    _write(outdir / "slot1_load.tsv", head + slot_one_table(base, outcomes))
    print(f"wrote {len(outcomes) + 2} tables to {outdir}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evgame", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a scenario file")
    g.add_argument("--preset", default="paper-default")
    g.add_argument("--seed", type=int, default=scenario.PAPER_DEFAULT_SEED)
    g.add_argument("--out", default="scenario.json")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("tensor", help="build or resume the payoff tensor")
    t.add_argument("--scenario", default="scenario.json")
    t.add_argument("--cache", default="tensor.bin")
    t.add_argument("--workers", type=_positive_int, default=1)
    t.add_argument("--eps-alg", type=float, default=SolveOptions.eps_alg)
    t.add_argument("--max-sweeps", type=_positive_int, default=SolveOptions.max_sweeps)
    t.set_defaults(func=cmd_tensor)

    s = sub.add_parser("solve", help="start-time equilibrium under EUT or PT")
    s.add_argument("--scenario", default="scenario.json")
    s.add_argument("--cache", default="tensor.bin")
    s.add_argument("--model", choices=("eut", "pt"), default="eut")
    s.add_argument("--alpha", type=_alpha, help="scalar or comma-separated per-aggregator vector")
    s.add_argument("--alpha-sweep", type=_sweep, metavar="LO:HI:STEP",
                   help="solve PT for each alpha and emit one row per alpha")
    s.add_argument("--beta", type=_beta, default=0.7)
    s.add_argument("--eps-target", type=float, default=None,
                   help="default: 1e-5 x median |payoff|")
    s.add_argument("--max-iters", type=_positive_int, default=100_000)
    s.add_argument("--out", default="solution.json")
    s.add_argument("--report", help="savings table path (default: next to --out)")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="savings and expected-load tables")
    r.add_argument("--scenario", default="scenario.json")
    r.add_argument("--cache", default="tensor.bin")
    r.add_argument("--solution", nargs="+", default=["solution.json"])
    r.add_argument("--out-dir", default="report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"evgame: {e}", file=sys.stderr)
        return e.code
    except KeyboardInterrupt:
        print("\ninterrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())

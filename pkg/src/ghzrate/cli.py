"""Command-line front end: ``ghzrate {rate,compare,trees,sweep}``.

Every record uses the columns ``n,m,p,method,L_mean,rate,error,seed,wall_ms``.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from ghzrate import analytic, trees
from ghzrate.chain import ConvergenceError, RateEstimate, exact_rate
from ghzrate.core import (
    DEFAULT_DIRECT_CAP,
    DEFAULT_STATE_CAP,
    NetworkParams,
    ParameterError,
    check_state_cap,
    parse_occupation,
    validate,
)
from ghzrate.sim import SimConfig, run_full

COLUMNS = ["n", "m", "p", "method", "L_mean", "rate", "error", "seed", "wall_ms"]
RATE_METHODS = ["exact", "analytic-m1", "approx", "smallp-bipartite", "large-m", "simulate"]
SWEEP_METHODS = ["exact", "analytic", "approx", "smallp", "simulate", "bounds"]


class UsageError(Exception):
    """Invalid flag combination; exits with status 2."""


@dataclass
class Options:
    seed: int | None = None
    rounds: int = 100_000
    burn_in: int = 1_000
    replicas: int = 32
    alpha_mode: str = "paper"
    solver: str = "auto"
    state_cap: int = DEFAULT_STATE_CAP

    def sim_config(self) -> SimConfig:
        return SimConfig(self.rounds, self.burn_in, self.replicas, self.seed)


def _record(params: NetworkParams, method: str, L=None, rate=None, error="", seed=None, wall_ms=0.0) -> dict:
    return {
        "n": params.n,
        "m": params.m,
        "p": params.p,
        "method": method,
        "L_mean": L,
        "rate": rate,
        "error": error,
        "seed": seed,
        "wall_ms": round(wall_ms, 3),
    }


def evaluate(method: str, params: NetworkParams, opts: Options) -> list[dict]:
    """Run one method on one parameter point; raises on inapplicable input."""
    validate(params)
    n, m, p = params.n, params.m, params.p
    t0 = time.perf_counter()
    seed = None
    if method == "exact":
        check_state_cap(params, opts.state_cap)
        solver = opts.solver
        if solver == "auto":
            solver = "linear" if params.num_states <= min(DEFAULT_DIRECT_CAP, 2_000) else "power"
        results = [exact_rate(params, solver=solver, cap=opts.state_cap)]
    elif method in ("analytic-m1", "analytic"):
        if m != 1:
            raise UsageError(f"analytic-m1 needs m=1, got m={m}")
        results = [analytic.rate_no_multiplexing(n, p)]
    elif method == "approx":
        results = [analytic.general_L_approx(n, m, p, opts.alpha_mode)]
    elif method == "smallp-bipartite":
        if n != 2:
            raise UsageError(f"smallp-bipartite needs n=2, got n={n}")
        results = [analytic.bipartite_L_small_p(m, p)]
    elif method == "smallp":
        if n == 2:
            results = [analytic.bipartite_L_small_p(m, p)]
        else:
            coeff = trees.smallp_expected_L(n, m, cap=opts.state_cap)
            results = [RateEstimate.from_L(float(coeff) * p, m, "smallp-trees", error="first order in p")]
    elif method == "large-m":
        if n != 2:
            raise UsageError(f"large-m needs n=2, got n={n}")
        results = [analytic.bipartite_rate_large_m(m, p)]
    elif method == "simulate":
        cfg = opts.sim_config().resolved()
        res = run_full(params, cfg)
        seed = cfg.seed
        results = [
            RateEstimate.from_L(res.L_mean, m, "simulate", error=f"ci95={res.ci_half_width:.3e}")
        ]
    elif method == "bounds":
        b = analytic.multiplexing_bounds(n, m, p)
        results = [
            RateEstimate.from_L(b.lower, m, "bound-lower", error="m*<L1>"),
            RateEstimate.from_L(b.upper, m, "bound-upper", error="p*m"),
        ]
    else:
        raise UsageError(f"unknown method {method!r}")
    wall = (time.perf_counter() - t0) * 1000.0
    return [_record(params, r.method, r.L_mean, r.rate, r.error, seed, wall) for r in results]


def evaluate_safely(method: str, params: NetworkParams, opts: Options) -> list[dict]:
    """Like :func:`evaluate` but turns failures into an error record."""
    try:
        return evaluate(method, params, opts)
    except (UsageError, ParameterError, ConvergenceError, ValueError, trees.GraphError) as exc:
        return [_record(params, method, error=f"n/a: {exc}")]


# -- output -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records: Sequence[dict], fmt: str, fh) -> None:
    if fmt == "json":
        json.dump([{k: r[k] for k in COLUMNS} for r in records], fh, indent=1)
        fh.write("\n")
        return
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow([_fmt(r[k]) for k in COLUMNS])


def _emit(records: Sequence[dict], args) -> None:
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_records(records, args.format, fh)
    else:
        write_records(records, args.format, sys.stdout)


# -- argument helpers -------------------------------------------------------


def parse_axis(text: str, kind: Callable = int) -> list:
    """``"1,2,5"``, ``"1:10"`` (inclusive) or ``"0.05:0.5:0.05"``."""
    values: list = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            try:
                bits = [kind(b) for b in part.split(":")]
            except ValueError as exc:
                raise argparse.ArgumentTypeError(f"bad range {part!r}") from exc
            if len(bits) == 2:
                start, stop, step = bits[0], bits[1], kind(1)
            elif len(bits) == 3:
                start, stop, step = bits
            else:
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            if step <= 0:
                raise argparse.ArgumentTypeError(f"range step must be positive in {part!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values.extend(kind(start + i * step) if kind is int else round(start + i * step, 12) for i in range(count))
        else:
            try:
                values.append(kind(part))
            except ValueError as exc:
                raise argparse.ArgumentTypeError(f"bad value {part!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("axis needs at least one value")
    return values


def _common(parser: argparse.ArgumentParser, point: bool = True, formats: Sequence[str] = ("csv", "json")) -> None:
    if point:
        parser.add_argument("--n", type=int, help="number of parties")
        parser.add_argument(
            "--chain-segments",
            type=int,
            help="segments of an equivalent two-party repeater chain (same as --n)",
        )
        parser.add_argument("--m", type=int, required=True, help="memories per party")
        parser.add_argument("--p", type=float, required=True, help="per-link storage probability")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--rounds", type=int, default=100_000)
    parser.add_argument("--burn-in", type=int, default=1_000)
    parser.add_argument("--replicas", type=int, default=32)
    parser.add_argument("--alpha-mode", choices=["paper", "one"], default="paper")
    parser.add_argument("--solver", choices=["auto", "power", "linear"], default="auto")
    parser.add_argument("--format", choices=list(formats), default=formats[0])
    parser.add_argument("--out", default=None, help="write records to this file instead of stdout")


def _options(args) -> Options:
    seed = args.seed
    if seed is None:
        seed = SimConfig().resolved().seed
    return Options(
        seed=seed,
        rounds=args.rounds,
        burn_in=args.burn_in,
        replicas=args.replicas,
        alpha_mode=args.alpha_mode,
        solver=args.solver,
    )


def _point(args) -> NetworkParams:
    if args.n is not None and args.chain_segments is not None and args.n != args.chain_segments:
        raise UsageError("--n and --chain-segments disagree")
    n = args.n if args.n is not None else args.chain_segments
    if n is None:
        raise UsageError("one of --n or --chain-segments is required")
    return validate(NetworkParams(n, args.m, args.p))


def _announce_seed(opts: Options, used: bool) -> None:
    if used:
        print(f"# seed={opts.seed}", file=sys.stderr)


# -- commands ---------------------------------------------------------------


def cmd_rate(args) -> int:
    params = _point(args)
    opts = _options(args)
    method = args.method
    if method == "auto":
        if params.num_states <= DEFAULT_DIRECT_CAP:
            methods = ["exact"]
        else:
            methods = ["approx", "simulate"]
    else:
        methods = [method]
    records = []
    for meth in methods:
        records.extend(evaluate(meth, params, opts))
    _announce_seed(opts, "simulate" in methods)
    _emit(records, args)
    return 0


def applicable_methods(params: NetworkParams, with_sim: bool = True) -> list[str]:
    methods = []
    if params.num_states <= DEFAULT_DIRECT_CAP:
        methods.append("exact")
    if params.m == 1:
        methods.append("analytic-m1")
    methods.append("approx")
    if params.n == 2:
        methods += ["smallp-bipartite", "large-m"]
    if with_sim:
        methods.append("simulate")
    methods.append("bounds")
    return methods


def compare(params: NetworkParams, opts: Options, with_sim: bool = True) -> list[dict]:
    """Every applicable method, with deviations relative to the best reference.

    Each record gains ``rel_dev`` (vs exact, else simulate) and ``flag``.
    """
    records: list[dict] = []
    for meth in applicable_methods(params, with_sim):
        records.extend(evaluate_safely(meth, params, opts))
    values = {r["method"]: r["L_mean"] for r in records if r["L_mean"] is not None}
    ref_name = "exact" if "exact" in values else ("simulate" if "simulate" in values else None)
    ref = values.get(ref_name)
    lower, upper = values.get("bound-lower"), values.get("bound-upper")
    for r in records:
        r["rel_dev"] = None
        r["flag"] = ""
        if r["L_mean"] is None:
            continue
        if ref not in (None, 0.0):
            r["rel_dev"] = (r["L_mean"] - ref) / ref
        if r["method"].startswith("bound"):
            continue
        slack = 1e-10
        if r["method"] == "simulate":
            ci = float(r["error"].split("=")[1]) if r["error"].startswith("ci95=") else 0.0
            slack = max(slack, 1.5 * ci)  # ~3 standard errors
        if upper is not None and r["L_mean"] > upper + slack:
            r["flag"] = "ABOVE-UPPER-BOUND"
        # Approximations are not guaranteed to respect the lower bound.
        if lower is not None and r["method"] in ("exact", "simulate", "analytic-m1") and r["L_mean"] < lower - slack:
            r["flag"] = "BELOW-LOWER-BOUND"
    return records


def _table(records: Sequence[dict]) -> str:
    out = io.StringIO()
    out.write(f"{'method':<18}{'L_mean':>14}{'rate':>14}{'rel_dev':>11}  flag / error\n")
    for r in records:
        if r["L_mean"] is None:
            out.write(f"{r['method']:<18}{'n/a':>14}{'n/a':>14}{'':>11}  {r['error']}\n")
            continue
        dev = "" if r["rel_dev"] is None else f"{r['rel_dev']:+.3%}"
        note = r["flag"] or r["error"]
        out.write(f"{r['method']:<18}{r['L_mean']:>14.8f}{r['rate']:>14.8f}{dev:>11}  {note}\n")
    return out.getvalue()


def cmd_compare(args) -> int:
    params = _point(args)
    opts = _options(args)
    records = compare(params, opts, with_sim=not args.no_simulate)
    _announce_seed(opts, not args.no_simulate)
    if args.format == "table":
        text = f"n={params.n} m={params.m} p={params.p}\n" + _table(records)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(records, args)
    return 1 if any(r["flag"] for r in records) else 0


def cmd_trees(args) -> int:
    if args.n < 1 or args.m < 1:
        raise ParameterError(f"need n>=1 and m>=1, got n={args.n}, m={args.m}")
    m_values = parse_axis(args.m_range) if args.m_range else [args.m]
    rows = []
    for m in m_values:
        g = trees.build_small_p_graph(args.n, m, ordered=args.graph == "ordered")
        if args.edges:
            with open(args.edges, "w") as fh:
                g.write_edge_list(fh)
        if args.root is not None:
            root = parse_occupation(args.root) if args.root != "mm0" else tuple([m, m] + [0] * (args.n - 2))
            results = [trees.count_arborescences(g, root)]
        else:
            results = trees.arborescence_results(g) if args.stationary else [
                trees.count_arborescences(g, v) for v in g.vertices
            ]
        pi = trees.stationary_via_mctt(g) if args.stationary else {}
        for res in results:
            row = {
                "n": args.n,
                "m": m,
                "graph": args.graph,
                "root": ",".join(map(str, res.root)),
                "count": res.count,
            }
            if args.stationary:
                row["weight"] = str(res.weight_sum)
                row["probability"] = str(pi[res.root])
                row["probability_float"] = float(pi[res.root])
            rows.append(row)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if args.format == "json":
            json.dump(rows, fh, indent=1)
            fh.write("\n")
        else:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def saturation_records(n_values: Iterable[int], p_values: Iterable[float], opts: Options, threshold: float) -> list[dict]:
    out = []
    for n in n_values:
        for p in p_values:
            t0 = time.perf_counter()
            m_sat = analytic.saturation_memory(n, p, threshold) if p > 0 else 1
            params = NetworkParams(n, m_sat or 1, p)
            wall = (time.perf_counter() - t0) * 1000.0
            if m_sat is None:
                out.append(_record(params, "saturation-m", error="n/a: not reached"))
                continue
            r = analytic.general_L_approx(n, m_sat, p, opts.alpha_mode)
            out.append(_record(params, "saturation-m", r.L_mean, r.rate, f"gain<{threshold:g}", None, wall))
    return out


def run_sweep(
    n_values: Sequence[int],
    m_values: Sequence[int],
    p_values: Sequence[float],
    methods: Sequence[str],
    opts: Options,
    threshold: float = 1e-4,
    workers: int | None = None,
) -> list[dict]:
    """Cartesian product of the axes and methods, in input order."""
    for meth in methods:
        if meth not in SWEEP_METHODS:
            raise UsageError(f"unknown sweep method {meth!r}; choose from {SWEEP_METHODS}")
    cells = [
        (meth, NetworkParams(n, m, p)) for n in n_values for m in m_values for p in p_values for meth in methods
    ]
    workers = workers or int(os.environ.get("GHZRATE_THREADS", os.cpu_count() or 1))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        chunks = list(pool.map(lambda cell: evaluate_safely(cell[0], cell[1], opts), cells))
    records = [r for chunk in chunks for r in chunk]
    if "approx" in methods:
        records.extend(saturation_records(n_values, p_values, opts, threshold))
    return records


def cmd_sweep(args) -> int:
    opts = _options(args)
    methods = [s.strip() for s in args.methods.split(",") if s.strip()]
    if not methods:
        raise UsageError("at least one method is required")
    n_values = parse_axis(args.n)
    if args.chain_segments:
        n_values = parse_axis(args.chain_segments)
    records = run_sweep(
        n_values,
        parse_axis(args.m),
        parse_axis(args.p, float),
        methods,
        opts,
        threshold=args.threshold,
    )
    _announce_seed(opts, "simulate" in methods)
    _emit(records, args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghzrate",
        description="Stationary GHZ rate of a multiplexed multipartite quantum repeater.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_rate = sub.add_parser("rate", help="evaluate one method at one parameter point")
    p_rate.add_argument("--method", choices=["auto"] + RATE_METHODS, default="auto")
    _common(p_rate)
    p_rate.set_defaults(func=cmd_rate)

    p_cmp = sub.add_parser("compare", help="run every applicable method side by side")
    _common(p_cmp, formats=("table", "csv", "json"))
    p_cmp.add_argument("--no-simulate", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_tree = sub.add_parser("trees", help="arborescence counts and tree-theorem stationary law")
    p_tree.add_argument("--n", type=int, required=True)
    p_tree.add_argument("--m", type=int, default=1)
    p_tree.add_argument("--m-range", default=None, help="e.g. 1:10; overrides --m")
    p_tree.add_argument("--root", default=None, help='e.g. "2,2,0"; "mm0" means (m,m,0,...)')
    p_tree.add_argument("--graph", choices=["ordered", "unordered"], default="ordered")
    p_tree.add_argument("--stationary", action="store_true")
    p_tree.add_argument("--edges", default=None, help="write the graph as an edge list")
    p_tree.add_argument("--format", choices=["csv", "json"], default="csv")
    p_tree.add_argument("--out", default=None)
    p_tree.set_defaults(func=cmd_trees)

    p_sweep = sub.add_parser("sweep", help="Cartesian parameter sweep")
    p_sweep.add_argument("--n", default="2")
    p_sweep.add_argument("--chain-segments", default=None)
    p_sweep.add_argument("--m", required=True)
    p_sweep.add_argument("--p", required=True)
    p_sweep.add_argument("--methods", default="exact,approx")
    p_sweep.add_argument("--threshold", type=float, default=1e-4, help="saturation gain threshold")
    _common(p_sweep, point=False)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, RuntimeError, OSError) as exc:
        print(f"ghzrate: failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, argparse.ArgumentTypeError) as exc:
        # ParameterError and GraphError are ValueErrors.
        print(f"ghzrate: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

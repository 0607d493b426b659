"""``smcbench`` command line: run one experiment and write its CSV.

Options may also come from a JSON file (``--config``) whose keys mirror the
long flag names (``{"n": 1024, "p": [1, 2], "worst_case": true}``); flags
given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from . import bench

SUBCOMMANDS = ("sort", "redistribute", "pf-econ", "pf-bearing", "smcs", "multisensor", "vs-mh")

DEFAULTS: dict[str, Any] = dict(
    n=2**14,
    p=[1, 2, 4, 8],
    t=100,
    reps=20,
    seed=0,
    algo=None,
    d=[1, 4, 16, 64],
    nu=5.0,
    mu=3.0,
    eps=0.5,
    tau=None,
    out=None,
    worst_case=False,
    t_accuracy=None,
)
SUBCOMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "vs-mh": dict(n=1024, reps=10),
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcbench", description="Run one experiment and write its CSV.")
    common = argparse.ArgumentParser(add_help=False)
    # defaults stay None so we can tell which flags were given
    common.add_argument("--config", type=Path, help="JSON file of option values")
    common.add_argument("--n", type=int, help="number of particles N (power of two)")
    common.add_argument("--p", type=_int_list, help="comma-separated worker counts")
    common.add_argument("--t", type=int, help="iterations T (SMC iterations T_SMC for vs-mh)")
    common.add_argument("--reps", type=int, help="repetitions per cell")
    common.add_argument("--seed", type=int)
    common.add_argument("--algo", type=_str_list, help="comma-separated algorithm ids")
    common.add_argument("--d", type=_int_list, help="comma-separated sensor counts (multisensor)")
    common.add_argument("--nu", type=float, help="Student-t degrees of freedom")
    common.add_argument("--mu", type=float, help="Student-t location")
    common.add_argument("--eps", type=float, help="random-walk scale")
    common.add_argument("--tau", type=int, help="MH burn-in steps")
    common.add_argument("--t-accuracy", type=int, dest="t_accuracy", help="vs-mh: T_SMC for the equal-time phase")
    common.add_argument("--out", type=Path, help="CSV output path (default: <subcommand>.csv)")
    common.add_argument("--worst-case", action="store_const", const=True, dest="worst_case", help="set the ESS threshold to N")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and explicit flags (in that order)."""
    opts = dict(DEFAULTS)
    opts.update(SUBCOMMAND_DEFAULTS.get(args.command, {}))
    if args.config is not None:
        cfg = json.loads(Path(args.config).read_text())
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        for k, v in cfg.items():
            if k in ("p", "d") and not isinstance(v, list):
                v = _int_list(v)
            if k == "algo" and isinstance(v, str):
                v = _str_list(v)
            opts[k] = v
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    if opts["out"] is None:
        opts["out"] = Path(f"{args.command}.csv")
    opts["out"] = Path(opts["out"])
    return opts


def _write_table(rows: Sequence[dict[str, Any]], path: Path) -> None:
    if not rows:
        return
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _print_table(rows: Sequence[dict[str, Any]], out=None) -> None:
    if not rows:
        return
    out = out or sys.stdout
    cols = list(rows[0])

    def cell(v):
        return f"{v:.4g}" if isinstance(v, float) and math.isfinite(v) else str(v)

    print("  ".join(cols), file=out)
    for r in rows:
        print("  ".join(cell(r[c]) for c in cols), file=out)


def run(command: str, o: dict[str, Any]) -> tuple[list[bench.RunRecord], list[dict[str, Any]]]:
    if command == "sort":
        recs = bench.bench_sort(o["n"], o["p"], o["reps"], o["seed"], o["algo"] or bench.SORT_ALGOS)
        return recs, bench.summarise(recs)
    if command == "redistribute":
        recs = bench.bench_redistribute(o["n"], o["p"], o["reps"], o["seed"], o["algo"] or bench.REDISTRIBUTE_BENCH_ALGOS)
        return recs, bench.summarise(recs)
    if command in ("pf-econ", "pf-bearing", "smcs"):
        recs = []
        for algo in o["algo"] or ["NR"]:
            recs += bench.bench_sampler(
                command,
                o["n"],
                o["p"],
                o["t"],
                o["reps"],
                o["seed"],
                worst_case=bool(o["worst_case"]),
                nu=o["nu"],
                mu=o["mu"],
                eps=o["eps"],
                algo=algo,
            )
        return recs, bench.summarise(recs)
    if command == "multisensor":
        return bench.bench_multisensor(o["d"], o["n"], o["p"], o["t"], o["reps"], o["seed"], worst_case=bool(o["worst_case"]))
    if command == "vs-mh":
        cmp = bench.compare_mh(
            o["n"],
            o["t"],
            o["p"],
            o["seed"],
            reps=o["reps"],
            T_SMC_accuracy=o["t_accuracy"],
            nu=o["nu"],
            mu=o["mu"],
            eps=o["eps"],
            tau=o["tau"],
        )
        return cmp.records, cmp.table()
    raise SystemExit(f"unknown subcommand {command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    opts = resolve(args)
    records, table = run(args.command, opts)
    try:
        bench.emit_csv(records, opts["out"])
    except OSError as exc:
        print(f"smcbench: cannot write {opts['out']}: {exc}", file=sys.stderr)
        return 2
    summary = opts["out"].with_suffix(".summary.csv")
    _write_table(table, summary)
    _print_table(table)
    print(f"wrote {len(records)} records to {opts['out']} (summary: {summary})", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

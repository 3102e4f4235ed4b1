"""Command line entry point: ``fdmac run`` and ``fdmac paper``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .audit import TraceAuditor
from .engine import TRACE_HEADER, CausalityError, ConfigError, MetricsReport, Simulator
from .experiments import EXPERIMENTS
from .medium import PhyConstraintViolation
from .scenario_file import load_scenario

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2


class _Tee:
    """Trace sink that both keeps rows and audits them."""

    def __init__(self):
        self.rows = []
        self.auditor = TraceAuditor()

    def append(self, row):
        self.rows.append(row)
        self.auditor.append(row)


def write_csv(path, columns, rows) -> None:
    fh = open(path, "w", newline="") if path not in (None, "-") else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.repeats is not None:
            overrides["repeats"] = args.repeats
        if overrides:
            sc = sc.with_(**overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for r in range(sc.repeats):
        sink = _Tee()
        sim = Simulator(sc, r, sink)
        try:
            report = sim.run()
        except (PhyConstraintViolation, CausalityError) as e:
            print(f"invariant violation in repeat {r}: {e}", file=sys.stderr)
            return EXIT_INVARIANT
        bad = [f for f, (acc, gen) in sim.conservation().items() if acc != gen]
        if bad or not sink.auditor.ok:
            print(f"invariant violation in repeat {r}: conservation={bad} "
                  f"audit={sink.auditor.violations[:3]}", file=sys.stderr)
            return EXIT_INVARIANT
        rows.append(report.row())
        if args.trace and r == 0:
            names = sc.topology.names
            with open(args.trace, "w") as fh:
                fh.write(TRACE_HEADER + "\n")
                for t, n, ev, detail in sink.rows:
                    fh.write(f"{t},{names[n]},{ev},{detail}\n")
    write_csv(args.out, MetricsReport.columns(), rows)
    return EXIT_OK


def cmd_paper(args) -> int:
    which = list(EXPERIMENTS) if args.experiment == "all" else [args.experiment]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = []
    ok = True
    for name in which:
        res = EXPERIMENTS[name](jobs=args.jobs)
        write_csv(outdir / f"{name}.csv", res.columns, res.rows)
        for check, passed in res.checks.items():
            summary.append([name, check, "pass" if passed else "FAIL"])
        if name == "fd-vs-hd":
            gains = ";".join(f"{r[0]}B:{r[4]}%" for r in res.rows)
            summary.append([name, "gain_pct", gains])
        ok &= res.passed
        print(f"{name}: {'pass' if res.passed else 'FAIL'}", file=sys.stderr)
    write_csv(outdir / "summary.csv", ["experiment", "check", "result"], summary)
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdmac", description="FD-MAC full-duplex MAC simulator")
    ap.add_argument("--version", action="version", version=f"fdmac {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file and write one CSV row per repeat")
    r.add_argument("scenario", help="scenario file ([topology], [traffic], [mac], [phy], [run])")
    r.add_argument("--out", default="-", help="CSV output path (default: stdout)")
    r.add_argument("--trace", help="write the event trace of repeat 0 here")
    r.add_argument("--seed", type=int, help="override [run] seed")
    r.add_argument("--repeats", type=int, help="override [run] repeats")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("paper", help="run a canned experiment and check its acceptance band")
    p.add_argument("experiment", choices=[*EXPERIMENTS, "all"])
    p.add_argument("--outdir", default="fdmac-results", help="directory for the CSV bundle")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_paper)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

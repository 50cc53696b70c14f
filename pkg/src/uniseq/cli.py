"""Command-line entry point: ``uniseq {single,decentralized,analyze,sweep,calibrate}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .config import ConfigError, ExperimentSpec, load_spec

PLOT_TEMPLATE = '''"""Plot E_DD against P_E from a uniseq sweep CSV (needs matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
with open(path) as fh:
    rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
pts = sorted((float(r["p_e"]), float(r["e_dd"])) for r in rows if r["p_e"] not in ("", "nan"))
plt.semilogx([p for p, _ in pts], [e for _, e in pts], "o-")
plt.xlabel("P_E")
plt.ylabel("E_DD")
plt.grid(True, which="both")
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uniseq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("single", "decentralized", "analyze", "sweep", "calibrate"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment file")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--trials", type=int, help="override trials per hypothesis")
        s.add_argument("--out", help="CSV output path (default: config 'out' or stdout)")
        s.add_argument("--workers", type=int, default=1, help="worker processes")
        if name == "sweep":
            s.add_argument("--plot-script", help="also write a plotting script here")
    return p


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        spec = replace(spec, seed=args.seed)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        spec = replace(spec, trials=args.trials)
    return spec


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _summary_text(s: harness.McSummary) -> str:
    r = s.row()
    return json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                       for k, v in r.items()}, indent=2)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = _apply_overrides(load_spec(args.config), args)
        out = args.out or spec.out
        cmd = args.command
        if cmd == "decentralized" and not spec.is_network:
            raise ConfigError(f"{args.config}: decentralized needs a 'network' section")
        if cmd == "single" and spec.is_network:
            raise ConfigError(f"{args.config}: single mode does not take a 'network' section")
        if cmd in ("single", "decentralized"):
            if spec.is_network:
                exp = harness.run_decentralized(spec, args.workers)
                text = harness.csv_text(harness.network_columns(spec.network.L),
                                        harness.network_csv_rows(exp), spec, "network_trials")
                summary = exp.summary
            else:
                run = harness.run_single(spec, args.workers)
                text = harness.csv_text(harness.TRIAL_COLUMNS,
                                        harness.trial_rows(run, spec.test.variant), spec, "trials")
                summary = run.summary
            _emit(text, out)
            if summary.unreliable:
                print("warning: more than 1% of trials hit the sample cap", file=sys.stderr)
            print(_summary_text(summary), file=sys.stderr)
        elif cmd == "sweep":
            if not spec.grid:
                raise ConfigError(f"{args.config}: field 'grid': sweep needs a nonempty grid")
            rows = harness.sweep(spec, args.workers)
            cols = ["lower", "upper"] + harness.SUMMARY_COLUMNS + ["error"]
            _emit(harness.csv_text(cols, rows, spec, "sweep"), out)
            if args.plot_script:
                Path(args.plot_script).write_text(PLOT_TEMPLATE.format(csv_path=out or "sweep.csv"))
        elif cmd == "analyze":
            res = harness.analyze(spec, args.workers)
            _emit(harness.csv_text(list(res), [res], spec, "analyze"), out)
        elif cmd == "calibrate":
            cal = spec.calibrate
            if "target" not in cal:
                raise ConfigError(f"{args.config}: field 'calibrate.target': missing")
            c = harness.calibrate_thresholds(spec, float(cal["target"]),
                                             int(cal.get("hypothesis", 0)),
                                             side=cal.get("side", "symmetric"))
            row = {"threshold": c.threshold, "achieved": c.achieved, "ci_lo": c.ci[0],
                   "ci_hi": c.ci[1], "trials": c.trials, "iterations": c.iterations,
                   "converged": int(c.converged), "mean_n": c.mean_n}
            _emit(harness.csv_text(list(row), [row], spec, "calibrate"), out)
            if not c.converged:
                print("calibration did not converge", file=sys.stderr)
                return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except harness.CalibrationError as exc:
        print(f"calibration failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

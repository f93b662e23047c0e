"""Command-line front end: ``asyncea optimize|walk|grid|sync-compare``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from asyncea import __version__
from asyncea import config as configmod
from asyncea.analysis import config_hash, feature_performance_study, normalization_constant, run_grid
from asyncea.engine import LocalTransport, run_ea, run_sync_baseline
from asyncea.landscape import features_from_walk, random_walk
from asyncea.problems import NKLandscape, Quantized
from asyncea.search_space import ConfigurationError, format_candidate

logger = logging.getLogger("asyncea")

OUTPUT_ENV = "ASYNCEA_OUTPUT_DIR"

TRACE_GP = """\
# best fitness against received evaluations
set datafile separator ","
set key autotitle columnhead
set xlabel "evaluations"
set ylabel "best fitness"
plot "{trace}" every ::1 using 1:4 with steps title "best fitness"
"""

FEATURES_GP = """\
set datafile separator ","
set key autotitle columnhead
set multiplot layout 1,2
set xlabel "r"
set ylabel "neutral rate"
plot "{study}" using 2:3 with points title "nr"
set ylabel "autocorrelation length"
plot "{study}" using 2:4 with points title "tau"
unset multiplot
"""

SCATTER_GP = """\
set datafile separator ","
set key autotitle columnhead
set multiplot layout 1,2
set ylabel "mean normalized best fitness"
set xlabel "neutral rate"
plot "{study}" using 3:5 with points title ""
set xlabel "autocorrelation length"
plot "{study}" using 4:5 with points title ""
unset multiplot
"""


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", "-c", help="TOML configuration file")
    p.add_argument("--problem", help="nroo-surrogate | nk | separable | constant")
    p.add_argument("--nk-n", type=int)
    p.add_argument("--nk-k", type=int)
    p.add_argument("--nk-seed", type=int)
    p.add_argument("--grain", type=float, help="quantization step of the fitness")
    p.add_argument("--grain-relative", type=float, help="quantization step relative to the reference fitness")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--virtual-hours", type=float)
    p.add_argument("--evaluations", type=int, help="evaluation budget instead of a time budget")
    p.add_argument("--p", type=float, help="mutation rate")
    p.add_argument("--r", type=float, help="mutation range width")
    p.add_argument("--min-delta", type=int)
    p.add_argument("--crash-prob", type=float)
    p.add_argument("--output-dir", "-o")
    p.add_argument("--verbose", "-v", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncea", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run the asynchronous EA once")
    _add_common(p)
    p.add_argument("--mode", choices=["simulated", "local"])

    p = sub.add_parser("walk", help="random walk and landscape features")
    _add_common(p)
    p.add_argument("--length", type=int, help="walk length")
    p.add_argument("--walk-seed", type=int)

    p = sub.add_parser("grid", help="mutation-parameter grid and feature study")
    _add_common(p)
    p.add_argument("--length", type=int, help="walk length")
    p.add_argument("--repeats", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--p-values", type=float, nargs="+")
    p.add_argument("--r-values", type=float, nargs="+")

    p = sub.add_parser("sync-compare", help="asynchronous vs round-based throughput")
    _add_common(p)
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    ov = {
        "problem.name": get("problem"),
        "problem.nk_n": get("nk_n"),
        "problem.nk_k": get("nk_k"),
        "problem.nk_seed": get("nk_seed"),
        "problem.grain": get("grain"),
        "problem.grain_relative": get("grain_relative"),
        "engine.seed": get("seed"),
        "engine.workers": get("workers"),
        "engine.virtual_hours": get("virtual_hours"),
        "engine.max_evaluations": get("evaluations"),
        "engine.crash_prob": get("crash_prob"),
        "engine.mode": get("mode"),
        "mutation.p": get("p"),
        "mutation.r": get("r"),
        "mutation.min_delta": get("min_delta"),
        "analysis.walk_length": get("length"),
        "analysis.walk_seed": get("walk_seed"),
        "analysis.repeats": get("repeats"),
        "analysis.base_seed": get("base_seed"),
        "analysis.p_values": get("p_values"),
        "analysis.r_values": get("r_values"),
    }
    if get("evaluations") is not None and get("virtual_hours") is None:
        ov["engine.virtual_hours"] = 0.0
    return ov


def _output_dir(args, conf) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(conf["analysis"]["output_dir"])


def _header(command: str, digest: str) -> list:
    return [f"asyncea {__version__} {command}", f"config_hash {digest}"]


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _summary(path: Path, data: dict, digest: str):
    data = {"config_hash": digest, **data}
    _write_text(path, json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def cmd_optimize(exp, out: Path, digest: str) -> int:
    transport = LocalTransport(exp.run) if exp.conf["engine"]["mode"] == "local" else None
    trace = run_ea(exp.run, exp.problem, transport)
    out.mkdir(parents=True, exist_ok=True)
    header = _header("optimize", digest)
    trace.to_csv(out / "trace.csv", header)
    with open(out / "best.csv", "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        if trace.best_x is not None:
            fh.write(format_candidate(trace.best_x) + "\n")
    _write_text(out / "trace.gp", TRACE_GP.format(trace=out / "trace.csv"))
    norm = normalization_constant(exp.problem)
    summary = {
        "problem": exp.problem.name,
        "best_fitness": trace.best_fitness,
        "normalized_best": None if trace.best_fitness is None else trace.best_fitness / norm,
        "normalizer": norm,
        "evaluations": trace.n_evaluations,
        "crashes": trace.n_crashes,
        "best_updates": trace.n_best_updates,
        "strict_improvements": trace.n_strict_improvements,
        "saturations": trace.n_saturations,
        "truncated": trace.truncated,
    }
    inner = exp.problem.inner if isinstance(exp.problem, Quantized) else exp.problem
    if isinstance(inner, NKLandscape) and inner.N <= 20:
        summary["global_optimum"] = float(inner.enumerate_all().min())
    _summary(out / "summary.json", summary, digest)
    print(f"best fitness {trace.best_fitness} (normalized {summary['normalized_best']}) "
          f"after {trace.n_evaluations} evaluations, {trace.n_crashes} crashes")
    return 0


def cmd_walk(exp, out: Path, digest: str) -> int:
    a = exp.analysis
    walk = random_walk(exp.problem, exp.mutation, int(a["walk_length"]), int(a["walk_seed"]))
    feats = features_from_walk(walk)
    out.mkdir(parents=True, exist_ok=True)
    header = _header("walk", digest)
    walk.to_csv(out / "walk.csv", header)
    with open(out / "features.csv", "w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(feats.CSV_HEADER)
        w.writerow(feats.csv_row())
    print(f"nr={feats.nr:.4f} tau={feats.tau} (saturated={feats.tau_saturated}) epsilon={feats.epsilon}")
    return 0


def cmd_grid(exp, out: Path, digest: str) -> int:
    a = exp.analysis
    grid = run_grid(exp.problem, [float(v) for v in a["p_values"]], [float(v) for v in a["r_values"]],
                    int(a["repeats"]), int(a["base_seed"]), exp.run)
    study = feature_performance_study(exp.problem, grid, int(a["walk_length"]),
                                      [int(s) for s in a["walk_seeds"]], exp.mutation)
    out.mkdir(parents=True, exist_ok=True)
    header = _header("grid", digest)
    grid.to_csv(out / "grid.csv", header)
    study.to_csv(out / "study.csv", header)
    _write_text(out / "features.gp", FEATURES_GP.format(study=out / "study.csv"))
    _write_text(out / "scatter.gp", SCATTER_GP.format(study=out / "study.csv"))
    lines = [grid.summary_table(), ""]
    for rep in (study.nr_report, study.tau_report):
        if rep is None:
            continue
        lines.append(f"{rep.label}: pearson={rep.pearson:.4f} spearman={rep.spearman:.4f} "
                     f"slope={rep.slope:.6g} intercept={rep.intercept:.6g} r2={rep.r_squared:.4f}"
                     + (" (degenerate)" if rep.degenerate else ""))
    if study.degenerate:
        lines.append("study is degenerate: too few distinct settings to correlate")
    text = "\n".join(lines) + "\n"
    _write_text(out / "summary.txt", text)
    print(text, end="")
    return 0


def cmd_sync_compare(exp, out: Path, digest: str) -> int:
    async_trace = run_ea(exp.run, exp.problem)
    sync_trace = run_sync_baseline(exp.run, exp.problem)
    out.mkdir(parents=True, exist_ok=True)
    header = _header("sync-compare", digest)
    async_trace.to_csv(out / "trace_async.csv", header)
    sync_trace.to_csv(out / "trace_sync.csv", header)
    with open(out / "compare.csv", "w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "evaluations", "crashes", "best_fitness"])
        for mode, t in (("async", async_trace), ("sync", sync_trace)):
            w.writerow([mode, t.n_evaluations, t.n_crashes, "" if t.best_fitness is None else repr(t.best_fitness)])
    print(f"async {async_trace.n_evaluations} evaluations, sync {sync_trace.n_evaluations}")
    return 0


COMMANDS = {
    "optimize": cmd_optimize,
    "walk": cmd_walk,
    "grid": cmd_grid,
    "sync-compare": cmd_sync_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = configmod.load(args.config, _overrides(args))
        exp = configmod.build(conf)
    except ConfigurationError as exc:
        print(f"asyncea: configuration error: {exc}", file=sys.stderr)
        return 2
    out = _output_dir(args, conf)
    digest = config_hash({"command": args.command, "conf": conf})
    return COMMANDS[args.command](exp, out, digest)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

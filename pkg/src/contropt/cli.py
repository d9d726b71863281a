"""Command-line interface: ``contropt run``, ``contropt bench`` and ``contropt list``.

Exit codes are 0 on success, 1 for usage errors and 2 for failures while
running.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict

import numpy as np

from .bench import BenchmarkReport, run_benchmark, step_values
from .contraction import RunConfig, RunResult, run
from .errors import ControptError, EvaluationError
from .objectives import REGISTRY, get_objective

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CSV_COLUMNS = ("eval_index", "f_best", "gap", "level", "model_size")
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contropt", description="Global minimization by domain contraction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--problem", required=True, help="registered objective name (see `list`)")
        p.add_argument("--dim", type=int, default=None, help="search dimension, where adjustable")
        p.add_argument("--config", default=None, help="TOML file of run settings")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    common(sub.add_parser("run", help="a single optimization run"))
    bench = sub.add_parser("bench", help="repeated runs over consecutive seeds")
    common(bench)
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--baselines", default="", help="comma list drawn from: random, grid")
    sub.add_parser("list", help="show the objective registry")
    return parser


def load_config(path: str | None, seed: int | None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from None
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.from_dict(data)
    except (ControptError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _clean(obj):
    """Make a value JSON-safe: arrays become lists, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _trace_rows(trace, f_star):
    for p in trace:
        gap = "" if f_star is None else repr(p.f_best - f_star)
        yield (p.eval_index, repr(p.f_best), gap, p.level, p.model_size)


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def _trace_dict(trace, f_star):
    return [{"eval_index": p.eval_index, "f_best": p.f_best,
             "gap": None if f_star is None else p.f_best - f_star,
             "level": p.level, "model_size": p.model_size} for p in trace]


def format_run(result: RunResult, config: RunConfig, spec, fmt: str) -> str:
    if fmt == "csv":
        return _csv(_trace_rows(result.trace, spec.f_star))
    payload = {
        "config": {**config.to_dict(), "problem": spec.name, "dim": spec.dim},
        "records": [asdict(r) for r in result.records],
        "trace": _trace_dict(result.trace, spec.f_star),
        "termination": result.termination,
    }
    return json.dumps(_clean(payload), sort_keys=True, indent=1) + "\n"


def format_bench(report: BenchmarkReport, spec, fmt: str) -> str:
    agg = report.aggregate
    if fmt == "csv":
        # one row per evaluation count: the median best value and median gap across runs
        ref = 0.0 if spec.f_star is None else spec.f_star
        levels = _median_column(report, "level", len(agg.eval_index))
        sizes = _median_column(report, "model_size", len(agg.eval_index))
        rows = ((int(i), repr(float(g + ref)), "" if spec.f_star is None else repr(float(g)), lv, sz)
                for i, g, lv, sz in zip(agg.eval_index, agg.median, levels, sizes))
        return _csv(rows)
    payload = {
        "config": {**report.config, "problem": spec.name, "dim": spec.dim},
        "seeds": list(report.seeds),
        "records": [[asdict(r) for r in run.records] for run in report.runs],
        "trace": [_trace_dict(run.trace, spec.f_star) for run in report.runs],
        "termination": [run.termination for run in report.runs],
        "aborted": [run.aborted for run in report.runs],
        "aggregate": _agg_dict(agg),
        "baselines": {k: _agg_dict(v) for k, v in report.baselines.items()},
    }
    return json.dumps(_clean(payload), sort_keys=True, indent=1) + "\n"


def _agg_dict(agg):
    return {"eval_index": agg.eval_index, "median": agg.median, "q25": agg.q25,
            "q75": agg.q75, "mean": agg.mean}


def _median_column(report, attr, length):
    axis = np.arange(1, length + 1)
    cols = [step_values([p.eval_index for p in r.trace], [getattr(p, attr) for p in r.trace], axis)
            for r in report.runs if r.trace]
    med = np.nanmedian(np.vstack(cols), axis=0) if cols else np.empty(0)
    return [int(v) for v in np.floor(med)]


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _cmd_list() -> str:
    lines = []
    for name in sorted(REGISTRY):
        spec = get_objective(name)
        lo, hi = spec.lower, spec.upper
        box = f"[{lo.min():g}, {hi.max():g}]^{spec.dim}" if np.ptp(lo) == 0 and np.ptp(hi) == 0 \
            else " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(lo, hi))
        fstar = "unknown" if spec.f_star is None else f"{spec.f_star:g}"
        lines.append(f"{name:<11} dim={spec.dim:<3} f*={fstar:<10} box={box}  {spec.description}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list":
            sys.stdout.write(_cmd_list())
            return EXIT_OK
        try:
            spec = get_objective(args.problem, args.dim)
        except ControptError as exc:
            raise UsageError(str(exc)) from None
        config = load_config(args.config, args.seed)
        if args.command == "bench":
            if args.repeats < 1:
                raise UsageError("--repeats must be >= 1")
            baselines = tuple(b for b in args.baselines.split(",") if b)
            if set(baselines) - {"random", "grid"}:
                raise UsageError(f"unknown baselines in {args.baselines!r}")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        if args.command == "run":
            text = format_run(run(config, spec.func, spec.box), config, spec, args.format)
        else:
            report = run_benchmark(spec, config, args.repeats, baselines=baselines)
            text = format_bench(report, spec, args.format)
        _emit(text, args.out)
    except EvaluationError as exc:
        print(f"contropt: evaluation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ControptError, OSError) as exc:
        print(f"contropt: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


cli_main = main

if __name__ == "__main__":
    sys.exit(main())

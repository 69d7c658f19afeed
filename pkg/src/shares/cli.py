"""``shares`` command line.

Exit codes: 0 success, 2 bad input, 3 analysis could not read the curve,
4 training diverged.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import analysis, closedform, datasets, evaluator, search
from .config import load_config
from .errors import (
    ConfigError,
    DegenerateTarget,
    DomainError,
    NonFiniteGradient,
    NonFiniteOutput,
    NoSegments,
    ParseError,
    PatternMismatch,
    SchemaError,
    TrainingDiverged,
    UnknownDataset,
    UnknownEquation,
    UnknownShape,
    ValidationFailed,
)
from .expr import validate_transparent
from .kernels import BACKEND

EXIT_OK, EXIT_INPUT, EXIT_ANALYSIS, EXIT_DIVERGED = 0, 2, 3, 4

_INPUT_ERRORS = (ParseError, SchemaError, DomainError, UnknownEquation, UnknownDataset,
                 ValidationFailed, ConfigError, UnknownShape, DegenerateTarget, OSError, ValueError)
_ANALYSIS_ERRORS = (PatternMismatch, NoSegments)
_DIVERGENCE_ERRORS = (TrainingDiverged, NonFiniteOutput, NonFiniteGradient)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Manifest:
    """Collects what is needed to rerun a command; written once at the end."""

    def __init__(self, command, argv):
        self.doc = {"command": command, "argv": list(argv), "backend": BACKEND,
                    "inputs": {}, "outputs": [], "config": None, "seeds": {}}
        self._t0 = time.perf_counter()

    def input(self, path):
        self.doc["inputs"][str(path)] = _sha256(path)

    def output(self, path):
        self.doc["outputs"].append(str(path))

    def write(self, path):
        self.doc["wall_clock_seconds"] = round(time.perf_counter() - self._t0, 3)
        _atomic_write(path, json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _config(args):
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    return cfg


def _shape_svgs(model, out_dir, stem, n_points=400):
    paths = []
    if model.n_shapes == 0 or any(s.input_range is None for s in model.shapes):
        return paths
    for sid in range(model.n_shapes):
        trace = analysis.sample_shape(model, sid, n_points)
        path = os.path.join(out_dir, f"{stem}_s{sid + 1}.svg")
        analysis.plot_svg([trace], [f"s{sid + 1}"], path, title=f"s{sid + 1} in {model.expression}")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(args, manifest):
    ds = datasets.make_dataset(args.dataset, args.n, args.seed, args.noise_std)
    datasets.csv_write(ds, args.out)
    manifest.doc["seeds"] = {"data": args.seed}
    manifest.doc["config"] = {"dataset": args.dataset, "n": ds.n_rows, "noise_std": args.noise_std}
    manifest.output(args.out)
    manifest.write(f"{args.out}.manifest.json")
    print(f"wrote {ds.n_rows} rows to {args.out}")


def cmd_fit(args, manifest):
    ds = datasets.csv_read(args.data)
    manifest.input(args.data)
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)

    def progress(gen, best):
        print(f"generation {gen}: best {best.canonical_key}  R2={best.val_r2:.5f}", flush=True)

    result = search.evolve(ds, cfg, progress=None if args.quiet else progress)
    meta = {"search": cfg.to_dict(), "n_trainings": result.n_trainings,
            "n_evaluated": len(result.evaluated), "columns": list(ds.column_names)}
    for name in search.write_run(args.out, result.report, meta):
        manifest.output(os.path.join(args.out, name))
    for p in result.report:
        if p.fitted is not None:
            for path in _shape_svgs(p.fitted, args.out, f"model_{p.n_shapes}shapes"):
                manifest.output(path)
    manifest.doc["config"] = cfg.to_dict()
    manifest.doc["seeds"] = {"search": cfg.seed}
    manifest.write(os.path.join(args.out, "manifest.json"))
    for row in result.report.table():
        print(f"{row['shape_count']:>3}  R2={row['val_r2']:.5f}  {row['expression']}")


def cmd_fit_fixed(args, manifest):
    ds = datasets.csv_read(args.data)
    manifest.input(args.data)
    cfg = _config(args)
    tree = closedform.parse_share(args.expression, ds.column_names)
    closedform.check_columns(tree, ds.column_names)
    verdict = validate_transparent(tree)
    if not verdict.is_transparent:
        raise ValidationFailed(verdict)
    os.makedirs(args.out, exist_ok=True)
    prog = search.score_program(tree, ds, cfg.inner, cfg.seed)
    if prog.error:
        if "Diverged" in prog.error or "NonFinite" in prog.error:
            raise TrainingDiverged(prog.error)
        raise ValueError(prog.error)
    report = search.FrontierReport({prog.n_shapes: prog})
    meta = {"expression": args.expression, "search_seed": cfg.seed,
            "training": cfg.to_dict()["inner"], "columns": list(ds.column_names)}
    for name in search.write_run(args.out, report, meta):
        manifest.output(os.path.join(args.out, name))
    metrics = {"expression": prog.canonical_key, "val_r2": prog.val_r2, "val_mse": prog.val_mse,
               "learning_rate": prog.learning_rate, "n_shapes": prog.n_shapes}
    _atomic_write(os.path.join(args.out, "metrics.json"), json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    manifest.output(os.path.join(args.out, "metrics.json"))
    for path in _shape_svgs(prog.fitted, args.out, f"model_{prog.n_shapes}shapes"):
        manifest.output(path)
    manifest.doc["config"] = cfg.to_dict()
    manifest.doc["seeds"] = {"search": cfg.seed, "training": search.program_seed(prog.canonical_key, cfg.seed)}
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(f"R2={prog.val_r2:.6f}  MSE={prog.val_mse:.6g}  {prog.canonical_key}")


def cmd_check(args, manifest):
    if args.expr:
        equations = [(f"expr{k}", text) for k, text in enumerate(args.expr, start=1)]
    elif args.corpus:
        with open(args.corpus, encoding="utf-8") as fh:
            equations = closedform.read_corpus(fh)
        manifest.input(args.corpus)
    else:
        equations = datasets.default_corpus()
    result = closedform.census(equations, args.max_substitutions)
    lines = [",".join(closedform.CENSUS_COLUMNS)]
    for row in closedform.census_rows(result):
        lines.append(",".join(search.csv_field(row[c]) for c in closedform.CENSUS_COLUMNS))
    text = "\n".join(lines) + "\n"
    summary = (f"total={result.n_total} direct={result.n_direct} "
               f"after_rewrites={result.n_after_rewrites}")
    if args.out:
        _atomic_write(args.out, text)
        manifest.output(args.out)
        manifest.doc["config"] = {"max_substitutions": args.max_substitutions}
        manifest.write(f"{args.out}.manifest.json")
        print(summary)
    else:
        sys.stdout.write(text)
        print(summary, file=sys.stderr)


def cmd_extract(args, manifest):
    model = evaluator.load_model(args.model)
    manifest.input(args.model)
    sid = args.shape - 1
    trace = analysis.sample_shape(model, sid, args.n_points)
    dec = analysis.detect_segments(trace, args.plateau_slope_threshold, args.min_segment_width)
    est = analysis.extract_water_properties(dec)
    truth = datasets.WATER
    report = {
        "model": str(args.model),
        "shape": f"s{args.shape}",
        "pattern": dec.pattern,
        "segments": [
            {"kind": s.kind, "x_start": s.x_start, "x_end": s.x_end, "slope": s.slope, "level": s.level}
            for s in dec.segments
        ],
        "estimates": est.as_dict(),
        "ground_truth": {k: getattr(truth, k) for k in est.as_dict()},
        "relative_error": est.relative_errors(truth),
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(args.out, text)
        manifest.output(args.out)
        manifest.doc["config"] = {"shape": args.shape, "n_points": args.n_points,
                                  "plateau_slope_threshold": args.plateau_slope_threshold,
                                  "min_segment_width": args.min_segment_width}
        manifest.write(f"{args.out}.manifest.json")
    for k, v in est.as_dict().items():
        print(f"{k:>9} = {v:9.4f}   truth {getattr(truth, k):9.4f}   "
              f"error {100 * report['relative_error'][k]:+6.2f}%")


# ---------------------------------------------------------------------------


def _add_run_options(p):
    p.add_argument("--config", help="config file with [search] / [training] sections")
    p.add_argument("--preset", choices=["full", "reduced"],
                   help="built-in population/epoch budget, applied before --config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shares", description="Search, fit and analyse shape arithmetic expressions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("dataset", help="temperature, risk_scores or eq:<id>")
    p.add_argument("--n", type=int, help="number of rows (default depends on dataset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="run the GP search and write the frontier")
    p.add_argument("data", help="CSV with a final 'target' column")
    _add_run_options(p)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallel fitness evaluations (default: number of cores)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-fixed", help="train the shapes of one given expression")
    p.add_argument("data")
    p.add_argument("expression", help='e.g. "s1(E/m + s2(t0))"')
    _add_run_options(p)
    p.set_defaults(func=cmd_fit_fixed)

    p = sub.add_parser("check", help="which closed-form equations are expressible as transparent SHAREs")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="file with one 'name :: expression' per line")
    src.add_argument("--expr", action="append", help="inline expression (repeatable)")
    p.add_argument("--max-substitutions", type=int, default=2)
    p.add_argument("--out", help="verdict CSV (default: stdout)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("extract", help="read the properties of water off a fitted shape")
    p.add_argument("model", help="model JSON written by fit or fit-fixed")
    p.add_argument("--shape", type=int, default=1, help="shape label k of s<k> (default 1)")
    p.add_argument("--n-points", type=int, default=400)
    p.add_argument("--plateau-slope-threshold", type=float, default=0.1)
    p.add_argument("--min-segment-width", type=int, default=5)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    manifest = Manifest(args.command, argv)
    try:
        args.func(args, manifest)
    except _ANALYSIS_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except _DIVERGENCE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

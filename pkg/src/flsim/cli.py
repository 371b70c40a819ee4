"""Command-line runner: single runs, grid sweeps and cross-run reports.

    flsim run --config exp.json --out runs/a
    flsim sweep --config sweep.json --out runs/grid --jobs 4
    flsim report runs/a runs/b --check --out runs/report
    flsim presets

``--config`` also accepts the name of a bundled preset. Setting FLSIM_SEED
overrides ``fl.seed`` of every experiment the command runs.
"""
import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .config import ExperimentFile, dumps, from_dict, set_path
from .errors import ConfigError, FLSimError
from .models import Metrics
from .orchestrator import METRIC_NAMES, RoundRecord, run_file, summarize

log = logging.getLogger("flsim")

ROUND_COLUMNS = ("round", "accuracy", "precision", "recall", "f1", "n_selected", "n_malicious", "wall_time_ms")
SWEEP_CAP = 256
SEED_ENV = "FLSIM_SEED"


# ---------------------------------------------------------------------------
# config loading


def preset_names():
    root = resources.files("flsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_config_json(ref):
    """Parse a config path or bundled preset name into a plain dict."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    elif ref in preset_names():
        text = (resources.files("flsim") / "presets" / f"{ref}.json").read_text(encoding="utf-8")
    else:
        raise ConfigError(f"no such config file or preset: {ref}")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{ref} is not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{ref} must hold a JSON object")
    return obj


def apply_seed_env(obj):
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return obj
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return set_path(obj, "fl.seed", seed)


def parse_experiment(obj):
    return from_dict(ExperimentFile, apply_seed_env(obj))


# ---------------------------------------------------------------------------
# run


def write_rounds(records, path, timing=False):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for rec in records:
            w.writerow(rec.to_row(include_timing=timing))


def read_rounds(path):
    """RoundRecords back from rounds.csv (selected ids are not stored)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROUND_COLUMNS:
            raise FLSimError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            try:
                metrics = None
                if row["accuracy"] != "":
                    vals = [float(row[k]) for k in METRIC_NAMES]
                    metrics = Metrics(*vals, 0, 0, 0, 0, False)
                records.append(
                    RoundRecord(
                        int(row["round"]),
                        tuple(range(int(row["n_selected"]))),
                        metrics,
                        False,
                        int(row["n_malicious"]),
                        float(row["wall_time_ms"] or 0.0),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise FLSimError(f"{path}: bad row {reader.line_num} ({exc})") from None
    return records


def execute(exp, out_dir, timing=False):
    """Run one experiment and write its three output files; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_file(exp)
    write_rounds(result.records, out / "rounds.csv", timing)
    summary = {"name": exp.name, **result.summary(include_timing=timing)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "config.json").write_text(dumps(exp), encoding="utf-8")
    return summary


def cmd_run(args):
    obj = read_config_json(args.config)
    if "axes" in obj:
        raise ConfigError("this is a sweep file; use the sweep command", "axes")
    exp = parse_experiment(obj)
    summary = execute(exp, args.out, args.timing)
    acc = summary["last10_mean"]["accuracy"]
    print(f"{exp.name}: last-10 accuracy {acc:.4f}, converged_at {summary['converged_at']} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def expand_grid(axes, cap=SWEEP_CAP):
    """Cartesian product of ``axes`` (dotted path -> values), in key order."""
    if not isinstance(axes, dict):
        raise ConfigError("must map parameter paths to value lists", "axes")
    keys = list(axes)
    for k in keys:
        if not isinstance(axes[k], list) or not axes[k]:
            raise ConfigError("must be a non-empty list", f"axes.{k}")
    size = math.prod(len(axes[k]) for k in keys)
    if size > cap:
        raise ConfigError(f"grid has {size} points, above the cap of {cap} (raise max_runs to allow it)", "axes")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def _sweep_worker(job):
    exp_obj, out_dir, timing = job
    try:
        exp = from_dict(ExperimentFile, exp_obj)
        return execute(exp, out_dir, timing), None
    except FLSimError as exc:
        return None, str(exc)


def _cell(v):
    return json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) or v is None else v


def cmd_sweep(args):
    spec = read_config_json(args.config)
    unknown = sorted(set(spec) - {"base", "axes", "baseline", "max_runs"})
    if unknown:
        raise ConfigError("unknown key", unknown[0])
    base = spec.get("base", {})
    if isinstance(base, str):
        base = read_config_json(base)
    base = apply_seed_env(base)
    from_dict(ExperimentFile, base)  # validate the base before any run starts
    grid = expand_grid(spec.get("axes", {}), spec.get("max_runs", SWEEP_CAP))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    if len(grid) == 1 and not grid[0]:
        jobs.append((base, out, args.timing))
        names = ["."]
    else:
        names = [f"run_{i:03d}" for i in range(len(grid))]
        for name, point in zip(names, grid):
            obj = base
            for path, value in point.items():
                obj = set_path(obj, path, value)
            jobs.append((obj, out / name, args.timing))
    baseline_job = None
    if "baseline" in spec:
        obj = base
        for path, value in spec["baseline"].items():
            obj = set_path(obj, path, value)
        baseline_job = (obj, out / "baseline", args.timing)

    all_jobs = jobs + ([baseline_job] if baseline_job else [])
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, all_jobs))
    else:
        results = [_sweep_worker(j) for j in all_jobs]

    baseline_acc = None
    if baseline_job:
        b_summary, b_err = results.pop()
        if b_err:
            print(f"baseline failed: {b_err}", file=sys.stderr)
        else:
            baseline_acc = b_summary["last10_mean"]["accuracy"]

    axis_keys = list(grid[0])
    header = ["run", *axis_keys, *METRIC_NAMES, "last10_accuracy", "converged_at", "ACC_STD", "PRE_STD", "REC_STD", "impact", "status"]
    n_ok = 0
    with open(out / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, point, (summary, err) in zip(names, grid, results):
            axis_vals = [_cell(point[k]) for k in axis_keys]
            if err:
                print(f"{name} failed: {err}", file=sys.stderr)
                w.writerow([name, *axis_vals, *[""] * (len(header) - 2 - len(axis_keys)), f"error: {err}"])
                continue
            n_ok += 1
            acc = summary["last10_mean"]["accuracy"]
            inst = summary["instability"]
            impact = "" if baseline_acc is None else baseline_acc - acc
            w.writerow(
                [name, *axis_vals, *[summary["final"][k] for k in METRIC_NAMES], acc, _cell(summary["converged_at"]),
                 inst["ACC_STD"], inst["PRE_STD"], inst["REC_STD"], impact, "ok"]
            )
    print(f"{n_ok}/{len(grid)} runs ok -> {out / 'sweep_summary.csv'}")
    return 0 if n_ok else 1


# ---------------------------------------------------------------------------
# report


def load_run(run_dir):
    d = Path(run_dir)
    path = d / "summary.json"
    try:
        summary = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FLSimError(f"{path}: missing") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FLSimError(f"{path}: corrupt ({exc})") from None
    needed = ("converged_at", "final", "last10_mean", "instability")
    if not isinstance(summary, dict) or any(k not in summary for k in needed):
        raise FLSimError(f"{path}: corrupt (missing one of {needed})")
    return summary


def check_run(run_dir, summary):
    """Recompute every summary number from rounds.csv; returns mismatching keys."""
    d = Path(run_dir)
    cfg = json.loads((d / "config.json").read_text(encoding="utf-8"))
    records = read_rounds(d / "rounds.csv")
    again = summarize(records, cfg["fl"]["patience"]).summary()
    bad = []
    for key in ("n_rounds", "converged_at", "final", "last10_mean", "last10_std", "instability", "last10_window_short"):
        if summary.get(key) != again[key]:
            bad.append(key)
    return bad


def cmd_report(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for run_dir in args.dirs:
        summary = load_run(run_dir)
        if args.check:
            bad = check_run(run_dir, summary)
            if bad:
                raise FLSimError(f"{Path(run_dir) / 'summary.json'}: disagrees with rounds.csv on {', '.join(bad)}")
        runs.append((run_dir, summary))

    labels = []
    for i, (run_dir, _) in enumerate(runs):
        stem = Path(run_dir).resolve().name or f"run{i}"
        labels.append(f"{i:02d}_{stem}")
    first_conv = runs[0][1]["converged_at"]
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "dir", "name", *METRIC_NAMES, "last10_accuracy", "converged_at",
                    "rounds_to_converge_delta", "ACC_STD", "PRE_STD", "REC_STD"])
        for label, (run_dir, s) in zip(labels, runs):
            conv = s["converged_at"]
            delta = "" if conv is None or first_conv is None else conv - first_conv
            final = s["final"] or {}
            w.writerow([label, str(run_dir), s.get("name", ""), *[final.get(k, "") for k in METRIC_NAMES],
                        s["last10_mean"]["accuracy"], _cell(conv), delta,
                        s["instability"]["ACC_STD"], s["instability"]["PRE_STD"], s["instability"]["REC_STD"]])
    for label, (run_dir, _) in zip(labels, runs):
        records = read_rounds(Path(run_dir) / "rounds.csv")
        with open(out / f"{label}_accuracy.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "accuracy"])
            for r in records:
                if r.metrics is not None:
                    w.writerow([r.round, r.metrics.accuracy])
    print(f"{len(runs)} runs -> {out / 'comparison.csv'}")
    return 0


def cmd_presets(args):
    if args.show:
        print(json.dumps(read_config_json(args.show), indent=2))
        return 0
    for name in preset_names():
        obj = read_config_json(name)
        kind = "sweep" if "axes" in obj else "run"
        desc = obj.get("description") or obj.get("base", {}).get("description", "")
        print(f"{name:24s} {kind:5s} {desc}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="flsim", description="Deterministic federated-learning simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True, help="experiment JSON path or preset name")
    r.add_argument("--out", required=True)
    r.add_argument("--timing", action="store_true", help="record wall time (makes outputs non-reproducible)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of experiments")
    s.add_argument("--config", required=True, help="sweep JSON path or preset name")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--timing", action="store_true")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="compare finished runs")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--check", action="store_true", help="verify summaries against rounds.csv")
    rep.add_argument("--out", default="report")
    rep.set_defaults(func=cmd_report)

    pr = sub.add_parser("presets", help="list bundled presets")
    pr.add_argument("--show", metavar="NAME")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FLSimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points for reproducible experiments.

Subcommands::

    fccovnet fccov       statistic (and permutation p-value) for score/response files
    fccovnet train       fit a network to predictor + response files, write a checkpoint
    fccovnet evaluate    apply a checkpoint to new data, write predictors and metrics
    fccovnet benchmark   run seeded simulation replicates and write a report

File formats are minimal and self-describing.  Predictor files and
Euclidean response files are headerless CSV (one row per sample).  Other
response files start with a one-line header:

    grid=G              quantile grids, n rows of G values
    spd m=M             SPD matrices, n rows of M*M values (row-major)
    simplex C=C         probability vectors, n rows of C values
    distance-matrix     precomputed distances, n rows of n values

Config and benchmark specs use INI-style ``key = value`` sections.  Exit
codes: 0 success, 2 usage or parse failure, 3 numerical failure, 4 at
least one benchmark replicate failed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import dataclasses
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .datagen import SimulationSpec, simulate, simulate_test
from .errors import NumericalError
from .evaluation import distance_correlation, kappa_distance
from .fccov import fccov_statistic, permutation_independence_test
from .metrics import DistanceMatrix, ResponseSet, pairwise_distances
from .networks import CnnSpec, FnnSpec, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, component_statistics, default_architecture, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4

RESPONSE_DEFAULT_METRICS = {
    "euclidean-vectors": "euclidean",
    "quantile-grids": "wasserstein2",
    "spd-matrices": "log-cholesky",
    "probability-vectors": "hellinger",
}


class CliError(Exception):
    """Usage or parse failure attributable to the invocation."""


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def read_matrix(path, header=None):
    """Read a headerless CSV matrix, optionally after one known header line."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [ln.strip() for ln in handle if ln.strip()]
    except OSError as exc:
        raise CliError(f"{path}: {exc}") from None
    start = 1 if header is not None else 0
    rows = []
    width = None
    for ln_no, line in enumerate(lines[start:], start=start + 1):
        parts = line.split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise CliError(
                f"{path}:{ln_no}: expected {width} fields, found {len(parts)}"
            )
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise CliError(f"{path}:{ln_no}: {exc}") from None
    if not rows:
        raise CliError(f"{path}: no data rows")
    return np.asarray(rows)


def write_matrix(path, matrix, header=None):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = []
    if header:
        lines.append(header)
    lines += [",".join(format(v, ".17g") for v in row) for row in matrix]
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_responses(path, metric=None) -> ResponseSet:
    """Load a response file, dispatching on its header line."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            first = handle.readline().strip()
    except OSError as exc:
        raise CliError(f"{path}: {exc}") from None
    try:
        if first.startswith("grid="):
            grid = int(first.split("=", 1)[1])
            arr = read_matrix(path, header=first)
            if arr.shape[1] != grid:
                raise CliError(f"{path}: header says grid={grid}, rows have {arr.shape[1]}")
            return ResponseSet.quantile_grids(arr)
        if first.startswith("spd"):
            try:
                m = int(first.split("m=", 1)[1])
            except (IndexError, ValueError):
                raise CliError(f"{path}: malformed header {first!r}") from None
            arr = read_matrix(path, header=first)
            if arr.shape[1] != m * m:
                raise CliError(f"{path}: header says m={m}, rows have {arr.shape[1]} values")
            stack = arr.reshape(-1, m, m)
            return ResponseSet.spd_matrices(stack, metric=metric or "log-cholesky")
        if first.startswith("simplex"):
            arr = read_matrix(path, header=first)
            return ResponseSet.probability_vectors(arr, metric=metric or "hellinger")
        if first.startswith("distance-matrix"):
            arr = read_matrix(path, header=first)
            return ResponseSet.precomputed(DistanceMatrix(arr))
        arr = read_matrix(path)
        return ResponseSet.euclidean_vectors(arr)
    except (ValueError, NumericalError) as exc:
        raise CliError(f"{path}: {exc}") from None


def write_responses(path, responses: ResponseSet):
    if responses.kind == "euclidean-vectors":
        write_matrix(path, responses.objects)
    elif responses.kind == "quantile-grids":
        write_matrix(path, responses.objects, header=f"grid={responses.objects.shape[1]}")
    elif responses.kind == "spd-matrices":
        m = responses.objects.shape[1]
        write_matrix(path, responses.objects.reshape(responses.n, -1), header=f"spd m={m}")
    elif responses.kind == "probability-vectors":
        write_matrix(
            path, responses.objects, header=f"simplex C={responses.objects.shape[1]}"
        )
    else:
        write_matrix(path, responses.distances.values, header="distance-matrix")


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def default_config_text():
    lines = ["[train]"]
    for f in dataclasses.fields(TrainConfig):
        if f.name == "architecture":
            lines.append("architecture = default")
        else:
            lines.append(f"{f.name} = {getattr(TrainConfig(), f.name)}")
    lines += [
        "",
        "[simulation]",
        "model = model-i",
        "scenario = A",
        "n = 1000",
        "p = 10",
        "seed = 0",
        "outlier_case =",
        "outlier_rate = 0.0",
        "grid_size = 21",
        "spd_noise = 0.2",
        "spd_metric = log-cholesky",
        "",
        "[benchmark]",
        "replicates = 10",
        "metrics = dcor",
        "",
    ]
    return "\n".join(lines)


def _parse_ini(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as exc:
        raise CliError(f"{path}: {exc}") from None
    return parser


def _train_config_from_ini(parser, overrides=None):
    if not parser.has_section("train"):
        return TrainConfig(**(overrides or {}))
    section = parser["train"]
    kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name not in section:
            continue
        raw = section[f.name].strip()
        if not raw:
            continue
        if f.name == "architecture":
            kwargs[f.name] = _parse_architecture(raw)
        elif f.name in ("lam", "lr"):
            kwargs[f.name] = float(raw)
        elif f.name == "separate_components":
            kwargs[f.name] = raw.lower() in ("1", "true", "yes")
        elif f.name == "penalty":
            kwargs[f.name] = raw
        else:
            kwargs[f.name] = int(raw)
    if overrides:
        kwargs.update(overrides)
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise CliError(f"bad train config: {exc}") from None


def _parse_architecture(raw):
    """"default", "fnn:10,16,32,16,1", or "cnn:p=6,d=1,blocks=1,depth=1,channels=2,kernel=2"."""
    if raw in ("default", ""):
        return None
    kind, _, rest = raw.partition(":")
    try:
        if kind == "fnn":
            return FnnSpec(tuple(int(w) for w in rest.split(",")))
        if kind == "cnn":
            fields = dict(item.split("=") for item in rest.split(","))
            return CnnSpec(
                input_dim=int(fields["p"]),
                output_dim=int(fields["d"]),
                blocks=int(fields.get("blocks", 1)),
                depth=int(fields.get("depth", 1)),
                channels=int(fields.get("channels", 2)),
                kernel=int(fields.get("kernel", 2)),
            )
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad architecture {raw!r}: {exc}") from None
    raise CliError(f"bad architecture {raw!r}: expected 'default', 'fnn:...', or 'cnn:...'")


def _data_paths_from_ini(parser):
    """External-data benchmark: a [data] section with file paths."""
    section = parser["data"]
    paths = {"predictors": section.get("predictors", "").strip(),
             "responses": section.get("responses", "").strip(),
             "metric": section.get("metric", "").strip() or None,
             "test_predictors": section.get("test_predictors", "").strip(),
             "test_truth": section.get("test_truth", "").strip(),
             "test_responses": section.get("test_responses", "").strip()}
    if not paths["predictors"] or not paths["responses"]:
        raise CliError("[data] needs predictors and responses paths")
    return paths


def _simulation_spec_from_ini(parser):
    if not parser.has_section("simulation"):
        raise CliError("benchmark spec needs a [simulation] or [data] section")
    section = parser["simulation"]
    kwargs = {"model": section.get("model", "model-i")}
    for key in ("n", "p", "seed", "grid_size"):
        if section.get(key, "").strip():
            kwargs[key] = section.getint(key)
    if section.get("scenario", "").strip():
        kwargs["scenario"] = section["scenario"].strip()
    if section.get("outlier_case", "").strip():
        kwargs["outlier_case"] = section.getint("outlier_case")
    if section.get("outlier_rate", "").strip():
        kwargs["outlier_rate"] = section.getfloat("outlier_rate")
    if section.get("spd_noise", "").strip():
        kwargs["spd_noise"] = section.getfloat("spd_noise")
    if section.get("spd_metric", "").strip():
        kwargs["spd_metric"] = section["spd_metric"].strip()
    try:
        return SimulationSpec(**kwargs)
    except ValueError as exc:
        raise CliError(f"bad simulation spec: {exc}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fccov(args):
    scores = read_matrix(args.scores)
    if scores.shape[1] != 1:
        raise CliError(f"{args.scores}: expected a single score column")
    scores = scores[:, 0]
    if args.distances:
        responses = read_responses(args.distances)
        if responses.kind != "precomputed":
            raise CliError(f"{args.distances}: expected a 'distance-matrix' file")
    elif args.responses:
        responses = read_responses(args.responses, metric=args.metric)
    else:
        raise CliError("need --distances or --responses")
    if responses.n != scores.size:
        raise CliError(
            f"{scores.size} scores but {responses.n} responses"
        )
    if scores.size < 5:
        raise CliError("need at least 5 samples")
    dist = pairwise_distances(responses)
    if np.all(scores == scores[0]):
        print("statistic 0.0")
        print("note: constant scores, statistic is degenerate")
        return EXIT_OK
    methods = []
    if args.naive:
        methods.append("naive")
    if args.fast or not methods:
        methods.insert(0, "fast") if "naive" in methods else methods.append("fast")
    values = {}
    for method in methods:
        values[method], _ = fccov_statistic(scores, dist, method=method)
        print(f"{method} {values[method]:.17g}")
    if len(values) == 2:
        print(f"difference {values['fast'] - values['naive']:.3e}")
    if args.permutations:
        result = permutation_independence_test(
            scores, dist, n_perm=args.permutations, seed=args.seed
        )
        print(f"p-value {result.p_value:.6g} ({result.n_permutations} permutations)")
    return EXIT_OK


def cmd_train(args):
    x = read_matrix(args.predictors)
    responses = read_responses(args.responses, metric=args.metric)
    if responses.n != x.shape[0]:
        raise CliError(
            f"{args.predictors} has {x.shape[0]} rows but "
            f"{args.responses} has {responses.n}"
        )
    overrides = {}
    if args.dimension is not None:
        overrides["d"] = args.dimension
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = (
        _train_config_from_ini(_parse_ini(args.config), overrides)
        if args.config
        else TrainConfig(**overrides)
    )
    report = train(x, responses, cfg)
    save_checkpoint(args.checkpoint, report.model)
    summary = {
        "version": __version__,
        "config": _config_echo(cfg),
        "iterations": int(report.loss_trace.size),
        "final_loss": float(report.loss_trace[-1]),
        "final_penalty": report.final_penalty,
        "final_components": [float(v) for v in report.component_trace[-1]],
        "elapsed_seconds": report.elapsed,
    }
    if args.report:
        _atomic_write(args.report, json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    x = read_matrix(args.predictors)
    if x.shape[1] != model.input_dim:
        raise CliError(
            f"checkpoint expects {model.input_dim} predictors, file has {x.shape[1]};"
            f" checkpoint layout: {[s for s in model.specs]}"
        )
    outputs = model.predict(x)
    if args.output:
        write_matrix(args.output, outputs)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    results = {}
    if "dcor" in metrics or "kappa" in metrics:
        if not args.truth:
            raise CliError("metrics dcor/kappa need --truth")
        truth = read_matrix(args.truth)
        if truth.shape[0] != x.shape[0]:
            raise CliError("truth row count differs from predictors")
        if "dcor" in metrics:
            results["dcor"] = distance_correlation(outputs, truth)
        if "kappa" in metrics:
            if truth.shape[1] != outputs.shape[1]:
                raise CliError(
                    "kappa needs matching dimensions between truth and outputs"
                )
            results["kappa"] = kappa_distance(outputs, truth)
    if "fccov-components" in metrics:
        if not args.responses:
            raise CliError("metric fccov-components needs --responses")
        responses = read_responses(args.responses, metric=args.metric)
        if responses.n != x.shape[0]:
            raise CliError("response count differs from predictors")
        values = component_statistics(model, x, responses)
        results["fccov_components"] = [float(v) for v in values]
    print(json.dumps(results, indent=2))
    return EXIT_OK


def _config_echo(cfg: TrainConfig):
    echo = dataclasses.asdict(cfg)
    arch = echo["architecture"]
    if arch is not None:
        echo["architecture"] = arch
    return echo


def _one_replicate(sim_spec, train_cfg, metrics, replicate):
    spec = dataclasses.replace(sim_spec, seed=sim_spec.seed + replicate)
    cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + replicate)
    data = simulate(spec)
    test = simulate_test(spec)
    started = time.perf_counter()
    report = train(data.x, data.responses, cfg)
    row = {"replicate": replicate, "seed": spec.seed}
    outputs = report.model.predict(test.x)
    if "dcor" in metrics:
        row["dcor"] = distance_correlation(outputs, test.truth)
    if "kappa" in metrics:
        if cfg.d == test.truth.shape[1]:
            std_truth = (test.truth - test.truth.mean(0)) / test.truth.std(0)
            row["kappa"] = kappa_distance(outputs, std_truth)
        else:
            row["kappa"] = float("nan")
    if "fccov-components" in metrics:
        values = component_statistics(report.model, test.x, test.responses)
        for t, v in enumerate(values):
            row[f"component{t + 1}"] = float(v)
    return row, time.perf_counter() - started


def _one_data_replicate(paths, train_cfg, metrics, replicate):
    """Retrain on fixed external data with a shifted seed; evaluate on the
    provided test files, or on a deterministic 20% holdout otherwise."""
    cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + replicate)
    x = read_matrix(paths["predictors"])
    responses = read_responses(paths["responses"], metric=paths["metric"])
    if responses.n != x.shape[0]:
        raise CliError("predictor and response row counts differ")
    started = time.perf_counter()
    if paths["test_predictors"]:
        report = train(x, responses, cfg)
        test_x = read_matrix(paths["test_predictors"])
        test_truth = read_matrix(paths["test_truth"]) if paths["test_truth"] else None
        test_responses = (
            read_responses(paths["test_responses"], metric=paths["metric"])
            if paths["test_responses"]
            else None
        )
    else:
        rng = np.random.default_rng([cfg.seed, 3])
        perm = rng.permutation(x.shape[0])
        n_hold = max(int(round(0.2 * x.shape[0])), 5)
        hold, fit = perm[:n_hold], perm[n_hold:]
        report = train(x[fit], responses.take(fit), cfg)
        test_x = x[hold]
        test_truth = None
        test_responses = responses.take(hold)
    row = {"replicate": replicate, "seed": cfg.seed}
    outputs = report.model.predict(test_x)
    if "dcor" in metrics:
        if test_truth is None:
            raise CliError("metric dcor needs test_predictors and test_truth in [data]")
        row["dcor"] = distance_correlation(outputs, test_truth)
    if "kappa" in metrics:
        if test_truth is None or test_truth.shape[1] != outputs.shape[1]:
            raise CliError("metric kappa needs test_truth with matching dimension")
        std_truth = (test_truth - test_truth.mean(0)) / test_truth.std(0)
        row["kappa"] = kappa_distance(outputs, std_truth)
    if "fccov-components" in metrics:
        if test_responses is None:
            raise CliError("metric fccov-components needs test_responses in [data]")
        values = component_statistics(report.model, test_x, test_responses)
        for t, v in enumerate(values):
            row[f"component{t + 1}"] = float(v)
    return row, time.perf_counter() - started


def cmd_benchmark(args):
    parser = _parse_ini(args.spec)
    data_paths = _data_paths_from_ini(parser) if parser.has_section("data") else None
    sim_spec = None if data_paths else _simulation_spec_from_ini(parser)
    train_cfg = _train_config_from_ini(parser)
    section = parser["benchmark"] if parser.has_section("benchmark") else {}
    replicates = int(section.get("replicates", 10))
    if args.replicates is not None:
        replicates = args.replicates
    if replicates < 1:
        raise CliError("need at least one replicate")
    default_metrics = "dcor" if data_paths is None else "fccov-components"
    metrics = [
        m.strip()
        for m in section.get("metrics", default_metrics).split(",")
        if m.strip()
    ]
    if data_paths is None:
        job_fn, job_args = _one_replicate, (sim_spec, train_cfg, metrics)
    else:
        job_fn, job_args = _one_data_replicate, (data_paths, train_cfg, metrics)
    workers = args.threads or int(os.environ.get("FCCOVNET_THREADS", "1"))
    rows, timings, failures = [], [], []
    if workers > 1:
        # fan out across processes; assembly stays ordered by replicate id
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(job_fn, *job_args, r): r for r in range(replicates)
            }
            outcomes = {}
            for fut, r in futures.items():
                try:
                    outcomes[r] = fut.result()
                except Exception as exc:
                    failures.append(
                        {"replicate": r, "error": f"{type(exc).__name__}: {exc}"}
                    )
            for r in sorted(outcomes):
                row, seconds = outcomes[r]
                rows.append(row)
                timings.append(seconds)
            failures.sort(key=lambda f: f["replicate"])
    else:
        for r in range(replicates):
            try:
                row, seconds = job_fn(*job_args, r)
                rows.append(row)
                timings.append(seconds)
            except Exception as exc:  # keep going; the report records the failure
                failures.append({"replicate": r, "error": f"{type(exc).__name__}: {exc}"})
    os.makedirs(args.output_dir, exist_ok=True)
    if rows:
        keys = list(rows[0].keys())
        lines = [",".join(keys)]
        lines += [",".join(format(row[k], ".17g") if isinstance(row[k], float) else str(row[k]) for k in keys) for row in rows]
        _atomic_write(os.path.join(args.output_dir, "replicates.csv"), "\n".join(lines) + "\n")
    summary = {
        "version": __version__,
        "spec": data_paths if data_paths is not None else dataclasses.asdict(sim_spec),
        "train": _config_echo(train_cfg),
        "replicates": replicates,
        "completed": len(rows),
        "failures": failures,
        "train_seconds": timings,
        "metrics": {},
    }
    for key in rows[0].keys() if rows else []:
        if key in ("replicate", "seed"):
            continue
        values = np.array([row[key] for row in rows], dtype=float)
        entry = {"mean": float(np.mean(values)), "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0}
        if len(values) == 1:
            entry["note"] = "single replicate, sd reported as 0"
        summary["metrics"][key] = entry
    _atomic_write(
        os.path.join(args.output_dir, "summary.json"), json.dumps(summary, indent=2) + "\n"
    )
    print(json.dumps(summary, indent=2))
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fccovnet",
        description="Nonlinear sufficient dimension reduction for metric-space responses.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--print-config", action="store_true", help="print the default config and exit"
    )
    sub = parser.add_subparsers(dest="command")

    p_stat = sub.add_parser("fccov", help="dependence statistic for score/response files")
    p_stat.add_argument("--scores", required=True, help="single-column CSV of scores")
    p_stat.add_argument("--distances", help="precomputed distance-matrix file")
    p_stat.add_argument("--responses", help="response file (see formats)")
    p_stat.add_argument("--metric", help="metric tag for ambiguous response kinds")
    p_stat.add_argument("--fast", action="store_true", help="fast evaluation (default)")
    p_stat.add_argument("--naive", action="store_true", help="also run the enumeration oracle")
    p_stat.add_argument("--permutations", type=int, help="permutation count for a p-value")
    p_stat.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser("train", help="fit a network and write a checkpoint")
    p_train.add_argument("--predictors", required=True)
    p_train.add_argument("--responses", required=True)
    p_train.add_argument("--metric")
    p_train.add_argument("--config", help="INI config with a [train] section")
    p_train.add_argument("--dimension", type=int, help="override the structural dimension")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--checkpoint", required=True)
    p_train.add_argument("--report", help="write the training summary JSON here")

    p_eval = sub.add_parser("evaluate", help="apply a checkpoint, compute metrics")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--predictors", required=True)
    p_eval.add_argument("--output", help="write predicted components CSV here")
    p_eval.add_argument("--truth", help="true predictors CSV for dcor/kappa")
    p_eval.add_argument("--responses", help="responses for fccov-components")
    p_eval.add_argument("--metric")
    p_eval.add_argument("--metrics", default="dcor", help="comma list: dcor,kappa,fccov-components")

    p_bench = sub.add_parser("benchmark", help="seeded simulation replicates")
    p_bench.add_argument("spec", help="INI file with [simulation], [train], [benchmark]")
    p_bench.add_argument("--output-dir", required=True)
    p_bench.add_argument("--replicates", type=int, help="override the spec's replicate count")
    p_bench.add_argument(
        "--threads",
        type=int,
        help="worker processes for replicates (default: FCCOVNET_THREADS or 1)",
    )

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(default_config_text())
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    handler = {
        "fccov": cmd_fccov,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "benchmark": cmd_benchmark,
    }[args.command]
    try:
        return handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

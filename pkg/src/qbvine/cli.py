"""Command-line interface: fit, density, sample, predict, fit-conditional, bench-gmm.

Every command writes its outputs and a ``manifest.json`` into ``--out`` and
nothing else. Failures print one JSON line on stderr and exit with 2 (usage),
3 (data) or 4 (numerical).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .benchmark import COLUMNS, bench_gmm, write_table
from .data import DataError, load_csv, write_csv
from .model import (CLASS_ANCHORS, CLASSIFICATION, REGRESSION, ConditionalModel, QbVineConfig, QbVineModel,
                    fit, fit_conditional, load_model)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- helpers ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(text.decode())
        else:
            raw = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping")
    return raw


def build_config(args) -> QbVineConfig:
    """Defaults, overridden by the config file, overridden by CLI flags."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            values[key.strip()] = json.loads(raw)
        except ValueError:
            values[key.strip()] = raw
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        return QbVineConfig.from_dict(values)
    except KeyError as exc:
        raise UsageError(f"config key error: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


class Run:
    """Output directory plus the manifest that records the run."""

    def __init__(self, command: str, out_dir, argv):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {"command": command, "argv": list(argv), "library_version": __version__,
                         "inputs": {}, "outputs": {}, "timings": {}, "config": None, "seed": None}
        self._t0 = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such file: {path}")
        self.manifest["inputs"][str(path)] = sha256_file(path)
        return path

    def path(self, name: str) -> Path:
        return self.out / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return self.record(name)

    def record(self, name: str) -> Path:
        self.manifest["outputs"][name] = sha256_file(self.path(name))
        return self.path(name)

    def stage(self, name: str, seconds: float) -> None:
        self.manifest["timings"][name] = seconds

    def finish(self) -> None:
        self.manifest["timings"]["total"] = time.perf_counter() - self._t0
        self.path("manifest.json").write_text(dump_json(self.manifest))


def lps_summary(log_density: np.ndarray) -> dict:
    """Mean negative log density with a two-standard-error band over rows."""
    ld = np.asarray(log_density, dtype=float)
    n = ld.size
    se = float(np.std(-ld, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return {"n": int(n), "lps": float(-ld.mean()), "lps_2se": 2.0 * se, "finite": bool(np.all(np.isfinite(ld)))}


def _load_data(run: Run, path, args):
    t = time.perf_counter()
    ds = load_csv(run.input(path), has_header=not args.no_header, delimiter=args.delimiter)
    run.stage("load", time.perf_counter() - t)
    return ds


def _column_index(names, key: str) -> int:
    if key in names:
        return names.index(key)
    try:
        i = int(key)
    except ValueError:
        raise DataError(f"no column named {key!r}") from None
    if not 0 <= i < len(names):
        raise DataError(f"column index {i} out of range for {len(names)} columns")
    return i


def _save_model(run: Run, model, columns: dict) -> None:
    d = model.to_dict()
    d["columns"] = columns
    run.write_text("model.json", json.dumps(d))


def _read_model(run: Run, path):
    p = run.input(path)
    try:
        meta = json.loads(p.read_text()).get("columns", {})
        return load_model(p), meta
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read model {p}: {exc}") from None


def _write_columns(path, cols, header) -> None:
    """CSV with integer columns kept as integers."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([str(int(v)) if isinstance(v, (np.integer, np.bool_)) else repr(float(v)) for v in row])


def _select_features(ds, meta: dict, n_features: int) -> np.ndarray:
    names = list(ds.column_names)
    wanted = meta.get("features")
    if wanted and all(w in names for w in wanted):
        return ds.values[:, [names.index(w) for w in wanted]]
    if ds.d != n_features:
        raise DataError(f"model expects {n_features} feature columns, data has {ds.d}")
    return ds.values


# -- commands --------------------------------------------------------------

def cmd_fit(args, run: Run) -> None:
    cfg = build_config(args)
    run.manifest.update(config=cfg.to_dict(), seed=cfg.seed)
    ds = _load_data(run, args.data, args)
    timings = {}
    model = fit(ds.values, cfg, args.threads, timings)
    for k, v in timings.items():
        run.stage(k, v)
    t = time.perf_counter()
    _save_model(run, model, {"names": list(ds.column_names)})
    run.write_text("fit_report.json", dump_json(model.fit_report))
    run.stage("write", time.perf_counter() - t)


def cmd_fit_conditional(args, run: Run) -> None:
    cfg = build_config(args)
    run.manifest.update(config=cfg.to_dict(), seed=cfg.seed)
    ds = _load_data(run, args.data, args)
    names = list(ds.column_names)
    j = _column_index(names, args.target)
    y = ds.values[:, j]
    X = np.delete(ds.values, j, axis=1)
    features = [n for i, n in enumerate(names) if i != j]
    if X.shape[1] < 1:
        raise DataError("need at least one feature column besides the target")
    timings = {}
    model = fit_conditional(X, y, args.task, cfg, args.threads, timings)
    for k, v in timings.items():
        run.stage(k, v)
    _save_model(run, model, {"target": names[j], "features": features})
    report = {"joint": model.joint.fit_report, "features": model.features.fit_report,
              "task": model.task, "q": model.q}
    run.write_text("fit_report.json", dump_json(report))


def cmd_density(args, run: Run) -> None:
    model, meta = _read_model(run, args.model)
    if not isinstance(model, QbVineModel):
        raise DataError("density needs a joint model; use predict for conditional models")
    ds = _load_data(run, args.data, args)
    if ds.d != model.dimension:
        raise DataError(f"model has {model.dimension} dimensions, data has {ds.d} columns")
    t = time.perf_counter()
    ld = model.joint_log_density(ds.values)
    run.stage("density", time.perf_counter() - t)
    write_csv(run.path("density.csv"), ld, ["log_density"])
    run.record("density.csv")
    run.write_text("density_summary.json", dump_json(lps_summary(ld)))


def cmd_sample(args, run: Run) -> None:
    model, meta = _read_model(run, args.model)
    if isinstance(model, ConditionalModel):
        model = model.joint
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    seed = 0 if args.seed is None else args.seed
    run.manifest["seed"] = seed
    t = time.perf_counter()
    x = model.sample(args.count, seed)
    run.stage("sample", time.perf_counter() - t)
    names = meta.get("names")
    if names is None and "target" in meta:
        names = [meta["target"], *meta["features"]]
    write_csv(run.path("samples.csv"), x, names or [f"x{i}" for i in range(x.shape[1])])
    run.record("samples.csv")


def cmd_predict(args, run: Run) -> None:
    model, meta = _read_model(run, args.model)
    if not isinstance(model, ConditionalModel):
        raise DataError("predict needs a model from fit-conditional")
    ds = _load_data(run, args.data, args)
    names = list(ds.column_names)
    target = args.target or meta.get("target")
    y = None
    if target is not None and (target in names or args.target is not None):
        j = _column_index(names, target)
        y = ds.values[:, j]
        X = np.delete(ds.values, j, axis=1)
        names = names[:j] + names[j + 1:]
        ds = type(ds)(X, tuple(names))
    X = _select_features(ds, meta, model.n_features)
    t = time.perf_counter()
    summary = {"task": model.task, "n": int(X.shape[0])}
    if model.task == CLASSIFICATION:
        p, degenerate = model.predict_proba(X)
        label = (p >= 0.5).astype(int)
        cols = [p, label, degenerate]
        header = ["prob_positive", "label", "degenerate"]
        if y is not None:
            if not np.all((y == 0) | (y == 1)):
                raise DataError("classification targets must be 0 or 1")
            anchors = np.where(y == 1, CLASS_ANCHORS[1], CLASS_ANCHORS[0])
            ld = model.conditional_log_density(anchors, X)
            cols.append(ld)
            header.append("conditional_log_density")
            summary.update(accuracy=float(np.mean(label == y)), **{"conditional_" + k: v
                                                                  for k, v in lps_summary(ld).items()})
    else:
        mean = model.conditional_mean(X)
        cols, header = [mean], ["prediction"]
        if y is not None:
            ld = model.conditional_log_density(y, X)
            cols.append(ld)
            header.append("conditional_log_density")
            summary.update(rmse=float(np.sqrt(np.mean((mean - y) ** 2))),
                           **{"conditional_" + k: v for k, v in lps_summary(ld).items()})
    run.stage("predict", time.perf_counter() - t)
    _write_columns(run.path("predictions.csv"), cols, header)
    run.record("predictions.csv")
    run.write_text("predict_summary.json", dump_json(summary))


def cmd_bench_gmm(args, run: Run) -> None:
    cfg = build_config(args)
    run.manifest.update(config=cfg.to_dict(), seed=list(args.seeds))
    t = time.perf_counter()
    runs, rows = bench_gmm(args.dims, args.n, args.seeds, cfg, args.threads)
    run.stage("bench", time.perf_counter() - t)
    write_table(run.path("bench_table.csv"), rows)
    run.record("bench_table.csv")
    per_run = [{k: getattr(r, k) for k in ("d", "n", "seed", *COLUMNS, "qbvine_standardized", "bandwidth")}
               for r in runs]
    write_table(run.path("bench_runs.csv"), per_run)
    run.record("bench_runs.csv")
    run.manifest["timings"]["per_run"] = [r.seconds for r in runs]


# -- parser ----------------------------------------------------------------

def _common(p, config=True, seed=True, data=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    if config:
        p.add_argument("--config", help="JSON or TOML file of model settings")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config entry; VALUE is parsed as JSON when possible")
    if data:
        p.add_argument("--no-header", action="store_true", help="CSV has no header row")
        p.add_argument("--delimiter", default=",")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qbvine", description="Quasi-Bayesian vine density estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a joint density model")
    p.add_argument("data")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-conditional", help="fit p(y | x) for regression or classification")
    p.add_argument("data")
    p.add_argument("--target", required=True, help="target column name or 0-based index")
    p.add_argument("--task", choices=(REGRESSION, CLASSIFICATION), default=REGRESSION)
    _common(p)
    p.set_defaults(func=cmd_fit_conditional)

    p = sub.add_parser("density", help="per-row log densities and LPS")
    p.add_argument("model")
    p.add_argument("data")
    _common(p, config=False, seed=False)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sample", help="draw from a fitted model")
    p.add_argument("model")
    p.add_argument("--count", type=int, required=True)
    _common(p, config=False, data=False)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("predict", help="conditional predictions from a fit-conditional model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--target", default=None, help="target column to score, if present in the data")
    _common(p, config=False, seed=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench-gmm", help="Gaussian-mixture benchmark against baselines and the oracle")
    p.add_argument("--dims", type=int, nargs="+", default=[10])
    p.add_argument("--n", type=int, nargs="+", default=[100, 500], help="training sizes")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    _common(p, seed=False, data=False)
    p.set_defaults(func=cmd_bench_gmm)
    return parser


def _fail(code: int, exc: BaseException, command) -> int:
    record = {"error": type(exc).__name__, "message": str(exc).replace("\n", " "),
              "exit_code": code, "command": command}
    sys.stderr.write(json.dumps(record) + "\n")
    return code


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, FileNotFoundError, ValueError)):
        return EXIT_DATA
    return None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    command = run = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        run = Run(command, args.out, argv)
        args.func(args, run)
        run.finish()
        return EXIT_OK
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        if run is not None:
            run.manifest["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
            run.finish()
        return _fail(code, exc, command)


if __name__ == "__main__":
    sys.exit(main())

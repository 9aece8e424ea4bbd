"""Command-line interface: ``fit``, ``predict``, ``bench`` and ``profile``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import fcntl
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import exprcore as ec
from .data import Dataset, StandardizationStats, load_csv, nmse, r2, read_table, split
from .engine import VARIATIONS, EngineConfig, LOG_COLUMNS, run as gp_run
from .errors import ConfigError, DataError, NumericFailure, TreeParseError
from .itrep import ITEAConfig, ITExpression, ITTerm, it_evaluate, itea_run
from .simplify import SimplifyConfig

log = logging.getLogger(__name__)

MODEL_FORMAT = "srlab-model/1"
RESULT_COLUMNS = ("dataset", "method", "seed", "train_r2", "val_r2", "test_r2", "train_nmse",
                  "val_nmse", "test_nmse", "size", "complexity", "runtime_ms")
GRID_POINTS = 1001

_E, _I, _S = EngineConfig, ITEAConfig, SimplifyConfig


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; every key has a default."""

    engine: str = "gp"
    method: str | None = None
    seed: int = 0
    data: str | None = None
    target: str | None = None
    out: str | None = None
    log: str | None = None
    simplify_log: str | None = None
    test_fraction: float = 0.25
    validation_fraction: float = 0.25
    standardize: bool = False
    # GP engine
    pop_size: int = _E.pop_size
    generations: int = _E.generations
    max_size: int = _E.max_size
    max_depth: int = _E.max_depth
    variation_tolerance: int = _E.variation_tolerance
    variation_weights: tuple[float, ...] = _E.variation_weights
    objectives: tuple[str, ...] = _E.objectives
    selection: str = _E.selection
    opt_iters: int = _E.opt_iters
    functions: tuple[str, ...] = _E.functions
    constants: bool = _E.constants
    failure_fallback: str = _E.failure_fallback
    simplify: bool = False
    tolerance: float = _S.tolerance
    traversal: str = _S.traversal
    max_subtree_size: int | None = _S.max_subtree_size
    hash_bits: int = _S.hash_bits
    distance_mode: str = _S.distance_mode
    # ITEA
    popsize: int = _I.popsize
    gens: int = _I.gens
    strength_bounds: tuple[int, int] = _I.strength_bounds
    terms_bounds: tuple[int, int] = _I.terms_bounds
    max_nonzero_strengths: int = _I.max_nonzero_strengths
    transf_funcs: tuple[str, ...] = _I.transf_funcs
    heuristic: str = _I.heuristic
    tournament_size: int = _I.tournament_size
    lm_iters: int = _I.lm_iters
    cache_size: int = _I.cache_size

    def __post_init__(self):
        if self.engine not in ("gp", "itea"):
            raise ConfigError("engine must be 'gp' or 'itea'")
        # build the engine configs once so invalid values fail early
        self.engine_config()
        self.itea_config()

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        doc = dict(doc)
        if isinstance(doc.get("variation_weights"), dict):
            w = doc["variation_weights"]
            bad = sorted(set(w) - set(VARIATIONS))
            if bad:
                raise ConfigError(f"unknown variation operators: {bad}")
            doc["variation_weights"] = [w.get(v, 0.0) for v in VARIATIONS]
        for k, v in doc.items():
            if isinstance(v, list):
                doc[k] = tuple(v)
        try:
            return cls(**doc)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        """SHA-256 of the settings that affect the fitted model."""
        d = self.to_dict()
        for k in ("data", "out", "log", "simplify_log", "method"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def engine_config(self) -> EngineConfig:
        try:
            simp = SimplifyConfig(self.simplify, self.tolerance, self.traversal,
                                  self.max_subtree_size, self.hash_bits, self.distance_mode)
            return EngineConfig(
                pop_size=self.pop_size, generations=self.generations, max_size=self.max_size,
                max_depth=self.max_depth, validation_fraction=self.validation_fraction,
                variation_tolerance=self.variation_tolerance,
                variation_weights=tuple(self.variation_weights), objectives=tuple(self.objectives),
                selection=self.selection, simplify=simp, opt_iters=self.opt_iters, seed=self.seed,
                functions=tuple(self.functions), constants=self.constants,
                failure_fallback=self.failure_fallback)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def itea_config(self) -> ITEAConfig:
        try:
            return ITEAConfig(
                popsize=self.popsize, gens=self.gens, strength_bounds=tuple(self.strength_bounds),
                terms_bounds=tuple(self.terms_bounds),
                max_nonzero_strengths=self.max_nonzero_strengths,
                transf_funcs=tuple(self.transf_funcs), heuristic=self.heuristic,
                tournament_size=self.tournament_size, lm_iters=self.lm_iters,
                cache_size=self.cache_size)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# --- model documents -------------------------------------------------------


def _it_to_dict(expr: ITExpression) -> dict:
    return {
        "beta0": expr.beta0,
        "terms": [{"g": t.g, "k": list(t.k), "theta": list(t.theta), "beta": b}
                  for t, b in zip(expr.terms, expr.beta)],
    }


def _it_from_dict(doc: dict) -> ITExpression:
    try:
        terms = tuple(ITTerm(t["g"], tuple(int(v) for v in t["k"]),
                             (float(t["theta"][0]), float(t["theta"][1])))
                      for t in doc["terms"])
        beta = tuple(float(t["beta"]) for t in doc["terms"])
        return ITExpression(terms, beta, float(doc["beta0"]))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise DataError(f"malformed IT model: {e}") from None


class Model:
    """A fitted GP tree or IT expression plus its input preprocessing."""

    def __init__(self, kind: str, expr, features, target, stats=None):
        self.kind = kind
        self.expr = expr
        self.features = list(features)
        self.target = target
        self.stats = stats

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.features):
            raise DataError(f"model expects {len(self.features)} features, got {X.shape[1]}")
        if self.stats is not None:
            X = self.stats.apply(X)
        if self.kind == "gp":
            return ec.evaluate(self.expr, X)
        return it_evaluate(self.expr, X)

    @property
    def size(self) -> int:
        return self.expr.size

    @property
    def complexity(self) -> int | None:
        return self.expr.complexity if self.kind == "gp" else None

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "engine": self.kind,
            "features": self.features,
            "target": self.target,
            "standardization": None if self.stats is None else {
                "mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
            "expression": (json.loads(ec.serialize(self.expr)) if self.kind == "gp"
                           else _it_to_dict(self.expr)),
            "text": str(self.expr),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Model:
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise DataError("not a model file")
        kind = doc.get("engine")
        if kind == "gp":
            try:
                expr = ec.from_dict(doc["expression"])
            except TreeParseError as e:
                raise DataError(f"malformed tree at {e.position}: {e}") from None
        elif kind == "itea":
            expr = _it_from_dict(doc["expression"])
        else:
            raise DataError(f"unknown model engine {kind!r}")
        st = doc.get("standardization")
        stats = None
        if st is not None:
            mean, std = np.asarray(st["mean"], float), np.asarray(st["std"], float)
            stats = StandardizationStats(mean, std, np.zeros(len(mean), bool))
        return cls(kind, expr, doc["features"], doc.get("target"), stats)

    @classmethod
    def load(cls, path) -> Model:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"model not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e})") from None


def _metric(fn, yhat, y):
    if len(y) < 2 or not np.isfinite(yhat).all():
        return None
    try:
        v = fn(yhat, y)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def partition_metrics(model: Model, data: Dataset) -> dict:
    out = {}
    for tag, short in (("train", "train"), ("validation", "val"), ("test", "test")):
        X, y = data.rows(tag)
        yhat = model.predict(X) if len(y) else np.empty(0)
        out[f"{short}_r2"] = _metric(r2, yhat, y)
        out[f"{short}_nmse"] = _metric(nmse, yhat, y)
    out["size"] = model.size
    out["complexity"] = model.complexity
    return out


@dataclass
class FitOutput:
    model: Model
    metrics: dict
    run_log: list[dict]
    replacements: list
    runtime_ms: float


def fit(config: RunConfig, data_path, target: str | None = None) -> FitOutput:
    """Load, split, optionally standardize, and run the configured engine."""
    raw = split(load_csv(data_path, target or config.target), config.test_fraction,
                config.validation_fraction, config.seed)
    data, stats = raw, None
    if config.standardize:
        stats = StandardizationStats.fit(raw.train[0])
        data = dataclasses.replace(raw, features=stats.apply(raw.features))
    t0 = time.perf_counter()
    if config.engine == "gp":
        res = gp_run(config.engine_config(), data)
        expr = res.best.tree
        run_log = [dataclasses.asdict(g) for g in res.log]
        replacements = res.replacements
    else:
        X, y = data.train
        res = itea_run(config.itea_config(), X, y, np.random.default_rng(config.seed))
        if not math.isfinite(res.best_fitness):
            raise NumericFailure("no finite IT expression was found")
        expr = res.best
        run_log = [{"generation": g, "best_train_nmse": f} for g, f in enumerate(res.history)]
        replacements = []
    runtime = (time.perf_counter() - t0) * 1000.0
    model = Model(config.engine, expr, raw.column_names, raw.target_name, stats)
    # metrics are measured on unscaled inputs, exactly as predict sees them
    metrics = partition_metrics(model, raw)
    return FitOutput(model, metrics, run_log, replacements, runtime)


def model_document(out: FitOutput, config: RunConfig) -> str:
    doc = out.model.to_dict()
    doc["seed"] = config.seed
    doc["config_digest"] = config.digest()
    doc["config"] = config.to_dict()
    doc["metrics"] = {k: _jsonable(v) for k, v in out.metrics.items()}
    return json.dumps(doc, indent=2) + "\n"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- commands --------------------------------------------------------------


def cmd_fit(args) -> int:
    config = RunConfig.load(args.config)
    data = args.data or config.data
    if data is None:
        raise ConfigError("no dataset given (--data or config 'data')")
    out_path = args.out or config.out
    if out_path is None:
        raise ConfigError("no model output path given (--out or config 'out')")
    out = fit(config, data, args.target)
    Path(out_path).write_text(model_document(out, config), encoding="utf-8", newline="\n")
    log_path = args.log or config.log
    if log_path:
        cols = LOG_COLUMNS if config.engine == "gp" else ("generation", "best_train_nmse")
        _write_csv(log_path, cols, [[_fmt(r[c]) for c in cols] for r in out.run_log])
    if config.simplify_log:
        _write_csv(config.simplify_log,
                   ("generation", "node_id", "pre_size", "post_size", "distance", "angle_degrees"),
                   [[r.generation, ".".join(map(str, r.path)), r.pre_size, r.post_size,
                     _fmt(float(r.distance)), _fmt(float(r.angle))] for r in out.replacements])
    print(json.dumps({k: _jsonable(v) for k, v in out.metrics.items()}))
    return 0


def cmd_predict(args) -> int:
    model = Model.load(args.model)
    header, X = read_table(args.data)
    if model.target in header and len(header) == len(model.features) + 1:
        t = header.index(model.target)
        X = np.delete(X, t, axis=1)
    pred = model.predict(X)
    _write_csv(args.out, ("prediction",), [[_fmt(float(p))] for p in pred])
    return 0


def _read_results(path: Path) -> list[dict]:
    if not path.is_file() or path.stat().st_size == 0:
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _result_key(row) -> tuple:
    return (row["dataset"], row["method"], int(row["seed"]))


class _Locked:
    """Exclusive advisory lock on a sidecar file."""

    def __init__(self, path: Path):
        self.path = path.with_name(path.name + ".lock")

    def __enter__(self):
        self.fh = open(self.path, "a")
        fcntl.flock(self.fh, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fh, fcntl.LOCK_UN)
        self.fh.close()


def _append_row(path: Path, row: dict) -> None:
    with _Locked(path):
        new = not path.is_file() or path.stat().st_size == 0
        with path.open("a", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, RESULT_COLUMNS, lineterminator="\n")
            if new:
                w.writeheader()
            w.writerow(row)


def _sort_results(path: Path) -> None:
    with _Locked(path):
        rows = {_result_key(r): r for r in _read_results(path)}
        _write_csv(path, RESULT_COLUMNS,
                   [[rows[k][c] for c in RESULT_COLUMNS] for k in sorted(rows)])


def bench(configs: dict[str, RunConfig], datasets: list[Path], seeds, out: Path) -> int:
    """Run every (dataset, method, seed) not yet present in ``out``."""
    done = {_result_key(r) for r in _read_results(out)}
    n = 0
    for ds in datasets:
        for method, cfg in configs.items():
            for seed in seeds:
                if (ds.stem, method, seed) in done:
                    continue
                cfg_s = dataclasses.replace(cfg, seed=seed)
                res = fit(cfg_s, ds)
                row = {"dataset": ds.stem, "method": method, "seed": seed,
                       "runtime_ms": _fmt(round(res.runtime_ms, 3))}
                row.update({k: _fmt(v) for k, v in res.metrics.items()})
                _append_row(out, row)
                n += 1
    if out.is_file():
        _sort_results(out)
    return n


def cmd_bench(args) -> int:
    cdir, ddir = Path(args.configs), Path(args.data)
    if not cdir.is_dir():
        raise ConfigError(f"config directory not found: {cdir}")
    if not ddir.is_dir():
        raise DataError(f"data directory not found: {ddir}")
    configs = {}
    for p in sorted(cdir.glob("*.json")):
        cfg = RunConfig.load(p)
        configs[cfg.method or p.stem] = cfg
    if not configs:
        raise ConfigError(f"no *.json configs in {cdir}")
    datasets = sorted(ddir.glob("*.csv"))
    if not datasets:
        raise DataError(f"no *.csv datasets in {ddir}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    n = bench(configs, datasets, range(args.seeds), Path(args.out))
    print(f"{n} new runs")
    return 0


# --- performance profiles --------------------------------------------------


@dataclass(frozen=True)
class ProfileCurve:
    thresholds: np.ndarray
    probability: np.ndarray
    auc: float


def profile_curve(scores) -> ProfileCurve:
    """``P[score >= x]`` on a 1001-point grid over [0, 1].

    Scores are clipped below at 0. At ``x = 0`` the curve uses the strict
    ``P[score > 0]``, so runs with no explanatory power contribute nothing.
    """
    s = np.clip(np.asarray(scores, dtype=float), 0.0, None)
    if s.size == 0:
        raise DataError("no scores to profile")
    if np.isnan(s).any():
        raise DataError("scores contain NaN")
    x = np.linspace(0.0, 1.0, GRID_POINTS)
    p = (s[None, :] >= x[:, None]).mean(axis=1)
    p[0] = (s > 0).mean()
    h = 1.0 / (GRID_POINTS - 1)
    auc = h * (p.sum() - (p[0] + p[-1]) / 2.0)
    return ProfileCurve(x, p, float(auc))


def profile(rows: list[dict], aggregation: str = "max",
            column: str = "test_r2") -> dict[str, ProfileCurve]:
    """One curve per method over the per-dataset aggregate of ``column``.

    Missing values (failed runs) count as R^2 = 0.
    """
    if aggregation not in ("max", "median"):
        raise ConfigError("aggregation must be 'max' or 'median'")
    if not rows:
        raise DataError("no results to profile")
    agg = np.max if aggregation == "max" else np.median
    per: dict[str, dict[str, list[float]]] = {}
    for r in rows:
        v = r.get(column)
        v = 0.0 if v in (None, "") else float(v)
        per.setdefault(r["method"], {}).setdefault(r["dataset"], []).append(v)
    return {m: profile_curve([agg(v) for _, v in sorted(d.items())])
            for m, d in sorted(per.items())}


def cmd_profile(args) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise DataError(f"results not found: {path}")
    curves = profile(_read_results(path), args.agg)
    doc = {"aggregation": args.agg,
           "methods": {m: {"auc": c.auc, "thresholds": c.thresholds.tolist(),
                           "probability": c.probability.tolist()}
                       for m, c in curves.items()}}
    Path(args.out).write_text(json.dumps(doc) + "\n", encoding="utf-8", newline="\n")
    for m, c in curves.items():
        print(f"{m}\tauc={c.auc:.6f}")
    return 0


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--target")
    p.add_argument("--out")
    p.add_argument("--log")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="run configs x datasets x seeds")
    p.add_argument("--configs", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("profile", help="performance profiles from bench results")
    p.add_argument("--results", required=True)
    p.add_argument("--agg", choices=("max", "median"), default="max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)
    return ap


EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericFailure, 4))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:
        for cls, code in EXIT_CODES:
            if isinstance(e, cls):
                print(f"error: {e}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())

"""Command-line experiment runner.

Every subcommand writes one run directory holding ``metrics.csv``,
``summary.json`` (with a complete config echo) and, unless ``--no-plots``,
PNG figures.  Exit codes: 0 success, 1 failed self-test, 2 configuration
error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import DATA_DIR_ENV, DATASETS, load_dataset
from .layers import BINARIZERS
from .models import MODELS, build_model
from .tensor import make_rng
from .toy import CRITERIA, SolutionSpace, emit_solution_space_csv, space_rows
from .train import TrainConfig, TrainingDiverged, dumps_summary, train_epochs

log = logging.getLogger("bihalf")

COMMANDS = ("train", "sweep-ratio", "prune-sweep", "multi-seed", "enumerate-toy", "selftest")
RUN_COLUMNS = ("binarizer", "p_pos", "rho", "seed", "train_loss", "train_accuracy",
               "test_loss", "test_accuracy", "ratio_violations", "flip_violations")
# published toy counts on the reference grid, reported next to ours
TOY_REFERENCE = {"all": 76, "n_neg_6": 66}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig(TrainConfig):
    """A :class:`TrainConfig` plus model, data and sweep settings."""

    model: str = "conv2"
    dataset: str = "mnist-subset"
    data_dir: Optional[str] = None
    n_train: int = 5000
    n_test: int = 1000
    exempt: Tuple[str, ...] = ()
    out_dir: str = "runs"
    p_pos_list: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    rho_list: Tuple[float, ...] = (0.0, 0.2, 0.5, 0.8)
    seeds: Tuple[int, ...] = (0, 1, 2)
    n_runs: int = 5
    methods: Tuple[str, ...] = ("bihalf", "sign")
    resolutions: Tuple[int, ...] = (32, 64, 128)
    bound: float = 2.0
    criterion: str = "boundary"

    def validate(self) -> None:
        super().validate()
        checks = [
            (self.model in MODELS, f"model must be one of {MODELS}"),
            (self.dataset in DATASETS, f"dataset must be one of {DATASETS}"),
            (set(self.exempt) <= {"first", "last"}, "exempt takes 'first' and/or 'last'"),
            (all(0 <= p <= 1 for p in self.p_pos_list), "p_pos_list values must lie in [0, 1]"),
            (all(0 <= r < 1 for r in self.rho_list), "rho_list values must lie in [0, 1)"),
            (len(self.seeds) > 0 and self.n_runs >= 1, "need at least one seed and one run"),
            (set(self.methods) <= set(BINARIZERS), f"methods must be among {BINARIZERS}"),
            (all(r >= 2 for r in self.resolutions), "toy resolutions must be >= 2"),
            (self.bound > 0, "bound must be positive"),
            (self.criterion in CRITERIA, f"criterion must be one of {CRITERIA}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def train_config(self, **override) -> TrainConfig:
        kw = {n: getattr(self, n) for n in TrainConfig.field_names()}
        kw.update(override)
        return TrainConfig(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


_DEFAULTS = {f.name: f.default for f in fields(ExperimentConfig)}
# element types for tuple fields whose default may be empty
_TUPLE_TYPES = {"milestones": int, "exempt": str, "p_pos_list": float, "rho_list": float,
                "seeds": int, "methods": str, "resolutions": int}


def _coerce(name: str, value):
    default = _DEFAULTS[name]
    try:
        if name in _TUPLE_TYPES:
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(_TUPLE_TYPES[name](v) for v in value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if isinstance(default, int) and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if default is None or isinstance(default, str):
            return None if value is None else str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name!r}: {value!r} ({exc})") from None
    raise ConfigError(f"bad value for {name!r}: {value!r}")


def build_config(file_values: Optional[dict], overrides: dict) -> ExperimentConfig:
    """Merge JSON values and flag overrides; unknown keys are rejected."""
    merged = dict(file_values or {})
    merged.update(overrides)
    unknown = sorted(set(merged) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_config_file(path) -> dict:
    """Load a JSON config.  A ``summary.json`` from an earlier run is accepted
    too; its config echo is used, which is what makes runs replayable."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "command" in data and isinstance(data.get("config"), dict):
        return data["config"]
    return data


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("out_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


def make_run_dir(cfg: ExperimentConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    base = Path(cfg.out_dir) / f"{stamp}-{command}-s{cfg.seed}-{config_hash(cfg)}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


# -- single runs ------------------------------------------------------------

@lru_cache(maxsize=4)
def _datasets(name: str, data_dir: Optional[str], n_train: int, n_test: int):
    return load_dataset(name, data_dir, 0, n_train, n_test)


def run_training(cfg: ExperimentConfig, **override):
    """Build, train and return ``(model, log, train_set)`` for one config."""
    tcfg = cfg.train_config(**override)
    tr, te = _datasets(cfg.dataset, cfg.data_dir, cfg.n_train, cfg.n_test)
    model = build_model(cfg.model, tr.sample_shape, tr.n_classes, binarizer=tcfg.binarizer,
                        p_pos=tcfg.p_pos, per_filter=tcfg.per_filter, activation=tcfg.activation,
                        exempt=cfg.exempt, rho=tcfg.rho, learned_mask=tcfg.learned_mask,
                        rng=make_rng(tcfg.seed))
    return model, train_epochs(model, tr, te, tcfg), tr


def _job(args) -> dict:
    cfg_dict, override = args
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in cfg_dict.items()})
    _, mlog, _ = run_training(cfg, **override)
    tr, te = mlog.final("train"), mlog.final("test")
    return {"binarizer": override.get("binarizer", cfg.binarizer),
            "p_pos": override.get("p_pos", cfg.p_pos), "rho": override.get("rho", cfg.rho),
            "seed": override["seed"], "train_loss": tr.get("loss"),
            "train_accuracy": tr.get("accuracy"), "test_loss": te.get("loss"),
            "test_accuracy": te.get("accuracy"), "ratio_violations": mlog.violations["ratio"],
            "flip_violations": mlog.violations["flip_balance"]}


def run_jobs(cfg: ExperimentConfig, overrides: Sequence[dict], workers: int = 1) -> List[dict]:
    """Independent training runs; result order follows ``overrides``."""
    payload = [(cfg.to_dict(), o) for o in overrides]
    if workers > 1 and len(payload) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_job, payload))
    return [_job(p) for p in payload]


# -- output helpers -----------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 10))
    return "" if v is None else v


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def write_summary(run_dir: Path, command: str, cfg: ExperimentConfig, results: dict) -> Path:
    summary = {"command": command, "seed": cfg.seed, "config": cfg.to_dict(),
               "config_hash": config_hash(cfg), "results": results}
    if command != "enumerate-toy":
        # records whether IDX files or the bundled fallback were used
        tr, te = _datasets(cfg.dataset, cfg.data_dir, cfg.n_train, cfg.n_test)
        summary["data"] = {"source": tr.name, "n_train": len(tr), "n_test": len(te)}
    path = run_dir / "summary.json"
    path.write_text(dumps_summary(summary) + "\n")
    return path


def _aggregate(rows: List[dict], keys: Sequence[str]) -> List[dict]:
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        acc = np.array([r["test_accuracy"] for r in rs], dtype=np.float64)
        loss = np.array([r["test_loss"] for r in rs], dtype=np.float64)
        row = dict(zip(keys, key))
        row.update(mean_accuracy=float(acc.mean()), std_accuracy=float(acc.std()),
                   mean_loss=float(loss.mean()), n_seeds=len(rs))
        out.append(row)
    return out


# -- subcommands --------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, run_dir: Path, plots: bool, workers: int) -> dict:
    _, mlog, _ = run_training(cfg)
    (run_dir / "metrics.csv").write_text(mlog.to_csv())
    if plots and cfg.diagnostics:
        from . import plotting
        plotting.plot_flips(mlog, run_dir / "flips.png")
        plotting.plot_entropy(mlog, run_dir / "entropy.png")
        plotting.plot_hyper(mlog, run_dir / "hyper.png")
    return mlog.summary()


def cmd_sweep_ratio(cfg: ExperimentConfig, run_dir: Path, plots: bool, workers: int) -> dict:
    jobs = [{"binarizer": "ot", "p_pos": p, "seed": s} for p in cfg.p_pos_list for s in cfg.seeds]
    rows = run_jobs(cfg, jobs, workers)
    write_csv(run_dir / "runs.csv", RUN_COLUMNS, rows)
    agg = _aggregate(rows, ("p_pos",))
    write_csv(run_dir / "metrics.csv", ("p_pos", "mean_accuracy", "std_accuracy", "mean_loss", "n_seeds"), agg)
    if plots:
        from . import plotting
        plotting.plot_sweep(agg, run_dir / "sweep.png")
    best = max(agg, key=lambda r: r["mean_accuracy"])
    return {"argmax_p_pos": best["p_pos"], "best_mean_accuracy": best["mean_accuracy"],
            "ratio_violations": sum(r["ratio_violations"] for r in rows)}


def cmd_prune_sweep(cfg: ExperimentConfig, run_dir: Path, plots: bool, workers: int) -> dict:
    jobs = [{"binarizer": m, "rho": r, "seed": s}
            for m in cfg.methods for r in cfg.rho_list for s in cfg.seeds]
    rows = run_jobs(cfg, jobs, workers)
    write_csv(run_dir / "runs.csv", RUN_COLUMNS, rows)
    agg = _aggregate(rows, ("rho", "binarizer"))
    agg.sort(key=lambda r: (r["rho"], r["binarizer"]))
    write_csv(run_dir / "metrics.csv", ("rho", "binarizer", "mean_accuracy", "std_accuracy",
                                        "mean_loss", "n_seeds"), agg)
    if plots:
        from . import plotting
        plotting.plot_prune(agg, run_dir / "prune.png")
    return {"grid": [{k: r[k] for k in ("rho", "binarizer", "mean_accuracy")} for r in agg]}


def cmd_multi_seed(cfg: ExperimentConfig, run_dir: Path, plots: bool, workers: int) -> dict:
    seeds = range(cfg.seed, cfg.seed + cfg.n_runs)
    jobs = [{"binarizer": m, "seed": s} for m in cfg.methods for s in seeds]
    rows = run_jobs(cfg, jobs, workers)
    out = []
    for m in cfg.methods:
        sel = sorted((r for r in rows if r["binarizer"] == m), key=lambda r: (r["test_loss"], r["seed"]))
        out += [{"method": m, "rank": i, "seed": r["seed"], "test_loss": r["test_loss"],
                 "test_accuracy": r["test_accuracy"]} for i, r in enumerate(sel)]
    write_csv(run_dir / "metrics.csv", ("method", "rank", "seed", "test_loss", "test_accuracy"), out)
    if plots:
        from . import plotting
        plotting.plot_multi_seed(out, run_dir / "multi_seed.png")
    res = {}
    for m in cfg.methods:
        sel = [r for r in out if r["method"] == m]
        res[m] = {"mean_test_loss": float(np.mean([r["test_loss"] for r in sel])),
                  "mean_test_accuracy": float(np.mean([r["test_accuracy"] for r in sel]))}
    return res


def cmd_enumerate_toy(cfg: ExperimentConfig, run_dir: Path, plots: bool, workers: int) -> dict:
    rows, res = [], {}
    for r in cfg.resolutions:
        space = SolutionSpace(r, cfg.bound, cfg.criterion)
        sel = space_rows(space)
        rows += sel
        total, uniq = space.all().unique, [x["unique_solutions"] for x in sel]
        res[str(r)] = {"unique_all": total, "unique_n_neg_6": uniq[6],
                       "bihalf_fraction": uniq[6] / total if total else 0.0,
                       "argmax_n_neg": int(np.argmax(uniq)),
                       "matches_reference": (total, uniq[6]) == (TOY_REFERENCE["all"],
                                                                 TOY_REFERENCE["n_neg_6"])}
    emit_solution_space_csv(rows, run_dir / "metrics.csv")
    if plots:
        from . import plotting
        plotting.plot_toy(rows, run_dir / "toy.png")
    return {"reference": TOY_REFERENCE, "by_resolution": res}


RUNNERS = {"train": cmd_train, "sweep-ratio": cmd_sweep_ratio, "prune-sweep": cmd_prune_sweep,
           "multi-seed": cmd_multi_seed, "enumerate-toy": cmd_enumerate_toy}


# -- argument parsing -----------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for name, default in _DEFAULTS.items():
        flag = "--" + name.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, dest=name, default=argparse.SUPPRESS,
                           metavar="LIST" if name in _TUPLE_TYPES else None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bihalf", description=__doc__.splitlines()[0],
        epilog=f"Dataset files are looked up under --data-dir, else ${DATA_DIR_ENV}, else ./data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "selftest":
            continue
        p.add_argument("--config", help="JSON config (or an earlier summary.json)")
        p.add_argument("--workers", type=int, default=1, help="process pool size for sweeps")
        p.add_argument("--no-plots", action="store_true")
        _add_config_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        from . import selftest
        return 0 if selftest.run() else 1
    overrides = {k: v for k, v in vars(args).items() if k in _DEFAULTS}
    try:
        file_values = read_config_file(args.config) if args.config else None
        cfg = build_config(file_values, overrides)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run_dir = make_run_dir(cfg, args.command)
    try:
        results = RUNNERS[args.command](cfg, run_dir, not args.no_plots, args.workers)
    except TrainingDiverged as exc:
        (run_dir / "divergence.txt").write_text(str(exc) + "\n")
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    write_summary(run_dir, args.command, cfg, results)
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())

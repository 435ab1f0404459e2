"""Multi-seed experiment runner behind ``autopoly run`` and ``autopoly grid``.

Output layout for ``run``::

    <output>/summary.csv          one row: regime, dataset, accuracy statistics
    <output>/timing.csv           per-seed epoch time, wall time, peak memory
    <output>/run.json             resolved configuration and per-seed status
    <output>/seed_<s>/report.json full training report
    <output>/seed_<s>/model.json  checkpoint of the best-validation parameters
    <output>/seed_<s>/curves.csv  per-epoch curves (joint and auto regimes)

Timing numbers differ between runs, so ``summary.csv`` leaves its timing
columns empty unless ``report_timing = true``. Everything else written
under ``<output>`` except ``timing.csv`` is a deterministic function of
the configuration.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from autopoly.config import RunConfig
from autopoly.data import load_bundle, random_split, sbm_generate
from autopoly.errors import InputError, NumericError
from autopoly.model import save_checkpoint
from autopoly.train import (
    TrainReport,
    grid_search,
    train_auto,
    train_joint,
    train_mlp,
)

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("regime", "dataset", "seed_count", "mean_acc", "std_acc", "mean_epoch_sec", "peak_mem_bytes")
CURVES_HEADER = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc", "test_acc")
TIMING_HEADER = ("seed", "epochs_run", "mean_epoch_sec", "wall_sec", "peak_mem_bytes")
THREADS_ENV = "AUTOPOLY_THREADS"


@dataclass
class SeedOutcome:
    seed: int
    report: TrainReport | None = None
    grid: object | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.report is not None and not self.report.diverged


@dataclass
class Summary:
    regime: str
    dataset: str
    seed_count: int
    mean_acc: float
    std_acc: float
    mean_epoch_sec: float | None = None
    peak_mem_bytes: int | None = None
    std_defined: bool = True
    failed_seeds: list = field(default_factory=list)


def worker_count(configured: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return configured
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def load_data(cfg: RunConfig):
    bundle = load_bundle(cfg.bundle) if cfg.bundle is not None else sbm_generate(cfg.sbm)
    return bundle.row_normalized() if cfg.row_normalize else bundle


def run_seed(cfg: RunConfig, bundle, seed: int) -> SeedOutcome:
    try:
        split = random_split(bundle.n, *cfg.ratios, seed=seed, labels=bundle.labels)
        if cfg.regime == "joint":
            rep = train_joint(bundle, split, cfg.model, cfg.epochs, cfg.patience, seed)
        elif cfg.regime == "auto":
            rep = train_auto(bundle, split, cfg.model, cfg.meta, cfg.epochs, cfg.patience, seed)
        elif cfg.regime == "mlp-baseline":
            rep = train_mlp(bundle, split, cfg.model, cfg.epochs, cfg.patience, seed)
        else:
            g = cfg.grid
            res = grid_search(bundle, split, cfg.model, g.values, g.order, g.epochs, g.patience, seed)
            return SeedOutcome(seed, res.best_report, res)
    except (InputError, NumericError) as exc:
        log.warning("seed %d failed: %s", seed, exc)
        return SeedOutcome(seed, error=str(exc))
    if rep.diverged:
        return SeedOutcome(seed, rep, error=rep.error or "diverged")
    return SeedOutcome(seed, rep)


def summarize(cfg: RunConfig, dataset: str, outcomes) -> Summary:
    good = [o for o in outcomes if o.ok]
    failed = [o.seed for o in outcomes if not o.ok]
    if failed:
        log.warning("excluding failed seeds %s from the summary", failed)
    if not good:
        raise NumericError(f"all {len(outcomes)} seeds failed")
    accs = np.array([o.report.test_acc for o in good])
    mean = float(np.mean(accs))
    if accs.size > 1:
        std, defined = float(np.std(accs, ddof=1)), True
    else:
        log.warning("a single successful seed: standard deviation reported as 0")
        std, defined = 0.0, False
    s = Summary(cfg.regime, dataset, int(accs.size), mean, std, std_defined=defined, failed_seeds=failed)
    if cfg.report_timing:
        s.mean_epoch_sec = float(np.mean([o.report.mean_epoch_seconds for o in good]))
        s.peak_mem_bytes = int(max(o.report.peak_mem_bytes for o in good))
    return s


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_csv(summary: Summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerow([_fmt(getattr(summary, k)) for k in SUMMARY_HEADER])
    return buf.getvalue()


def curves_csv(report: TrainReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    c = report.curves
    for i in range(report.epochs_run):
        w.writerow([i + 1] + [repr(float(c[k][i])) for k in CURVES_HEADER[1:]])
    return buf.getvalue()


def grid_table_csv(result) -> str:
    order = len(result.best_theta) - 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index"] + [f"theta_{k}" for k in range(order + 1)]
               + ["val_acc", "test_acc", "train_acc", "best_epoch"])
    for row in result.table:
        w.writerow([row["index"]] + [repr(float(t)) for t in row["theta"]]
                   + [repr(row["val_acc"]), repr(row["test_acc"]), repr(row["train_acc"]), row["best_epoch"]])
    return buf.getvalue()


def best_theta_json(result) -> str:
    row = result.table[result.best_index]
    doc = {"index": result.best_index, "theta": [float(t) for t in result.best_theta],
           "val_acc": result.best_val_acc, "test_acc": row["test_acc"], "candidates": len(result.table)}
    return json.dumps(doc, indent=1) + "\n"


def _write_seed(cfg: RunConfig, root: Path, outcome: SeedOutcome) -> None:
    d = root / f"seed_{outcome.seed}"
    d.mkdir(parents=True, exist_ok=True)
    doc = {"seed": outcome.seed, "status": "ok" if outcome.ok else "failed", "error": outcome.error}
    if outcome.report is not None:
        doc["report"] = outcome.report.to_dict(timing=cfg.report_timing)
        if outcome.report.state is not None:
            save_checkpoint(outcome.report.state, d / "model.json",
                            extra={"regime": cfg.regime, "seed": outcome.seed})
        if cfg.regime in ("joint", "auto"):
            (d / "curves.csv").write_text(curves_csv(outcome.report), encoding="utf-8")
    if outcome.grid is not None:
        (d / "grid_table.csv").write_text(grid_table_csv(outcome.grid), encoding="utf-8")
        (d / "best_theta.json").write_text(best_theta_json(outcome.grid), encoding="utf-8")
    (d / "report.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _timing_csv(outcomes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_HEADER)
    for o in outcomes:
        r = o.report
        if r is None:
            w.writerow([o.seed, 0, "", "", ""])
        else:
            w.writerow([o.seed, r.epochs_run, repr(r.mean_epoch_seconds), repr(r.wall_seconds), r.peak_mem_bytes])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def run_experiment(cfg: RunConfig) -> Summary:
    """Run every seed, write all outputs, and return the summary row."""
    bundle = load_data(cfg)
    workers = min(worker_count(cfg.workers), len(cfg.seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda s: run_seed(cfg, bundle, s), cfg.seeds))
    else:
        outcomes = [run_seed(cfg, bundle, s) for s in cfg.seeds]

    root = cfg.output
    root.mkdir(parents=True, exist_ok=True)
    for o in outcomes:
        _write_seed(cfg, root, o)
    (root / "timing.csv").write_text(_timing_csv(outcomes), encoding="utf-8")
    summary = summarize(cfg, bundle.name, outcomes)
    (root / "summary.csv").write_text(summary_csv(summary), encoding="utf-8")
    manifest = {
        "regime": cfg.regime,
        "dataset": bundle.name,
        "nodes": bundle.n,
        "edges": bundle.graph.num_edges,
        "ratios": list(cfg.ratios),
        "protocol": cfg.protocol,
        "seeds": [{"seed": o.seed, "status": "ok" if o.ok else "failed", "error": o.error} for o in outcomes],
        "std_defined": summary.std_defined,
        "model": asdict(cfg.model),
        "meta": asdict(cfg.meta),
        "config": _jsonable(cfg.raw),
    }
    (root / "run.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return summary


def run_grid(cfg: RunConfig):
    """Grid search on the first configured seed; writes grid_table.csv and best_theta.json."""
    bundle = load_data(cfg)
    seed = cfg.seeds[0]
    split = random_split(bundle.n, *cfg.ratios, seed=seed, labels=bundle.labels)
    g = cfg.grid
    result = grid_search(bundle, split, cfg.model, g.values, g.order, g.epochs, g.patience, seed,
                         workers=worker_count(cfg.workers))
    root = cfg.output
    root.mkdir(parents=True, exist_ok=True)
    (root / "grid_table.csv").write_text(grid_table_csv(result), encoding="utf-8")
    (root / "best_theta.json").write_text(best_theta_json(result), encoding="utf-8")
    return result


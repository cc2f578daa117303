"""MAE, the raw-feature k-NN baseline, single runs and seed x size tables."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .dataio import Dataset, make_split
from .trainer import TrainConfig, alternate_train, predict_batch

log = logging.getLogger(__name__)

METHODS = ("dml-s2r", "step1-only", "knn-raw")


def mae(predictions, truth) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("mae of an empty vector")
    return float(np.mean(np.abs(p - t)))


def knn_regress(train_x, train_y, query, k: int = 3) -> np.ndarray:
    """Mean target of the k nearest (Euclidean) training rows; ties by lower index."""
    train_x = np.ascontiguousarray(train_x, dtype=np.float64)
    train_y = np.ascontiguousarray(train_y, dtype=np.float64)
    query = np.ascontiguousarray(np.atleast_2d(query), dtype=np.float64)
    if not 1 <= k <= train_x.shape[0]:
        raise ValueError(f"k must be in [1, {train_x.shape[0]}], got {k}")
    return _kernels.knn_predict(train_x, train_y, query, k)


def load_references() -> dict:
    text = resources.files("dmls2r").joinpath("reference_values.json").read_text()
    return json.loads(text)["values"]


@dataclass
class RunReport:
    dataset: str
    n_labeled: int
    n_unlabeled: int
    n_test: int
    n_rows: int
    n_raw_rows: int | None
    seeds: list[int]
    method: str
    mae: float
    per_seed_mae: list[float]
    history: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mae < 0:
            raise ValueError("MAE must be non-negative")
        if len(self.per_seed_mae) != len(self.seeds):
            raise ValueError("per-seed MAE list must match the seed list")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def versions() -> dict:
    return {"dmls2r": __version__, "numpy": np.__version__, "kernels": _kernels.backend()}


def method_config(method: str, cfg: TrainConfig) -> TrainConfig:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "step1-only" and cfg.use_dml:
        return replace(cfg, use_dml=False)
    return cfg


def run_experiment(ds: Dataset, n_labeled: int, seed: int, method: str, cfg: TrainConfig | None = None,
                   n_unlabeled: int = 1000, knn_k: int = 3, timing: bool = False, return_state: bool = False):
    """Split, train by method tag, score on the whole test partition.

    The training seed is ``seed`` for every method, so the split and the
    initialisation both follow from it.
    """
    cfg = method_config(method, replace(cfg or TrainConfig(), seed=seed))
    split = make_split(ds, n_labeled, n_unlabeled, seed)
    X, y = ds.features, ds.targets
    Xl, yl = X[split.labeled_idx], y[split.labeled_idx]
    Xt, yt = X[split.test_idx], y[split.test_idx]

    state = None
    if method == "knn-raw":
        pred = knn_regress(Xl, yl, Xt, min(knn_k, n_labeled))
        history, conf = {}, {"knn_k": knn_k, "seed": seed}
    else:
        state = alternate_train(Xl, yl, X[split.unlabeled_idx], cfg)
        pred = predict_batch(state.model, Xt, Xl, yl)
        history, conf = state.history.to_dict(timing), cfg.to_dict()

    err = mae(pred, yt)
    report = RunReport(
        dataset=ds.name, n_labeled=n_labeled, n_unlabeled=n_unlabeled, n_test=int(yt.shape[0]),
        n_rows=ds.n_samples, n_raw_rows=ds.n_raw_rows, seeds=[int(seed)], method=method,
        mae=err, per_seed_mae=[err], history=history, config=conf, versions=versions(),
    )
    return (report, state) if return_state else report


def _run_cell(args):
    ds, size, seed, method, cfg, n_unlabeled, knn_k = args
    try:
        return run_experiment(ds, size, seed, method, cfg, n_unlabeled, knn_k), None
    except Exception as exc:  # recorded per cell
        return None, f"{type(exc).__name__}: {exc}"


def monotone_inversions(values) -> int:
    """Number of adjacent increases in a sequence meant to be non-increasing."""
    v = list(values)
    return sum(1 for a, b in zip(v[:-1], v[1:]) if b > a)


def check_monotone(values, allowed: int = 1) -> bool:
    inv = monotone_inversions(values)
    if inv:
        warnings.warn(f"MAE increased with more labels at {inv} step(s): {list(values)}")
    return inv <= allowed


@dataclass
class Table:
    dataset: str
    sizes: list[int]
    seeds: list[int]
    cells: dict  # method -> size -> {"median", "iqr", "per_seed"}
    reference: dict  # method -> size -> value
    failures: list = field(default_factory=list)
    reports: list = field(default_factory=list, repr=False)

    def median(self, method: str, size: int) -> float:
        return self.cells[method][size]["median"]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "sizes": self.sizes,
            "seeds": self.seeds,
            "cells": {m: {str(s): c for s, c in row.items()} for m, row in self.cells.items()},
            "reference": self.reference,
            "failures": self.failures,
        }

    def write(self, out_dir: str | Path) -> None:
        root = Path(out_dir) / self.dataset
        root.mkdir(parents=True, exist_ok=True)
        for r in self.reports:
            p = root / r.method / str(r.n_labeled) / f"{r.seeds[0]}.json"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(r.to_json())
        (root / "table.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with (root / "table.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", *[f"S={s}" for s in self.sizes]])
            for m, row in self.cells.items():
                w.writerow([m, *[_fmt_cell(row.get(s)) for s in self.sizes]])
            for m, ref in self.reference.items():
                w.writerow([f"published:{m}", *[ref.get(str(s), "") for s in self.sizes]])


def _fmt_cell(c) -> str:
    if c is None or c["median"] is None:
        return "failed"
    return f"{c['median']:.3f} ± {c['iqr'] / 2:.3f}"


def run_table(ds: Dataset, sizes, seeds, cfg: TrainConfig | None = None, methods=("dml-s2r",),
              n_unlabeled: int = 1000, knn_k: int = 3, workers: int = 1) -> Table:
    """Median (and IQR) MAE over seeds for every (method, size) cell."""
    sizes, seeds = [int(s) for s in sizes], [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    cfg = cfg or TrainConfig()
    jobs = [(ds, s, sd, m, cfg, n_unlabeled, knn_k) for m in methods for s in sizes for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    cells: dict = {m: {} for m in methods}
    failures, reports = [], []
    for (_, s, sd, m, *_), (rep, err) in zip(jobs, results):
        if err is not None:
            log.error("cell %s |S|=%d seed=%d failed: %s", m, s, sd, err)
            failures.append({"method": m, "size": s, "seed": sd, "error": err})
            continue
        reports.append(rep)
        cells[m].setdefault(s, []).append((sd, rep.mae))

    for m in methods:
        for s in sizes:
            vals = dict(sorted(cells[m].get(s, [])))
            if len(vals) < len(seeds):
                cells[m][s] = {"median": None, "iqr": None, "per_seed": {str(k): v for k, v in vals.items()}}
                continue
            arr = np.array(list(vals.values()))
            q1, q3 = np.percentile(arr, [25, 75])
            cells[m][s] = {"median": float(np.median(arr)), "iqr": float(q3 - q1),
                           "per_seed": {str(k): v for k, v in vals.items()}}

    refs = load_references().get(ds.name, {})
    reference = {m: {k: v for k, v in refs[m].items()} for m in methods if m in refs}
    return Table(ds.name, sizes, seeds, cells, reference, failures, reports)

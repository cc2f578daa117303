"""Command-line entry point: ``dmls2r prepare | train | bench``.

Values resolve as flags > ``--config`` file ([run] section) > defaults. Every
command prints its resolved configuration as an INI block that can be fed
back through ``--config``.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, dataio
from .dml import RLLConfig
from .trainer import TrainConfig, TrainState, alternate_train, predict_batch

log = logging.getLogger("dmls2r")


class UsageError(Exception):
    pass


DEFAULTS = {
    "schema": None,
    "data": None,
    "out": "reports",
    "sizes": "10,20,50",
    "seeds": "5",
    "seed": 0,
    "n_labeled": 10,
    "n_unlabeled": None,   # schema decides
    "cycles": 30,
    "lr": 1e-3,
    "k": 5,
    "tau": 10.0,
    "alpha": 1.0,
    "margin": 0.4,
    "batch_size": 64,
    "method": "dml-s2r",
    "ablation": False,
    "signed_selection": False,
    "rll_neg_weight": "rll",
    "epoch_semantics": "cycles",
    "fit_scope": "all",
    "knn_k": 3,
    "workers": 1,
    "timing": False,
}

TYPES = {
    "seed": int, "n_labeled": int, "n_unlabeled": int, "cycles": int, "lr": float, "k": int,
    "tau": float, "alpha": float, "margin": float, "batch_size": int, "knn_k": int, "workers": int,
}
BOOLS = ("ablation", "signed_selection", "timing")

# which keys each command echoes
COMMAND_KEYS = {
    "prepare": ("schema", "data", "out", "fit_scope"),
    "train": ("schema", "data", "out", "seed", "n_labeled", "n_unlabeled", "cycles", "lr", "k", "tau",
              "alpha", "margin", "batch_size", "method", "signed_selection", "rll_neg_weight",
              "epoch_semantics", "fit_scope", "knn_k", "timing"),
    "bench": ("schema", "data", "out", "sizes", "seeds", "n_unlabeled", "cycles", "lr", "k", "tau", "alpha",
              "margin", "batch_size", "method", "ablation", "signed_selection", "rll_neg_weight",
              "epoch_semantics", "fit_scope", "knn_k", "workers", "timing"),
}


def _add_common(p: argparse.ArgumentParser, cmd: str):
    keys = COMMAND_KEYS[cmd]
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--schema", help="schema INI path or builtin name (boston, superconductivity, airquality)")
    p.add_argument("--data", help="raw CSV path (optional for boston)")
    p.add_argument("--out", help="output directory")
    if "fit_scope" in keys:
        p.add_argument("--fit-scope", choices=("all", "train"), help="rows used to fit min-max scaling")
    if cmd == "prepare":
        return
    p.add_argument("--cycles", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--method")
    p.add_argument("--signed-selection", action="store_true", default=None)
    p.add_argument("--rll-neg-weight", choices=("shared", "rll"))
    p.add_argument("--epoch-semantics", choices=("cycles", "total"))
    p.add_argument("--n-unlabeled", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--timing", action="store_true", default=None, help="include wall-clock in reports")
    if cmd == "train":
        p.add_argument("--seed", type=int)
        p.add_argument("--n-labeled", type=int)
        p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.json")
    else:
        p.add_argument("--sizes", help="comma list of labeled-set sizes")
        p.add_argument("--seeds", help="a count N (seeds 0..N-1) or a comma list")
        p.add_argument("--ablation", action="store_true", default=None,
                       help="add step1-only rows and |S|=100")
        p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmls2r", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd, help_ in (("prepare", "clean and normalize a dataset"),
                       ("train", "train one (dataset, |S|, seed) run"),
                       ("bench", "run the seed x size table")):
        _add_common(sub.add_parser(cmd, help=help_), cmd)
    return ap


def _coerce(key, value):
    if value is None:
        return None
    if key in BOOLS:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if key in TYPES:
        try:
            return TYPES[key](value)
        except ValueError:
            raise UsageError(f"{key}: expected {TYPES[key].__name__}, got {value!r}") from None
    return value


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(path)
        section = cp["run"] if "run" in cp else cp[cp.default_section]
        for k, v in section.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            cfg[key] = v if v != "" else None
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    if not cfg["schema"]:
        raise UsageError("--schema is required")
    return cfg


def echo(cfg: dict, command: str, stream=None) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {k: "" if cfg[k] is None else str(cfg[k]) for k in COMMAND_KEYS[command]}
    buf = io.StringIO()
    cp.write(buf)
    text = buf.getvalue()
    print(f"# resolved configuration ({command})\n{text}", end="", file=stream or sys.stdout)
    return text


def _parse_int_list(text, name) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated integers, got {text!r}") from None


def _parse_seeds(text) -> list[int]:
    items = _parse_int_list(text, "seeds")
    if len(items) == 1 and "," not in str(text):
        if items[0] < 1:
            raise UsageError("seeds: need at least one seed")
        return list(range(items[0]))
    if not items:
        raise UsageError("seeds: need at least one seed")
    return items


def _train_config(cfg: dict, seed: int = 0) -> TrainConfig:
    try:
        rll = RLLConfig(tau=cfg["tau"], alpha=cfg["alpha"], margin=cfg["margin"], k=cfg["k"],
                        neg_weight=cfg["rll_neg_weight"], signed_selection=cfg["signed_selection"])
        return TrainConfig(cycles=cfg["cycles"], batch_size=cfg["batch_size"], lr=cfg["lr"], rll=rll,
                           seed=seed, epoch_semantics=cfg["epoch_semantics"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(cfg: dict, normalize: bool = True):
    try:
        schema = dataio.load_schema(cfg["schema"])
    except dataio.DataError as exc:
        raise UsageError(str(exc)) from None
    if cfg["n_unlabeled"] is None:
        cfg["n_unlabeled"] = schema.n_unlabeled
    path = cfg["data"]
    if path is None:
        bundled = dataio.builtin_data_path(schema.name)
        if bundled is None:
            raise UsageError(f"--data is required for {schema.name!r}")
        path = bundled
    try:
        if normalize:
            ds, params = dataio.prepare(path, schema)
        else:
            ds = dataio.load_csv(path, schema)
            if schema.sentinel is not None:
                ds = dataio.clean_sentinels(ds, schema.sentinel)
            params = None
    except dataio.DataError as exc:
        raise UsageError(str(exc)) from None
    return schema, ds, params


def _check_k(cfg):
    if 2 * cfg["k"] > cfg["n_unlabeled"]:
        raise UsageError(f"k > M/2: need 2*k <= n_unlabeled (k={cfg['k']}, M={cfg['n_unlabeled']})")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_prepare(cfg: dict) -> int:
    echo(cfg, "prepare")
    schema, ds, params = _load(cfg)
    data_path, norm_path = dataio.write_prepared(ds, params, cfg["out"], schema.target)
    n_const = int(params.constant.sum())
    print(f"{ds.name}: {ds.n_raw_rows} raw rows -> {ds.n_samples} rows x {ds.n_features} variables "
          f"({n_const} constant); wrote {data_path} and {norm_path}")
    return 0


def cmd_train(cfg: dict, resume: bool = False) -> int:
    schema, ds, _ = _load(cfg, normalize=cfg["fit_scope"] == "all")
    _check_k(cfg)
    echo(cfg, "train")
    tcfg = _train_config(cfg, seed=cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        split = dataio.make_split(ds, cfg["n_labeled"], cfg["n_unlabeled"], cfg["seed"])
    except dataio.DataError as exc:
        raise UsageError(str(exc)) from None
    if cfg["fit_scope"] == "train":
        rows = np.concatenate([split.labeled_idx, split.unlabeled_idx])
        ds = dataio.apply_minmax(ds, dataio.fit_minmax(replace(ds, features=ds.features[rows], targets=ds.targets[rows])))
    (out / "split.json").write_text(split.to_json() + "\n")

    method = cfg["method"]
    if method not in bench.METHODS:
        raise UsageError(f"unknown method {method!r}")
    ckpt = out / "checkpoint.json"
    X, y = ds.features, ds.targets
    Xl, yl = X[split.labeled_idx], y[split.labeled_idx]
    Xt, yt = X[split.test_idx], y[split.test_idx]

    if method == "knn-raw":
        pred = bench.knn_regress(Xl, yl, Xt, min(cfg["knn_k"], len(yl)))
        history, conf = {}, {"knn_k": cfg["knn_k"], "seed": cfg["seed"]}
    else:
        tcfg = bench.method_config(method, tcfg)
        state = TrainState.from_dict(json.loads(ckpt.read_text())) if resume and ckpt.exists() else None

        def save(st):
            ckpt.write_text(st.dumps() + "\n")

        state = alternate_train(Xl, yl, X[split.unlabeled_idx], tcfg, state=state, callback=save)
        save(state)
        pred = predict_batch(state.model, Xt, Xl, yl)
        history, conf = state.history.to_dict(cfg["timing"]), tcfg.to_dict()

    err = bench.mae(pred, yt)
    report = bench.RunReport(
        dataset=ds.name, n_labeled=cfg["n_labeled"], n_unlabeled=cfg["n_unlabeled"], n_test=int(len(yt)),
        n_rows=ds.n_samples, n_raw_rows=ds.n_raw_rows, seeds=[cfg["seed"]], method=method, mae=err,
        per_seed_mae=[err], history=history, config=conf, versions=bench.versions(),
    )
    (out / "report.json").write_text(report.to_json())
    print(f"{ds.name} |S|={cfg['n_labeled']} seed={cfg['seed']} {method}: test MAE {err:.4f} "
          f"({len(yt)} test rows)")
    return 0


def cmd_bench(cfg: dict) -> int:
    sizes = _parse_int_list(cfg["sizes"], "sizes")
    seeds = _parse_seeds(cfg["seeds"])
    methods = [m.strip() for m in str(cfg["method"]).split(",") if m.strip()]
    for m in methods:
        if m not in bench.METHODS:
            raise UsageError(f"unknown method {m!r}")
    if cfg["ablation"]:
        if "step1-only" not in methods:
            methods.append("step1-only")
        if 100 not in sizes:
            sizes.append(100)
    if cfg["workers"] < 1:
        raise UsageError("workers must be >= 1")
    schema, ds, _ = _load(cfg, normalize=cfg["fit_scope"] == "all")
    if cfg["fit_scope"] == "train":
        raise UsageError("fit_scope=train is supported by `train`, not `bench`")
    _check_k(cfg)
    for s in sizes:
        if s >= cfg["n_unlabeled"] or s + cfg["n_unlabeled"] > ds.n_samples:
            raise UsageError(f"|S|={s} invalid with n_unlabeled={cfg['n_unlabeled']} and {ds.n_samples} rows")
    echo(cfg, "bench")
    tcfg = _train_config(cfg)
    table = bench.run_table(ds, sizes, seeds, tcfg, methods, cfg["n_unlabeled"], cfg["knn_k"], cfg["workers"])
    table.write(cfg["out"])
    print(f"{ds.name}: median test MAE over {len(seeds)} seed(s)")
    print("method".ljust(14) + "".join(f"|S|={s}".rjust(18) for s in sizes))
    for m in methods:
        print(m.ljust(14) + "".join(bench._fmt_cell(table.cells[m].get(s)).rjust(18) for s in sizes))
    for m, ref in table.reference.items():
        print(f"published:{m}".ljust(14) + "".join(str(ref.get(str(s), "-")).rjust(18) for s in sizes))
    for m in methods:
        meds = [table.cells[m][s]["median"] for s in sorted(sizes) if table.cells[m][s]["median"] is not None]
        if bench.monotone_inversions(meds):
            print(f"warning: {m} MAE not monotone in |S|: {meds}", file=sys.stderr)
    if table.failures:
        print(f"{len(table.failures)} cell run(s) failed; see table.json", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        return cmd_bench(cfg)
    except UsageError as exc:
        print(f"dmls2r: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"dmls2r: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

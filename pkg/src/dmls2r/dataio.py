"""Dataset loading, sentinel cleaning, min-max scaling and seeded splits."""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or invalid split/normalization requests."""


@dataclass(frozen=True)
class Schema:
    name: str
    target: str
    features: tuple[str, ...] | None = None  # None means every remaining column
    drop: tuple[str, ...] = ()
    delimiter: str = ","
    decimal: str = "."
    sentinel: float | None = None
    n_features: int | None = None
    n_unlabeled: int = 1000
    file: str | None = None


@dataclass(frozen=True)
class Dataset:
    name: str
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    n_raw_rows: int | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.features.shape[0] != self.targets.shape[0]:
            raise DataError(
                f"features have {self.features.shape[0]} rows but targets have {self.targets.shape[0]}"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names length does not match the feature matrix")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class NormParams:
    minimum: np.ndarray
    maximum: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    @property
    def constant(self) -> np.ndarray:
        return self.maximum == self.minimum

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "minimum": self.minimum.tolist(),
            "maximum": self.maximum.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormParams:
        return cls(np.asarray(d["minimum"], dtype=np.float64),
                   np.asarray(d["maximum"], dtype=np.float64),
                   list(d.get("feature_names", [])))


@dataclass(frozen=True)
class ExperimentSplit:
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "seed": int(self.seed),
            "labeled_idx": self.labeled_idx.tolist(),
            "unlabeled_idx": self.unlabeled_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> ExperimentSplit:
        d = json.loads(text)
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("labeled_idx", "unlabeled_idx", "test_idx")),
                   seed=int(d["seed"]))


# --------------------------------------------------------------------------
# schemas
# --------------------------------------------------------------------------

BUILTIN_SCHEMAS = ("boston", "superconductivity", "airquality")


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def load_schema(path_or_name: str | Path) -> Schema:
    """Read an INI schema file; a bare builtin name resolves to the packaged file."""
    p = Path(path_or_name)
    if str(path_or_name) in BUILTIN_SCHEMAS:
        text = resources.files("dmls2r.schemas").joinpath(f"{path_or_name}.ini").read_text()
    elif p.is_file():
        text = p.read_text()
    else:
        raise DataError(f"schema not found: {path_or_name}")

    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    if "dataset" not in cp:
        raise DataError("schema has no [dataset] section")
    s = cp["dataset"]
    feats = s.get("features", "*").strip()
    sentinel = s.get("sentinel", "").strip()
    n_feat = s.get("n_features", "").strip()
    return Schema(
        name=s.get("name", p.stem),
        target=s["target"].strip(),
        features=None if feats == "*" else _split_list(feats),
        drop=_split_list(s.get("drop", "")),
        delimiter=s.get("delimiter", ",").strip() or ",",
        decimal=s.get("decimal", ".").strip() or ".",
        sentinel=float(sentinel) if sentinel else None,
        n_features=int(n_feat) if n_feat else None,
        n_unlabeled=s.getint("n_unlabeled", 1000),
        file=s.get("file", None),
    )


def builtin_data_path(name: str) -> Path | None:
    """Path of a dataset shipped with the package (Boston only)."""
    f = resources.files("dmls2r.data").joinpath(f"{name}_housing.csv" if name == "boston" else f"{name}.csv")
    p = Path(str(f))
    return p if p.is_file() else None


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def _parse_cell(cell: str, decimal: str) -> float:
    cell = cell.strip()
    if decimal != ".":
        cell = cell.replace(decimal, ".")
    return float(cell)


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Parse a header CSV into a Dataset, keeping only the schema's columns."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")

    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no rows")
        header = [h.strip() for h in header]
        # trailing separators leave unnamed, empty columns (Air Quality does this)
        named = [i for i, h in enumerate(header) if h]

        if schema.target not in header:
            raise DataError(f"{path}: target column {schema.target!r} not in header")
        for col in schema.drop:
            if col not in header:
                raise DataError(f"{path}: column {col!r} listed in drop is not in header")
        if schema.features is None:
            feat_names = [header[i] for i in named if header[i] != schema.target and header[i] not in schema.drop]
        else:
            missing = [c for c in schema.features if c not in header]
            if missing:
                raise DataError(f"{path}: feature columns not in header: {missing}")
            feat_names = list(schema.features)
        if schema.n_features is not None and len(feat_names) != schema.n_features:
            raise DataError(
                f"{path}: schema expects {schema.n_features} feature columns, found {len(feat_names)}"
            )
        feat_cols = [header.index(c) for c in feat_names]
        tgt_col = header.index(schema.target)
        need = max(named) + 1

        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not any(c.strip() for c in row):
                continue
            if len(row) < need:
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                xs.append([_parse_cell(row[c], schema.decimal) for c in feat_cols])
                ys.append(_parse_cell(row[tgt_col], schema.decimal))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable cell ({exc})") from None

    if not xs:
        raise DataError(f"{path}: no rows")
    X = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    return Dataset(schema.name, X, y, feat_names, n_raw_rows=len(ys))


def clean_sentinels(d: Dataset, sentinel: float) -> Dataset:
    """Drop every row holding ``sentinel`` in a feature or the target, then
    any row left with a non-finite value."""
    if not math.isfinite(sentinel):
        raise DataError("sentinel must be finite")
    bad = (d.features == sentinel).any(axis=1) | (d.targets == sentinel)
    bad |= ~np.isfinite(d.features).all(axis=1) | ~np.isfinite(d.targets)
    if bad.all():
        raise DataError("no rows left after removing sentinel rows")
    keep = ~bad
    return replace(d, features=d.features[keep], targets=d.targets[keep])


def fit_minmax(d: Dataset) -> NormParams:
    if d.n_samples == 0:
        raise DataError("cannot fit normalization on an empty dataset")
    return NormParams(d.features.min(axis=0), d.features.max(axis=0), list(d.feature_names))


def apply_minmax(d: Dataset, p: NormParams) -> Dataset:
    if p.minimum.shape[0] != d.n_features or (p.feature_names and p.feature_names != d.feature_names):
        raise DataError("normalization parameters do not match the dataset's feature schema")
    span = p.maximum - p.minimum
    const = span == 0
    safe = np.where(const, 1.0, span)
    X = (d.features - p.minimum) / safe
    X[:, const] = 0.0
    return replace(d, features=X)


def make_split(d: Dataset | int, n_labeled: int, n_unlabeled: int, seed: int) -> ExperimentSplit:
    """Seeded permutation cut into labeled / unlabeled / test, in that order."""
    n = d if isinstance(d, int) else d.n_samples
    if n_labeled < 1 or n_unlabeled < 1:
        raise DataError("n_labeled and n_unlabeled must be positive")
    if n_labeled >= n_unlabeled:
        raise DataError(f"n_labeled ({n_labeled}) must be smaller than n_unlabeled ({n_unlabeled})")
    if n_labeled + n_unlabeled > n:
        raise DataError(f"n_labeled + n_unlabeled = {n_labeled + n_unlabeled} exceeds {n} samples")
    perm = np.random.default_rng(seed).permutation(n).astype(np.int64)
    return ExperimentSplit(
        labeled_idx=perm[:n_labeled],
        unlabeled_idx=perm[n_labeled:n_labeled + n_unlabeled],
        test_idx=perm[n_labeled + n_unlabeled:],
        seed=int(seed),
    )


def prepare(path: str | Path | None, schema: Schema, fit_on: np.ndarray | None = None) -> tuple[Dataset, NormParams]:
    """load -> clean -> fit -> apply. ``fit_on`` restricts fitting to a row subset."""
    if path is None:
        path = builtin_data_path(schema.name)
        if path is None:
            raise DataError(f"no data file given and no bundled copy of {schema.name!r}")
    d = load_csv(path, schema)
    n_raw = d.n_raw_rows
    if schema.sentinel is not None:
        d = clean_sentinels(d, schema.sentinel)
    elif not (np.isfinite(d.features).all() and np.isfinite(d.targets).all()):
        raise DataError(f"{path}: non-finite values and no sentinel configured")
    fit_ds = d if fit_on is None else replace(d, features=d.features[fit_on], targets=d.targets[fit_on])
    params = fit_minmax(fit_ds)
    out = apply_minmax(d, params)
    return replace(out, n_raw_rows=n_raw), params


def write_prepared(d: Dataset, p: NormParams, out_dir: str | Path, target_name: str = "target") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / f"{d.name}.prepared.csv"
    norm_path = out_dir / f"{d.name}.norm.json"
    with data_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.feature_names, target_name])
        for x, y in zip(d.features, d.targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    norm_path.write_text(json.dumps(p.to_dict(), indent=2) + "\n")
    return data_path, norm_path

"""Tabular dataset ingestion and preprocessing.

Pipeline, in order, all statistics fitted on the train split only:
  1. shuffle rows by seed, split 60/20/20 in shuffled order (rounding
     remainder goes to train),
  2. encode categorical features as integer codes in first-appearance order
     over the train split; categories unseen in train get one reserved code,
  3. impute missing numerics with the train mean, missing categoricals with
     the train mode,
  4. affinely scale each feature to [-1, 1] using train min/max (constant
     features map to 0); val/test are transformed with the train statistics,
     so they may fall slightly outside the range.

Scaling exists because the spline grids live on [-1, 1]; it can be disabled
for strict replication of the upstream recipe, which never mentions scaling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN_FRACTION, VAL_FRACTION, TEST_FRACTION = 0.6, 0.2, 0.2


class IngestionError(ValueError):
    pass


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str = "feature"    # feature | target | ignore
    type: str = "numeric"    # numeric | categorical


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    path: str | None = None
    columns: tuple = ()
    delimiter: str = ","          # "whitespace" splits on any run of blanks
    missing_values: tuple = ("?",)
    has_header: bool = False
    expected_instances: int | None = None
    expected_features: int | None = None
    expected_classes: int | None = None
    synthetic: dict | None = None  # {"kind", "n_features", "n_instances", ...}

    def feature_columns(self):
        return [c for c in self.columns if c.role == "feature"]

    def target_column(self):
        targets = [c for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise IngestionError(
                f"manifest {self.name!r} must declare exactly one target column, "
                f"found {len(targets)}")
        return targets[0]

    def validate(self):
        if self.synthetic is not None:
            return
        self.target_column()
        if not self.feature_columns():
            raise IngestionError(f"manifest {self.name!r} declares no feature columns")
        if (self.expected_features is not None
                and self.expected_features != len(self.feature_columns())):
            raise IngestionError(
                f"manifest {self.name!r} declares {len(self.feature_columns())} "
                f"feature columns but expects {self.expected_features}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    expected = doc.pop("expected", {})
    columns = tuple(ColumnSpec(**c) for c in doc.pop("columns", []))
    manifest = DatasetManifest(
        name=doc["name"],
        path=str((path.parent / doc["path"]).resolve()) if doc.get("path") else None,
        columns=columns,
        delimiter=doc.get("delimiter", ","),
        missing_values=tuple(doc.get("missing_values", ["?"])),
        has_header=bool(doc.get("has_header", False)),
        expected_instances=expected.get("instances"),
        expected_features=expected.get("features"),
        expected_classes=expected.get("classes"),
        synthetic=doc.get("synthetic"),
    )
    manifest.validate()
    return manifest


@dataclass
class RawTable:
    """Typed columns with missing cells as None; shape checked against the manifest."""

    manifest: DatasetManifest
    columns: dict            # column name -> list of float | str | None
    n_rows: int
    n_missing: int


def load_table(path, manifest: DatasetManifest) -> RawTable:
    """Parse a delimited text file per the manifest's column specs."""
    manifest.validate()
    sentinels = set(manifest.missing_values)
    specs = list(manifest.columns)
    columns = {c.name: [] for c in specs}
    n_missing = 0
    n_rows = 0
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with f:
        if manifest.delimiter == "whitespace":
            rows = (line.split() for line in f if line.strip())
        else:
            rows = csv.reader(f, delimiter=manifest.delimiter)
        for row_no, row in enumerate(rows, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if manifest.has_header and row_no == 1:
                continue
            if len(row) != len(specs):
                raise IngestionError(
                    f"{path}: row {row_no} has {len(row)} fields, manifest "
                    f"{manifest.name!r} declares {len(specs)} columns")
            n_rows += 1
            for spec, cell in zip(specs, row):
                cell = cell.strip()
                if cell in sentinels or cell == "":
                    columns[spec.name].append(None)
                    n_missing += 1
                    continue
                if spec.role == "feature" and spec.type == "numeric":
                    try:
                        columns[spec.name].append(float(cell))
                    except ValueError as exc:
                        raise IngestionError(
                            f"{path}: row {row_no}, column {spec.name!r}: "
                            f"cannot parse {cell!r} as numeric") from exc
                else:
                    columns[spec.name].append(cell)
    if n_rows == 0:
        raise IngestionError(f"{path}: no data rows")
    return RawTable(manifest=manifest, columns=columns, n_rows=n_rows,
                    n_missing=n_missing)


@dataclass
class FeatureStats:
    kind: str                      # numeric | categorical
    impute_value: object = None
    categories: dict | None = None  # category -> code, fitted on train
    reserved_code: int | None = None
    lo: float | None = None        # train min/max before scaling
    hi: float | None = None


@dataclass
class Dataset:
    name: str
    features: np.ndarray           # (instances, features) float64
    labels: np.ndarray             # (instances,) int64 in [0, n_classes)
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int
    label_names: list
    feature_names: list
    stats: dict = field(default_factory=dict)   # feature name -> FeatureStats
    seed: int = 0
    scaled: bool = True
    warnings: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]


def _split_sizes(n: int):
    # rounding (not flooring) keeps every split within one row of its
    # fraction; the remainder lands in train
    n_val = round(n * VAL_FRACTION)
    n_test = round(n * TEST_FRACTION)
    return n - n_val - n_test, n_val, n_test


def _encode_labels(values, name):
    observed = [v for v in values if v is not None]
    if len(observed) != len(values):
        raise PreprocessError(f"{name}: target column has missing values")
    distinct = set(observed)
    if len(distinct) < 2:
        raise PreprocessError(f"{name}: target has a single class")
    # stable vocabulary: numeric order when every label parses as a number
    try:
        vocab = sorted(distinct, key=float)
    except (TypeError, ValueError):
        vocab = sorted(str(v) for v in distinct)
    code = {v: i for i, v in enumerate(vocab)}
    return np.array([code[v] for v in values], dtype=np.int64), [str(v) for v in vocab]


def _mode(values):
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.items(), key=lambda kv: kv[1])[1]
    for v in values:             # first-appearance order breaks ties
        if counts[v] == best:
            return v
    raise AssertionError("unreachable")


def preprocess(raw: RawTable, manifest: DatasetManifest, seed: int,
               scale_features: bool = True) -> Dataset:
    """Shuffle, split, encode, impute, and scale one raw table."""
    manifest.validate()
    n = raw.n_rows
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train, n_val, n_test = _split_sizes(n)
    train_rows = perm[:n_train]
    train_set = set(train_rows.tolist())

    labels, label_names = _encode_labels(raw.columns[manifest.target_column().name],
                                         manifest.name)
    warnings = []
    if manifest.expected_instances is not None and manifest.expected_instances != n:
        warnings.append(f"expected {manifest.expected_instances} instances, found {n}")
    if (manifest.expected_classes is not None
            and manifest.expected_classes != len(label_names)):
        warnings.append(f"expected {manifest.expected_classes} classes, "
                        f"found {len(label_names)}")

    feature_specs = manifest.feature_columns()
    matrix = np.empty((n, len(feature_specs)), dtype=np.float64)
    stats = {}
    for j, spec in enumerate(feature_specs):
        col = raw.columns[spec.name]
        observed_train = [col[i] for i in train_rows if col[i] is not None]
        if not observed_train:
            raise PreprocessError(
                f"{manifest.name}: feature {spec.name!r} has no observed values "
                f"in the train split")
        if spec.type == "categorical":
            codes = {}
            for i in train_rows:         # first appearance in shuffled train order
                v = col[i]
                if v is not None and v not in codes:
                    codes[v] = len(codes)
            impute = _mode(observed_train)
            reserved = len(codes)
            st = FeatureStats(kind="categorical", impute_value=impute,
                              categories=codes, reserved_code=reserved)
            for i in range(n):
                v = col[i] if col[i] is not None else impute
                matrix[i, j] = codes.get(v, reserved)
        else:
            impute = float(np.mean(observed_train))
            st = FeatureStats(kind="numeric", impute_value=impute)
            for i in range(n):
                matrix[i, j] = col[i] if col[i] is not None else impute
        if scale_features:
            lo = float(matrix[train_rows, j].min())
            hi = float(matrix[train_rows, j].max())
            st.lo, st.hi = lo, hi
            if hi > lo:
                matrix[:, j] = (matrix[:, j] - lo) / (hi - lo) * 2.0 - 1.0
            else:
                matrix[:, j] = 0.0
        stats[spec.name] = st

    return Dataset(
        name=manifest.name,
        features=matrix,
        labels=labels,
        train_idx=train_rows,
        val_idx=perm[n_train: n_train + n_val],
        test_idx=perm[n_train + n_val:],
        n_classes=len(label_names),
        label_names=label_names,
        feature_names=[c.name for c in feature_specs],
        stats=stats,
        seed=seed,
        scaled=scale_features,
        warnings=warnings,
    )


def synthetic_dataset(kind: str, n_features: int, n_instances: int, seed: int,
                      n_classes: int = 3, separation: float = 0.35,
                      noise: float = 0.12, name: str | None = None) -> Dataset:
    """Deterministic labeled data for desk-scale experiments.

    "xor": class = xor of the signs of the first two features; a thin band
    around those two axes is excluded so labels stay unambiguous.
    "gaussian-blobs": class c is an isotropic Gaussian (std = noise) around a
    class-specific sign pattern scaled by `separation`, so every feature
    carries signal. The defaults give well-separated clusters; small
    separation with large noise gives a weak-signal task whose optimum keeps
    activations moderate.
    """
    if n_features < 2:
        raise ValueError(f"need at least 2 features, got {n_features}")
    if n_instances < 10:
        raise ValueError(f"need at least 10 instances, got {n_instances}")
    rng = np.random.default_rng(seed)
    if kind == "xor":
        x = rng.uniform(-1.0, 1.0, size=(n_instances, n_features))
        margin = 0.05
        for j in (0, 1):
            tight = np.abs(x[:, j]) < margin
            x[tight, j] = np.sign(x[tight, j] + 1e-12) * (
                margin + np.abs(x[tight, j]))
        y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.int64)
        n_classes = 2
    elif kind == "gaussian-blobs":
        if not 2 <= n_classes <= 2 ** min(n_features, 20):
            raise ValueError(f"cannot place {n_classes} distinct classes")
        seen = set()
        patterns = np.empty((n_classes, n_features))
        for c in range(n_classes):
            while True:
                p = rng.choice([-1.0, 1.0], size=n_features)
                key = p.tobytes()
                if key not in seen:
                    seen.add(key)
                    patterns[c] = p
                    break
        y = rng.integers(0, n_classes, size=n_instances).astype(np.int64)
        x = np.clip(patterns[y] * separation
                    + rng.normal(0.0, noise, size=(n_instances, n_features)),
                    -1.0, 1.0)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")

    n = n_instances
    perm = rng.permutation(n)
    n_train, n_val, n_test = _split_sizes(n)
    train_rows = perm[:n_train]
    stats = {}
    scaled = x.copy()
    for j in range(n_features):
        lo, hi = float(x[train_rows, j].min()), float(x[train_rows, j].max())
        stats[f"f{j}"] = FeatureStats(kind="numeric", lo=lo, hi=hi)
        scaled[:, j] = ((x[:, j] - lo) / (hi - lo) * 2.0 - 1.0) if hi > lo else 0.0
    return Dataset(
        name=name or f"synthetic-{kind}-{n_features}f",
        features=scaled,
        labels=y,
        train_idx=train_rows,
        val_idx=perm[n_train: n_train + n_val],
        test_idx=perm[n_train + n_val:],
        n_classes=int(n_classes),
        label_names=[str(c) for c in range(int(n_classes))],
        feature_names=[f"f{j}" for j in range(n_features)],
        stats=stats,
        seed=seed,
        scaled=True,
    )


def save_cached(dataset: Dataset, path):
    """Persist a preprocessed dataset (arrays + seed + fitted statistics)."""
    meta = {
        "name": dataset.name,
        "seed": dataset.seed,
        "scaled": dataset.scaled,
        "n_classes": dataset.n_classes,
        "label_names": dataset.label_names,
        "feature_names": dataset.feature_names,
        "warnings": dataset.warnings,
        "stats": {
            name: {"kind": st.kind, "impute_value": st.impute_value,
                   "categories": ({str(k): v for k, v in st.categories.items()}
                                  if st.categories else None),
                   "reserved_code": st.reserved_code, "lo": st.lo, "hi": st.hi}
            for name, st in dataset.stats.items()},
    }
    np.savez(path, features=dataset.features, labels=dataset.labels,
             train_idx=dataset.train_idx, val_idx=dataset.val_idx,
             test_idx=dataset.test_idx, meta=np.array(json.dumps(meta)))


def load_cached(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        stats = {
            name: FeatureStats(kind=d["kind"], impute_value=d["impute_value"],
                               categories=d["categories"],
                               reserved_code=d["reserved_code"],
                               lo=d["lo"], hi=d["hi"])
            for name, d in meta["stats"].items()}
        return Dataset(
            name=meta["name"], features=z["features"], labels=z["labels"],
            train_idx=z["train_idx"], val_idx=z["val_idx"], test_idx=z["test_idx"],
            n_classes=meta["n_classes"], label_names=meta["label_names"],
            feature_names=meta["feature_names"], stats=stats, seed=meta["seed"],
            scaled=meta["scaled"], warnings=meta["warnings"])

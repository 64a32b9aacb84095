"""Dataset ingestion, preprocessing and synthetic benchmark generators.

Datasets travel as raw feature columns (numeric with NaN for missing,
categorical with None for missing) plus observed times and integer labels
where 0 means right-censored.  Preprocessing statistics are always fitted
on training data and applied everywhere else: numerics are mean-imputed
and standardized, categoricals are mode-imputed and one-hot encoded, and
times are divided by a configurable scale factor.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InputError

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass
class Feature:
    """One raw column: numeric (float array, NaN = missing) or categorical
    (object array, None = missing)."""

    name: str
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise InputError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == NUMERIC:
            self.values = np.asarray(self.values, dtype=np.float64)
        else:
            self.values = np.asarray(self.values, dtype=object)


@dataclass
class Dataset:
    """Samples with raw features, observed times and integer event labels.

    ``matrix`` and ``matrix_columns`` are populated by
    :func:`apply_preprocess`; until then the dataset is raw.
    """

    features: list[Feature]
    times: np.ndarray
    labels: np.ndarray
    note: str = ""
    matrix: np.ndarray | None = None
    matrix_columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.times.size
        if self.labels.shape != (n,):
            raise InputError(f"labels shape {self.labels.shape} != times shape {(n,)}")
        if np.any(~np.isfinite(self.times)) or np.any(self.times < 0):
            raise InputError("times must be finite and nonnegative")
        if np.any(self.labels < 0):
            raise InputError("labels must be nonnegative integers (0 = censored)")
        for f in self.features:
            if len(f.values) != n:
                raise InputError(f"feature {f.name!r} has {len(f.values)} rows, expected {n}")

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def risks(self) -> int:
        return max(int(self.labels.max(initial=0)), 1)

    @property
    def event_indicator(self) -> np.ndarray:
        return (self.labels > 0).astype(np.int64)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            features=[Feature(f.name, f.kind, f.values[idx]) for f in self.features],
            times=self.times[idx],
            labels=self.labels[idx],
            note=self.note,
            matrix=None if self.matrix is None else self.matrix[idx],
            matrix_columns=list(self.matrix_columns),
        )


@dataclass
class PreprocessStats:
    """Per-feature statistics fitted on training data.

    ``numeric`` maps name -> (mean, variance) where the variance is the
    population variance of the mean-imputed column.  ``categorical`` maps
    name -> (mode, vocabulary).  ``dropped`` lists zero-variance numeric
    features removed at fit time.
    """

    numeric: dict[str, tuple[float, float]]
    categorical: dict[str, tuple[str, list[str]]]
    dropped: list[str]
    time_scale: float
    feature_order: list[tuple[str, str]]  # (name, kind) in dataset order

    def to_dict(self) -> dict:
        return {
            "numeric": {k: list(v) for k, v in self.numeric.items()},
            "categorical": {k: [v[0], list(v[1])] for k, v in self.categorical.items()},
            "dropped": list(self.dropped),
            "time_scale": self.time_scale,
            "feature_order": [list(t) for t in self.feature_order],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessStats":
        return cls(
            numeric={k: (float(v[0]), float(v[1])) for k, v in d["numeric"].items()},
            categorical={k: (v[0], list(v[1])) for k, v in d["categorical"].items()},
            dropped=list(d["dropped"]),
            time_scale=float(d["time_scale"]),
            feature_order=[(t[0], t[1]) for t in d["feature_order"]],
        )


def fit_preprocess(train: Dataset, time_scale: float | None = None) -> PreprocessStats:
    """Fit imputation/standardization/encoding statistics on training data.

    ``time_scale`` defaults to the mean observed time of ``train``; the
    cross-validation harness passes the holdout mean instead.
    """
    numeric: dict[str, tuple[float, float]] = {}
    categorical: dict[str, tuple[str, list[str]]] = {}
    dropped: list[str] = []
    for f in train.features:
        if f.kind == NUMERIC:
            observed = f.values[np.isfinite(f.values)]
            if observed.size == 0:
                log.warning("feature %r has no observed values; dropped", f.name)
                dropped.append(f.name)
                continue
            mean = float(observed.mean())
            imputed = np.where(np.isfinite(f.values), f.values, mean)
            var = float(imputed.var())
            if var <= 0.0:
                log.warning("feature %r has zero variance; dropped", f.name)
                dropped.append(f.name)
                continue
            numeric[f.name] = (mean, var)
        else:
            observed = [v for v in f.values if v is not None]
            if not observed:
                log.warning("feature %r has no observed values; dropped", f.name)
                dropped.append(f.name)
                continue
            values, counts = np.unique(np.asarray(observed, dtype=object), return_counts=True)
            mode = str(values[np.argmax(counts)])  # ties resolve to the smallest value
            vocab = sorted(str(v) for v in values)
            categorical[f.name] = (mode, vocab)
    if time_scale is None:
        time_scale = float(train.times.mean())
    if not np.isfinite(time_scale) or time_scale <= 0:
        raise InputError(f"time scale must be positive and finite, got {time_scale!r}")
    return PreprocessStats(
        numeric=numeric,
        categorical=categorical,
        dropped=dropped,
        time_scale=float(time_scale),
        feature_order=[(f.name, f.kind) for f in train.features],
    )


def apply_preprocess(dataset: Dataset, stats: PreprocessStats) -> Dataset:
    """Encode a dataset with fitted statistics; returns a new dataset.

    The result carries the encoded covariate matrix, encoded column names
    and times divided by the fitted scale factor.  Categories unseen at
    fit time map to the all-zeros row of their one-hot block.
    """
    columns: list[np.ndarray] = []
    names: list[str] = []
    for f in dataset.features:
        if f.name in stats.dropped:
            continue
        if f.kind == NUMERIC:
            if f.name not in stats.numeric:
                raise InputError(f"no fitted statistics for numeric feature {f.name!r}")
            mean, var = stats.numeric[f.name]
            col = np.where(np.isfinite(f.values), f.values, mean)
            columns.append((col - mean) / np.sqrt(var))
            names.append(f.name)
        else:
            if f.name not in stats.categorical:
                raise InputError(f"no fitted statistics for categorical feature {f.name!r}")
            mode, vocab = stats.categorical[f.name]
            raw = [mode if v is None else str(v) for v in f.values]
            unseen = sorted(set(raw) - set(vocab))
            if unseen:
                log.warning(
                    "feature %r: categories %s unseen at fit time map to all-zeros", f.name, unseen
                )
            block = np.zeros((dataset.n, len(vocab)))
            index = {cat: j for j, cat in enumerate(vocab)}
            for i, v in enumerate(raw):
                j = index.get(v)
                if j is not None:
                    block[i, j] = 1.0
            columns.append(block)
            names.extend(f"{f.name}={cat}" for cat in vocab)
    if not columns:
        raise InputError("no usable features after preprocessing")
    matrix = np.column_stack(columns)
    if np.any(~np.isfinite(matrix)):
        raise InputError("preprocessing produced non-finite values")
    return Dataset(
        features=dataset.features,
        times=dataset.times / stats.time_scale,
        labels=dataset.labels,
        note=dataset.note,
        matrix=matrix,
        matrix_columns=names,
    )


# ---------------------------------------------------------------------------
# synthetic generators


def _censor_half(times: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
    """Right-censor exactly floor(n/2) samples, censor time ~ U(0, T*)."""
    n = times.size
    chosen = rng.choice(n, size=n // 2, replace=False)
    times = times.copy()
    labels = labels.copy()
    times[chosen] = rng.uniform(0.0, times[chosen])
    labels[chosen] = 0
    return times, labels


def simulate_nonlinear(
    n: int,
    seed: int,
    censoring: bool = True,
    risk_peak: float = float(np.log(5.0)),
    risk_width: float = 0.5,
    base_rate: float = 1.0,
) -> Dataset:
    """Single-risk benchmark: exponential times under a Gaussian-bump log-risk.

    Covariates are uniform on [-1, 1)^10; the log-risk depends only on the
    first two through ``risk_peak * exp(-(x1^2 + x2^2) / (2 risk_width^2))``
    and event times are exponential with rate ``base_rate * exp(log_risk)``.
    With ``censoring`` half the samples (exactly floor(n/2)) are censored
    uniformly on (0, T*).
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E1]))
    X = rng.uniform(-1.0, 1.0, size=(n, 10))
    log_risk = risk_peak * np.exp(-(X[:, 0] ** 2 + X[:, 1] ** 2) / (2.0 * risk_width**2))
    rate = base_rate * np.exp(log_risk)
    times = rng.exponential(1.0 / rate)
    labels = np.ones(n, dtype=np.int64)
    if censoring:
        times, labels = _censor_half(times, labels, rng)
    features = [Feature(f"x{j + 1}", NUMERIC, X[:, j]) for j in range(10)]
    return Dataset(features, times, labels, note=f"synthetic-nonlinear(n={n}, seed={seed})")


def simulate_competing(n: int, seed: int, censoring: bool = True) -> Dataset:
    """Two-risk benchmark driven by the sum of the first four covariates.

    Covariates are standard normal in 20 dimensions.  With s the sum of
    the first four, risk-1 times are exponential with mean cosh(s) and
    risk-2 times exponential with mean |N(0,1) + sinh(s)|; the observed
    time is the minimum and the label records which risk won.  With
    ``censoring`` half the samples are censored uniformly on (0, T*).
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0317]))
    X = rng.standard_normal((n, 20))
    s = X[:, :4].sum(axis=1)
    t1 = rng.exponential(np.cosh(s))
    t2 = rng.exponential(np.abs(rng.standard_normal(n) + np.sinh(s)))
    times = np.minimum(t1, t2)
    labels = np.where(t1 <= t2, 1, 2).astype(np.int64)
    if censoring:
        times, labels = _censor_half(times, labels, rng)
    features = [Feature(f"x{j + 1}", NUMERIC, X[:, j]) for j in range(20)]
    return Dataset(features, times, labels, note=f"synthetic-competing(n={n}, seed={seed})")


# ---------------------------------------------------------------------------
# CSV + schema I/O


def schema_of(dataset: Dataset, time_column: str = "time", label_column: str = "label") -> dict:
    return {
        "features": [{"name": f.name, "kind": f.kind} for f in dataset.features],
        "time_column": time_column,
        "label_column": label_column,
    }


def write_schema(schema: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(schema, fh, indent=2)
        fh.write("\n")


def load_schema(path) -> dict:
    try:
        with open(path) as fh:
            schema = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"schema file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"schema file {path} is not valid JSON: {exc}")
    for key in ("features", "time_column", "label_column"):
        if key not in schema:
            raise InputError(f"schema file {path} is missing key {key!r}")
    return schema


def write_csv(dataset: Dataset, path, time_column: str = "time", label_column: str = "label") -> None:
    """Write one record per row; missing cells are empty; floats use repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in dataset.features] + [time_column, label_column])
        for i in range(dataset.n):
            row = []
            for f in dataset.features:
                v = f.values[i]
                if f.kind == NUMERIC:
                    row.append("" if not np.isfinite(v) else repr(float(v)))
                else:
                    row.append("" if v is None else str(v))
            row.append(repr(float(dataset.times[i])))
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def load_csv(path, schema: dict) -> Dataset:
    """Parse a delimited dataset against a schema; missing cells stay missing."""
    feature_meta = [(f["name"], f["kind"]) for f in schema["features"]]
    time_col, label_col = schema["time_column"], schema["label_column"]
    expected = [name for name, _ in feature_meta] + [time_col, label_col]
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file")
        if sorted(header) != sorted(expected):
            missing = sorted(set(expected) - set(header))
            extra = sorted(set(header) - set(expected))
            raise InputError(
                f"{path}: header does not match schema"
                + (f"; missing columns {missing}" if missing else "")
                + (f"; unexpected columns {extra}" if extra else "")
            )
        col_of = {name: header.index(name) for name in expected}
        raw_rows = list(reader)

    n = len(raw_rows)
    kinds = dict(feature_meta)
    cells: dict[str, list] = {name: [] for name, _ in feature_meta}
    times = np.empty(n)
    labels = np.empty(n, dtype=np.int64)
    for i, row in enumerate(raw_rows):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for name, kind in feature_meta:
            cell = row[col_of[name]].strip()
            if kind == NUMERIC:
                if cell == "":
                    cells[name].append(np.nan)
                else:
                    try:
                        cells[name].append(float(cell))
                    except ValueError:
                        raise InputError(
                            f"{path}: row {i + 2}, column {name!r}: cannot parse {cell!r} as a number"
                        )
            else:
                cells[name].append(cell if cell else None)
        tcell = row[col_of[time_col]].strip()
        try:
            times[i] = float(tcell)
        except ValueError:
            raise InputError(f"{path}: row {i + 2}, column {time_col!r}: cannot parse {tcell!r} as a number")
        lcell = row[col_of[label_col]].strip()
        try:
            labels[i] = int(lcell)
        except ValueError:
            raise InputError(f"{path}: row {i + 2}, column {label_col!r}: label {lcell!r} is not an integer")
        if labels[i] < 0:
            raise InputError(f"{path}: row {i + 2}: label {labels[i]} is negative")
    features = [
        Feature(name, kinds[name], np.asarray(cells[name], dtype=np.float64 if kinds[name] == NUMERIC else object))
        for name, _ in feature_meta
    ]
    return Dataset(features, times, labels, note=str(path))

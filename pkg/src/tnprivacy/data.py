"""Datasets: schema, toy generator, copula surrogate, biased sampling, CSV I/O."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

BINARY = "binary"
CONTINUOUS = "continuous"
ROLES = ("relevant", "irrelevant", "label")


class DataError(ValueError):
    pass


class MalformedRowError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownCategoryError(DataError):
    pass


class InsufficientRowsError(DataError):
    pass


class NotPsdError(DataError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = BINARY
    role: str = "relevant"
    lo: float | None = None  # continuous range, used for min-max scaling
    hi: float | None = None
    values: dict[str, int] | None = None  # CSV category -> code
    column: str | None = None  # CSV header, defaults to name
    source: str | None = None  # "date-parity": parity of the day of month

    def __post_init__(self):
        if self.kind not in (BINARY, CONTINUOUS):
            raise DataError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise DataError(f"{self.name}: unknown role {self.role!r}")


@dataclass(frozen=True)
class Dataset:
    schema: tuple[Feature, ...]
    values: np.ndarray = field(repr=False)  # (rows, features), float64
    dropped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(self.schema):
            raise DataError(f"values of shape {vals.shape} do not match {len(self.schema)} features")
        if sum(f.role == "label" for f in self.schema) != 1:
            raise DataError("schema needs exactly one label feature")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.schema]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no feature named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    @property
    def label_index(self) -> int:
        return next(i for i, f in enumerate(self.schema) if f.role == "label")

    @property
    def input_features(self) -> list[Feature]:
        return [f for f in self.schema if f.role != "label"]

    def inputs(self) -> np.ndarray:
        keep = [i for i, f in enumerate(self.schema) if f.role != "label"]
        return self.values[:, keep]

    def labels(self) -> np.ndarray:
        return (self.values[:, self.label_index] > 0.5).astype(np.int64)

    def take(self, rows) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(rows)], self.dropped)


# -- toy data ------------------------------------------------------------

TOY_SCHEMA = (
    Feature("x_rel", CONTINUOUS, "relevant", lo=-4.0, hi=4.0),
    Feature("x_irr", BINARY, "irrelevant"),
    Feature("y", BINARY, "label"),
)


def gen_toy(n: int, majority_sign: int, seed=0) -> Dataset:
    """``x_rel ~ N(0, 1)``, constant ``x_irr = majority_sign``, label ``x_rel > 0``."""
    if n < 1:
        raise DataError("n must be at least 1")
    if majority_sign not in (-1, 1):
        raise DataError("majority_sign must be +1 or -1")
    rng = np.random.default_rng(seed)
    x_rel = rng.standard_normal(n)
    values = np.column_stack([x_rel, np.full(n, float(majority_sign)), (x_rel > 0).astype(float)])
    return Dataset(TOY_SCHEMA, values)


# -- medical-record surrogate ----------------------------------------------

# Pearson correlations between the encoded columns of the filtered COVID-19
# records (parity of report day, country, age, gender, symptom status,
# recovery), as reported for the source records. Upper triangle only.
TARGET_NAMES = ("parity", "country", "age", "gender", "symptoms", "recovery")
_TARGET_UPPER = {
    ("parity", "country"): 0.005, ("parity", "age"): 0.001, ("parity", "gender"): 0.001,
    ("parity", "symptoms"): -0.012, ("parity", "recovery"): -0.002,
    ("country", "age"): 0.059, ("country", "gender"): 0.033,
    ("country", "symptoms"): 0.161, ("country", "recovery"): -0.055,
    ("age", "gender"): -0.010, ("age", "symptoms"): 0.128, ("age", "recovery"): -0.707,
    ("gender", "symptoms"): 0.004, ("gender", "recovery"): 0.078,
    ("symptoms", "recovery"): -0.143,
}


def target_correlations() -> np.ndarray:
    k = len(TARGET_NAMES)
    out = np.eye(k)
    for (a, b), r in _TARGET_UPPER.items():
        i, j = TARGET_NAMES.index(a), TARGET_NAMES.index(b)
        out[i, j] = out[j, i] = r
    return out


SURROGATE_SCHEMA = (
    Feature("parity", BINARY, "irrelevant"),
    Feature("country", BINARY, "relevant"),
    Feature("age", CONTINUOUS, "relevant", lo=0.0, hi=100.0),
    Feature("gender", BINARY, "relevant"),
    Feature("symptoms", BINARY, "relevant"),
    Feature("recovery", BINARY, "label"),
)

# Share of rows with value 1 per binary feature (parity is set per call).
SURROGATE_MARGINALS = {"country": 0.5, "gender": 0.55, "symptoms": 0.4, "recovery": 0.5}


@dataclass(frozen=True)
class CorrelationTarget:
    matrix: np.ndarray
    names: tuple[str, ...] = TARGET_NAMES

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (len(self.names), len(self.names)):
            raise DataError("correlation target does not match names")
        if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
            raise DataError("correlation target must be symmetric with unit diagonal")
        if np.any(np.abs(m) > 1.0):
            raise DataError("correlations must lie in [-1, 1]")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise NotPsdError("correlation target is not positive semidefinite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def default(cls) -> "CorrelationTarget":
        return cls(target_correlations())


def _pdf(z: float) -> float:
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _pair_pearson(rho: float, kind_a: str, t_a: float, q_a: float,
                  kind_b: str, t_b: float, q_b: float) -> float:
    """Pearson correlation of the transformed pair under latent correlation ``rho``.

    Binary columns are ``1{Z > t}`` with ``P = q``; continuous columns are
    ``Phi(Z)`` (a uniform rank map, affine rescaling does not matter).
    """
    if kind_a == CONTINUOUS and kind_b == CONTINUOUS:
        return 6.0 / np.pi * np.arcsin(rho / 2.0)
    if kind_a == CONTINUOUS:
        kind_a, t_a, q_a, kind_b, t_b, q_b = kind_b, t_b, q_b, kind_a, t_a, q_a
    s = np.sqrt(max(1.0 - rho * rho, 1e-300))
    if kind_b == CONTINUOUS:
        scale = np.sqrt(2.0 - rho * rho)
        e, _ = integrate.quad(lambda z: _pdf(z) * special.ndtr(rho * z / scale),
                              t_a, np.inf, epsabs=1e-13, epsrel=1e-12)
        cov = e - q_a * 0.5
        return cov / np.sqrt(q_a * (1 - q_a) / 12.0)
    joint, _ = integrate.quad(lambda z: _pdf(z) * special.ndtr((rho * z - t_b) / s),
                              t_a, np.inf, epsabs=1e-13, epsrel=1e-12)
    cov = joint - q_a * q_b
    return cov / np.sqrt(q_a * (1 - q_a) * q_b * (1 - q_b))


def _nearest_correlation(m: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    d = np.sqrt(np.diag(out))
    out = out / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return out


def latent_correlation(target: np.ndarray, kinds: Sequence[str], shares: Sequence[float],
                       rounds: int = 20, tol: float = 1e-6) -> np.ndarray:
    """Gaussian-copula correlation whose discretized columns hit ``target``.

    Fixed-point iteration: raise each latent coefficient by the gap between
    target and achieved Pearson value, then project back onto correlation
    matrices. Constant columns (share 0 or 1) are decoupled.
    """
    k = len(kinds)
    thresholds = [stats.norm.isf(q) if kinds[i] == BINARY else 0.0 for i, q in enumerate(shares)]
    live = [kinds[i] == CONTINUOUS or 0.0 < shares[i] < 1.0 for i in range(k)]
    latent = np.array(target, dtype=np.float64)
    for i in range(k):
        if not live[i]:
            latent[i, :] = latent[:, i] = 0.0
            latent[i, i] = 1.0
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k) if live[i] and live[j]]
    for _ in range(rounds):
        gap = 0.0
        step = np.zeros((k, k))
        for i, j in pairs:
            got = _pair_pearson(latent[i, j], kinds[i], thresholds[i], shares[i],
                                kinds[j], thresholds[j], shares[j])
            diff = target[i, j] - got
            step[i, j] = step[j, i] = diff
            gap = max(gap, abs(diff))
        if gap < tol:
            break
        latent = np.clip(latent + step, -0.999, 0.999)
        np.fill_diagonal(latent, 1.0)
        latent = _nearest_correlation(latent)
    return latent


def gen_surrogate(n: int, irrelevant_majority: int = 1, majority_fraction: float = 0.5,
                  targets: CorrelationTarget | None = None, seed=0,
                  marginals: dict[str, float] | None = None) -> Dataset:
    """Synthetic stand-in for the filtered COVID-19 records.

    Correlated gaussians are thresholded at quantiles for the binary columns
    and rank-mapped onto ``[0, 100)`` for age.
    """
    if not 0.5 <= majority_fraction <= 1.0:
        raise DataError("majority_fraction must lie in [0.5, 1]")
    targets = targets if targets is not None else CorrelationTarget.default()
    shares = dict(SURROGATE_MARGINALS if marginals is None else marginals)
    shares["parity"] = majority_fraction if irrelevant_majority == 1 else 1.0 - majority_fraction
    schema = SURROGATE_SCHEMA
    order = [targets.names.index(f.name) for f in schema]
    target = targets.matrix[np.ix_(order, order)]
    kinds = [f.kind for f in schema]
    q = [shares.get(f.name, 0.5) for f in schema]
    latent = latent_correlation(target, kinds, q)
    w, v = np.linalg.eigh(latent)
    factor = v * np.sqrt(np.maximum(w, 0.0))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, len(schema))) @ factor.T
    cols = []
    for i, f in enumerate(schema):
        if f.kind == BINARY:
            cols.append((z[:, i] > stats.norm.isf(q[i])).astype(np.float64))
        else:
            cols.append(f.lo + (f.hi - f.lo) * stats.norm.cdf(z[:, i]))
    return Dataset(schema, np.column_stack(cols))


def pearson_matrix(d: Dataset) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.corrcoef(d.values, rowvar=False)


# -- imbalance sampling ----------------------------------------------------

def sample_biased(d: Dataset, feature: str, majority_value: int, p: float, n: int,
                  seed=0) -> Dataset:
    """Draw ``n`` rows without replacement, ``round(p * n)`` with the majority value."""
    col = d.column(feature)
    if d.schema[d.index(feature)].kind != BINARY:
        raise DataError(f"{feature} is not binary")
    if not 0.0 <= p <= 1.0:
        raise DataError("p must lie in [0, 1]")
    n_major = int(np.floor(p * n + 0.5))
    major = np.flatnonzero(col == majority_value)
    minor = np.flatnonzero(col != majority_value)
    if len(major) < n_major or len(minor) < n - n_major:
        raise InsufficientRowsError(
            f"need {n_major}/{n - n_major} rows, have {len(major)}/{len(minor)}")
    rng = np.random.default_rng(seed)
    rows = np.concatenate([rng.choice(major, n_major, replace=False),
                           rng.choice(minor, n - n_major, replace=False)])
    return d.take(rng.permutation(rows))


def balance(d: Dataset, feature: str, seed=0) -> Dataset:
    """Downsample so every value of ``feature`` has the same row count."""
    col = d.column(feature)
    groups = [np.flatnonzero(col == v) for v in np.unique(col)]
    size = min(len(g) for g in groups)
    rng = np.random.default_rng(seed)
    rows = np.sort(np.concatenate([rng.choice(g, size, replace=False) for g in groups]))
    return d.take(rows)


# -- CSV -------------------------------------------------------------------

def _parse_cell(f: Feature, raw: str, line: int) -> float:
    if f.source == "date-parity":
        try:
            day = dt.date.fromisoformat(raw.strip()[:10]).day
        except ValueError:
            raise MalformedRowError(line, f"{f.name}: bad date {raw!r}") from None
        return float(day % 2)  # even day -> 0, odd day -> 1
    if f.values is not None:
        try:
            return float(f.values[raw])
        except KeyError:
            raise UnknownCategoryError(f"line {line}: {f.name} has unknown category {raw!r}") from None
    try:
        return float(raw)
    except ValueError:
        raise MalformedRowError(line, f"{f.name}: cannot parse {raw!r}") from None


def ingest_csv(path, schema: Sequence[Feature], balance_by: Sequence[str] = (),
               seed=0) -> Dataset:
    """Read a CSV into a Dataset, dropping (and counting) rows with empty cells."""
    schema = tuple(schema)
    rows, dropped = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.readlines()
        skip = 0
        while skip < len(lines) and lines[skip].startswith("#"):
            skip += 1  # provenance comments
        reader = csv.reader(lines[skip:])
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        pos = {}
        for f in schema:
            col = f.column or f.name
            if col not in header:
                raise DataError(f"{path}: header lacks column {col!r}")
            pos[f.name] = header.index(col)
        for line, rec in enumerate(reader, start=skip + 2):
            if len(rec) != len(header):
                raise MalformedRowError(line, f"expected {len(header)} cells, got {len(rec)}")
            cells = [rec[pos[f.name]] for f in schema]
            if any(c.strip() == "" for c in cells):
                dropped += 1
                continue
            rows.append([_parse_cell(f, c, line) for f, c in zip(schema, cells)])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema))
    d = Dataset(schema, values, dropped)
    for name in balance_by:
        d = balance(d, name, seed)
    return d


def export_csv(d: Dataset, path, header: str = "") -> None:
    """Write ``d``; ``header`` (``#`` comment lines) goes first when given."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.names)
        for row in d.values:
            w.writerow([repr(float(v)) if f.kind == CONTINUOUS else str(int(v))
                        for f, v in zip(d.schema, row)])


def plain_schema(d: Dataset) -> tuple[Feature, ...]:
    """Schema for re-reading :func:`export_csv` output (numeric cells)."""
    return tuple(replace(f, values=None, source=None, column=None) for f in d.schema)

"""Synthetic datasets and CSV input/output.

Every generator is a pure function of its arguments: rows are produced in
sampling order and the first half is the training split, the second half the
validation split.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DomainError, ParseError, SchemaError, UnknownEquation

TARGET = "target"


@dataclass
class Dataset:
    column_names: tuple
    X: np.ndarray
    y: np.ndarray
    n_train: int

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.column_names):
            raise SchemaError("X must have one column per column name")
        if self.X.shape[0] != self.y.shape[0]:
            raise SchemaError("X and y have different row counts")
        if not 0 <= self.n_train <= self.n_rows:
            raise SchemaError("n_train out of range")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DomainError("dataset contains NaN or Inf")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def train_index(self) -> np.ndarray:
        return np.arange(self.n_train)

    @property
    def val_index(self) -> np.ndarray:
        return np.arange(self.n_train, self.n_rows)

    @property
    def train_set(self):
        return self.X[:self.n_train], self.y[:self.n_train]

    @property
    def val_set(self):
        return self.X[self.n_train:], self.y[self.n_train:]

    def column(self, name) -> np.ndarray:
        return self.X[:, self.column_names.index(name)]

    def equals(self, other) -> bool:
        return (self.column_names == other.column_names and self.n_train == other.n_train
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y))


def _half_split(X, y, names, noise_std=0.0, rng=None):
    n = X.shape[0]
    if n % 2:
        raise ValueError("number of rows must be even (half/half split)")
    if noise_std:
        y = y + rng.normal(0.0, noise_std, size=n)
    return Dataset(names, X, y, n // 2)


# ---------------------------------------------------------------------------
# Heating water


@dataclass(frozen=True)
class WaterConstants:
    c_ice: float = 0.50     # cal / (g degC)
    c_water: float = 1.00
    c_steam: float = 0.48
    L_fusion: float = 79.72  # cal / g
    L_vapor: float = 540.00

    def __post_init__(self):
        if min(self.c_ice, self.c_water, self.c_steam, self.L_fusion, self.L_vapor) <= 0:
            raise ValueError("water constants must be positive")


WATER = WaterConstants()


def water_temperature(m, t0, E, k: WaterConstants = WATER):
    """Final temperature (degC) of `m` grams of ice at `t0` after adding `E` calories.

    Energy is spent in order on warming the ice to 0, melting, warming the
    water to 100, boiling, and finally warming the steam. Only the energy per
    gram matters, which is what is computed first.
    """
    m, t0, E = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (m, t0, E)))
    if np.any(m <= 0) or np.any(t0 < -100) or np.any(t0 > 0) or np.any(E < 0):
        raise DomainError("require m > 0, -100 <= t0 <= 0 and E >= 0")
    e = E / m
    warm_ice = -t0 * k.c_ice
    melt_end = warm_ice + k.L_fusion
    water_end = melt_end + 100.0 * k.c_water
    boil_end = water_end + k.L_vapor
    out = np.where(
        e <= warm_ice,
        np.minimum(t0 + e / k.c_ice, 0.0),
        np.where(
            e <= melt_end,
            0.0,
            np.where(
                e <= water_end,
                np.minimum((e - melt_end) / k.c_water, 100.0),
                np.where(e <= boil_end, 100.0, 100.0 + (e - boil_end) / k.c_steam),
            ),
        ),
    )
    return out[()] if out.ndim == 0 else out


def gen_temperature(n: int = 2000, seed: int = 0, noise_std: float = 0.0,
                    k: WaterConstants = WATER) -> Dataset:
    """Columns ``(E, m, t0)``: mass U(1, 4), start temperature U(-100, 0),
    energy = mass * U(1, 800) cal/g."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(1.0, 4.0, n)
    t0 = rng.uniform(-100.0, 0.0, n)
    E = m * rng.uniform(1.0, 800.0, n)
    y = water_temperature(m, t0, E, k)
    return _half_split(np.column_stack([E, m, t0]), y, ("E", "m", "t0"), noise_std, rng)


# ---------------------------------------------------------------------------
# Risk scores


@lru_cache(maxsize=None)
def _risk_table():
    text = resources.files("shares").joinpath("data/risk_curves.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def risk_curves() -> dict:
    """The three generator curves as ``{name: callable}``."""
    from scipy.interpolate import PchipInterpolator

    out = {}
    for name, entry in _risk_table()["curves"].items():
        pts = np.asarray(entry["points"], dtype=np.float64)
        out[name] = PchipInterpolator(pts[:, 0], pts[:, 1], extrapolate=False)
    return out


def risk_ranges() -> dict:
    return {name: tuple(entry["range"]) for name, entry in _risk_table()["curves"].items()}


def gen_risk_scores(n: int = 200, seed: int = 0, noise_std: float = 0.0) -> Dataset:
    """Columns ``(nodes, age, bmi)``; label is the sum of the bundled curves."""
    rng = np.random.default_rng(seed)
    curves = risk_curves()
    ranges = risk_ranges()
    names = ("nodes", "age", "bmi")
    X = np.column_stack([rng.uniform(*ranges[c], n) for c in names])
    y = sum(curves[c](X[:, i]) for i, c in enumerate(names))
    return _half_split(X, y, names, noise_std, rng)


# ---------------------------------------------------------------------------
# Closed-form equation samplers


@lru_cache(maxsize=None)
def equation_registry() -> dict:
    text = resources.files("shares").joinpath("data/equations.json").read_text()
    doc = json.loads(text)
    reg = {}
    for eq in doc["equations"]:
        eq = dict(eq)
        eq.setdefault("guards", [])
        eq["default_range"] = tuple(doc["default_range"])
        reg[eq["id"]] = eq
    return reg


def default_corpus() -> list:
    """``[(name, formula)]`` for every bundled equation."""
    return [(k, v["formula"]) for k, v in equation_registry().items()]


def _check_guards(entry, parsed, ranges):
    from .closedform import evaluate, parse

    for guard in entry["guards"]:
        g = parse(guard["expr"])
        lo, hi = guard["open_interval"]
        corners = np.array(list(itertools.product(*(ranges[v] for v in g.free_vars))))
        vals = evaluate(g.tree.root, corners)
        if not (np.all(vals > lo) and np.all(vals < hi)):
            raise DomainError(
                f"{entry['id']}: ranges allow {guard['expr']} outside ({lo}, {hi})"
            )


def gen_equation(eq_id: str, n: int = 100, seed: int = 0, ranges: dict | None = None,
                 noise_std: float = 0.0) -> Dataset:
    """Sample every input uniformly from its range and evaluate the formula."""
    from .closedform import evaluate, parse

    reg = equation_registry()
    if eq_id not in reg:
        raise UnknownEquation(f"unknown equation {eq_id!r}; known: {sorted(reg)}")
    entry = reg[eq_id]
    eq = parse(entry["formula"])
    rng_map = {}
    for v in eq.free_vars:
        lo, hi = (ranges or {}).get(v, entry["ranges"].get(v, entry["default_range"]))
        rng_map[v] = (float(lo), float(hi))
    _check_guards(entry, eq, rng_map)
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(*rng_map[v], n) for v in eq.free_vars])
    y = evaluate(eq.tree.root, X)
    if not np.all(np.isfinite(y)):
        raise DomainError(f"{eq_id}: formula produced non-finite labels on the given ranges")
    return _half_split(X, y, eq.free_vars, noise_std, rng)


def make_dataset(name: str, n: int | None = None, seed: int = 0, noise_std: float = 0.0) -> Dataset:
    """Dispatch ``temperature``, ``risk_scores`` or ``eq:<id>``."""
    from .errors import UnknownDataset

    if name == "temperature":
        return gen_temperature(n or 2000, seed, noise_std)
    if name == "risk_scores":
        return gen_risk_scores(n or 200, seed, noise_std)
    if name.startswith("eq:"):
        try:
            return gen_equation(name[3:], n or 100, seed, noise_std=noise_std)
        except UnknownEquation as exc:
            raise UnknownDataset(str(exc)) from exc
    raise UnknownDataset(f"unknown dataset {name!r}; use temperature, risk_scores or eq:<id>")


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def csv_dumps(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ds.column_names) + [TARGET])
    for row, t in zip(ds.X, ds.y):
        w.writerow([_fmt(v) for v in row] + [_fmt(t)])
    return buf.getvalue()


def csv_write(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_dumps(ds))


def csv_loads(text: str, columns=None) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if TARGET not in header:
        raise SchemaError(f"CSV header has no {TARGET!r} column")
    if header[-1] != TARGET or header.count(TARGET) != 1:
        raise SchemaError(f"{TARGET!r} must be the last column")
    names = header[:-1]
    if columns is not None and list(columns) != names:
        raise SchemaError(f"expected columns {list(columns)}, found {names}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", line=lineno, column=col) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", line=lineno, column=col)
            vals.append(v)
        data.append(vals)
    arr = np.asarray(data, dtype=np.float64).reshape(len(data), len(header))
    return Dataset(names, arr[:, :-1], arr[:, -1], arr.shape[0] // 2)


def csv_read(path, columns=None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return csv_loads(fh.read(), columns)

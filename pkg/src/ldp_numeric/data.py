"""Synthetic data generators and CSV ingestion, all normalised to [-1, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .mechanisms import RandomStream

__all__ = [
    "ColumnMeta",
    "Dataset",
    "DataError",
    "RaggedRowError",
    "UnknownColumnError",
    "MissingColumnError",
    "ZeroRangeError",
    "LabelError",
    "synth_gaussian",
    "synth_regression",
    "read_schema",
    "load_csv",
    "normalize",
    "denormalize",
]

COLUMN_KINDS = ("numeric", "categorical", "label")


class DataError(ValueError):
    """Base class for problems with input data (as opposed to usage errors)."""


class RaggedRowError(DataError):
    pass


class UnknownColumnError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class ZeroRangeError(DataError):
    pass


class LabelError(DataError):
    pass


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # "numeric" or "binary-encoded"
    original_min: Optional[float] = None
    original_max: Optional[float] = None
    source: Optional[str] = None  # originating categorical column
    level: Optional[str] = None  # categorical value this column flags with +1


@dataclass
class Dataset:
    rows: np.ndarray
    labels: Optional[np.ndarray] = None
    columns: list[ColumnMeta] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")
        if self.rows.size and np.max(np.abs(self.rows)) > 1.0:
            raise ValueError("dataset values must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def normalize(v, lo: float, hi: float):
    return 2.0 * (np.asarray(v, dtype=float) - lo) / (hi - lo) - 1.0


def denormalize(z, lo: float, hi: float):
    return lo + (np.asarray(z, dtype=float) + 1.0) * (hi - lo) / 2.0


# ---------------------------------------------------------------------------
# synthetic data


def synth_gaussian(n: int, d: int, mu: float, sigma: float, stream: RandomStream) -> Dataset:
    """``n x d`` i.i.d. draws from N(mu, sigma^2) truncated to [-1, 1] by rejection."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    out = stream.normal((n, d), loc=mu, scale=sigma)
    bad = np.abs(out) > 1.0
    while bad.any():
        out[bad] = stream.normal(int(bad.sum()), loc=mu, scale=sigma)
        bad = np.abs(out) > 1.0
    cols = [ColumnMeta(f"x{j}", "numeric", -1.0, 1.0) for j in range(d)]
    return Dataset(rows=out, columns=cols, extras={"mu": mu, "sigma": sigma})


def synth_regression(
    n: int,
    p: int,
    weight_seed: int,
    noise_sigma: float,
    stream: RandomStream,
) -> Dataset:
    """Features uniform on [-1, 1]^p, labels an affine function of them plus noise.

    Raw labels ``w.x + bias + noise`` are mapped onto [-1, 1] by
    ``label = scale * raw + offset``; ``extras`` records ``weights``, ``bias``,
    ``scale`` and ``offset`` so the generating model can be recovered.
    """
    if n < 2 or p < 1:
        raise ValueError("need n >= 2 and p >= 1")
    wrng = np.random.default_rng(weight_seed)
    w = wrng.normal(0.0, 1.0, p)
    bias = float(wrng.normal(0.0, 0.5))
    feats = stream.uniform((n, p), low=-1.0, high=1.0)
    raw = feats @ w + bias
    if noise_sigma > 0.0:
        raw = raw + stream.normal(n, scale=noise_sigma)
    lo, hi = float(raw.min()), float(raw.max())
    scale = 2.0 / (hi - lo)
    offset = -1.0 - scale * lo
    labels = np.clip(scale * raw + offset, -1.0, 1.0)
    cols = [ColumnMeta(f"x{j}", "numeric", -1.0, 1.0) for j in range(p)]
    return Dataset(
        rows=feats,
        labels=labels,
        columns=cols,
        extras={"weights": w, "bias": bias, "scale": scale, "offset": offset},
    )


# ---------------------------------------------------------------------------
# CSV ingestion


def read_schema(path: str | Path) -> dict[str, str]:
    """Parse a schema file of ``column = kind`` lines (``#`` starts a comment)."""
    schema: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise DataError(f"{path}:{lineno}: expected 'column = kind'")
        name, kind = (s.strip() for s in line.split(sep, 1))
        if kind not in COLUMN_KINDS:
            raise DataError(f"{path}:{lineno}: unknown column kind {kind!r}")
        schema[name] = kind
    if list(schema.values()).count("label") > 1:
        raise DataError("schema declares more than one label column")
    return schema


def _encode_label(values: Sequence[str], loss: Optional[str]) -> np.ndarray:
    if loss in ("logistic", "hinge"):
        levels = sorted(set(values))
        if len(levels) != 2:
            raise LabelError(f"classification labels need exactly 2 distinct values, found {len(levels)}")
        return np.array([-1.0 if v == levels[0] else 1.0 for v in values])
    try:
        raw = np.array([float(v) for v in values])
    except ValueError as exc:
        raise LabelError(f"non-numeric regression label: {exc}") from None
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        raise ZeroRangeError("label column has zero range")
    return normalize(raw, lo, hi)


def load_csv(path: str | Path, schema: Mapping[str, str], loss: Optional[str] = None) -> Dataset:
    """Load a headed CSV, min-max scale numeric columns and +-1 encode categoricals.

    A categorical column with k distinct values (in sorted order) becomes k-1
    columns; value number l < k sets column l to +1 and the rest to -1, and the
    last value is -1 everywhere.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RaggedRowError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            body.append([c.strip() for c in row])
    unknown = [h for h in header if h not in schema]
    if unknown:
        raise UnknownColumnError(f"columns not in schema: {', '.join(unknown)}")
    missing = [c for c in schema if c not in header]
    if missing:
        raise MissingColumnError(f"schema columns absent from file: {', '.join(missing)}")
    if not body:
        raise DataError(f"{path}: no data rows")

    blocks: list[np.ndarray] = []
    metas: list[ColumnMeta] = []
    labels = None
    for j, name in enumerate(header):
        values = [row[j] for row in body]
        kind = schema[name]
        if kind == "label":
            labels = _encode_label(values, loss)
        elif kind == "numeric":
            try:
                raw = np.array([float(v) for v in values])
            except ValueError as exc:
                raise DataError(f"column {name!r}: {exc}") from None
            lo, hi = float(raw.min()), float(raw.max())
            if hi == lo:
                raise ZeroRangeError(f"numeric column {name!r} has zero range")
            blocks.append(normalize(raw, lo, hi)[:, None])
            metas.append(ColumnMeta(name, "numeric", lo, hi))
        else:
            levels = sorted(set(values))
            if len(levels) < 2:
                continue  # a constant categorical carries no information and encodes to zero columns
            index = {v: i for i, v in enumerate(levels)}
            codes = np.array([index[v] for v in values])
            enc = -np.ones((len(values), len(levels) - 1))
            hit = codes < len(levels) - 1
            enc[np.nonzero(hit)[0], codes[hit]] = 1.0
            blocks.append(enc)
            metas.extend(ColumnMeta(f"{name}={lv}", "binary-encoded", source=name, level=lv) for lv in levels[:-1])
    rows = np.hstack(blocks) if blocks else np.zeros((len(body), 0))
    return Dataset(rows=rows, labels=labels, columns=metas)

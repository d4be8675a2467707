"""Perturbation of d-dimensional tuples by sampling k coordinates.

Each user reports k randomly chosen coordinates, each perturbed with budget
``epsilon / k`` and scaled by ``d / k``; the remaining coordinates are sent as
zero.  Scaling keeps every coordinate unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discretize import discretize_ranges
from .mechanisms import RandomStream, sample_with_range
from .params import MechanismKind, PrivacyBudget, _as_budget

__all__ = [
    "SamplingPlan",
    "TupleDraw",
    "choose_k",
    "sample_coordinates",
    "draw_tuples",
    "perturb_tuple",
    "estimate_means",
]

#: Budget per sampled coordinate that the choice of k aims for.
BUDGET_PER_COORDINATE = 2.5


@dataclass(frozen=True)
class SamplingPlan:
    d: int
    k: int
    per_coord_budget: PrivacyBudget

    @property
    def scale(self) -> float:
        return self.d / self.k

    @property
    def total_epsilon(self) -> float:
        return self.k * self.per_coord_budget.epsilon


def choose_k(d: int, budget: PrivacyBudget | float) -> SamplingPlan:
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    budget = _as_budget(budget)
    k = max(1, min(int(d), math.floor(budget.epsilon / BUDGET_PER_COORDINATE)))
    return SamplingPlan(d=int(d), k=k, per_coord_budget=PrivacyBudget(budget.epsilon / k))


def sample_coordinates(n: int, d: int, k: int, stream: RandomStream) -> np.ndarray:
    """Pick ``k`` distinct indices out of ``range(d)`` for each of ``n`` rows.

    A partial Fisher-Yates shuffle, run on all rows at once.
    """
    if k == d:
        return np.tile(np.arange(d), (n, 1))
    if k == 1:
        return stream.integers(0, d, size=n)[:, None]
    idx = np.tile(np.arange(d), (n, 1))
    rows = np.arange(n)
    for j in range(k):
        swap = j + stream.integers(0, d - j, size=n)
        held = idx[rows, j].copy()
        idx[rows, j] = idx[rows, swap]
        idx[rows, swap] = held
    return idx[:, :k]


@dataclass
class TupleDraw:
    """Raw per-coordinate draws of a batch before they are scattered into tuples.

    ``values[i]`` is the unscaled output for coordinate ``cols[i]`` of row
    ``rows[i]``; ``half_range[i]`` is the continuous half-range it was drawn
    from, or 0 for atomic outputs.
    """

    shape: tuple[int, int]
    plan: SamplingPlan
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    half_range: np.ndarray

    def assemble(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.plan.scale * (self.values if values is None else values)
        return out


def draw_tuples(kind: MechanismKind, batch, budget: PrivacyBudget | float, stream: RandomStream) -> TupleDraw:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] < 1:
        raise ValueError("expected a 2-D batch of tuples")
    if not np.all(np.abs(batch) <= 1.0):
        raise ValueError("tuple coordinates must lie in [-1, 1]")
    n, d = batch.shape
    plan = choose_k(d, budget)
    chosen = sample_coordinates(n, d, plan.k, stream)
    rows = np.repeat(np.arange(n), plan.k)
    cols = chosen.ravel()
    y, half = sample_with_range(kind, batch[rows, cols], plan.per_coord_budget, stream)
    return TupleDraw((n, d), plan, rows, cols, y, half)


def perturb_tuple(
    kind: MechanismKind,
    x,
    budget: PrivacyBudget | float,
    stream: RandomStream,
    grid_m: Optional[int] = None,
) -> np.ndarray:
    """Perturb one tuple (shape ``(d,)``) or a batch of tuples (shape ``(n, d)``).

    With ``grid_m`` the continuous outputs are rounded to the grid before scaling.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    draw = draw_tuples(kind, np.atleast_2d(arr), budget, stream)
    values = None
    if grid_m is not None:
        values = discretize_ranges(draw.values, draw.half_range, grid_m, stream)
    out = draw.assemble(values)
    return out[0] if single else out


def estimate_means(perturbed) -> np.ndarray:
    arr = np.asarray(perturbed, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[0] == 0:
        raise ValueError("cannot estimate means from an empty collection")
    return arr.mean(axis=0)

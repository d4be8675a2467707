"""Unbiased rounding of continuous outputs onto a symmetric grid of 2m+1 atoms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import RandomStream, sample_with_range
from .params import MechanismKind, PrivacyBudget, _as_budget

__all__ = ["GridSpec", "discretize", "discretize_probabilities", "discretize_ranges", "perturb_discrete"]

#: ``y m / C`` this close to an integer is treated as already being on the grid.
ATOM_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    half_range: float
    m: int

    def __post_init__(self) -> None:
        if not self.half_range > 0.0:
            raise ValueError("half_range must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")

    @property
    def step(self) -> float:
        return self.half_range / self.m

    def atoms(self) -> np.ndarray:
        return np.arange(-self.m, self.m + 1) * self.step

    @property
    def bits_per_sample(self) -> int:
        return bits_per_sample(self.m)


def bits_per_sample(m: int) -> int:
    return math.ceil(math.log2(2 * m + 1))


def _split(y: np.ndarray, half_range, m: int):
    scaled = y * m / half_range
    k = np.floor(scaled)
    frac = scaled - k
    near_upper = frac > 1.0 - ATOM_TOL
    k = np.where(near_upper, k + 1.0, k)
    frac = np.where(near_upper | (frac < ATOM_TOL), 0.0, frac)
    return k, frac


def discretize_probabilities(y, grid: GridSpec):
    """Return ``(lower_atom, upper_atom, p_lower)`` for each ``y``.

    ``p_lower = k + 1 - y m / C`` where ``k = floor(y m / C)``; when ``y`` is an
    atom both atoms coincide and ``p_lower`` is 1.
    """
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) > grid.half_range * (1.0 + ATOM_TOL)):
        raise ValueError("value outside [-C, C]")
    k, frac = _split(y, grid.half_range, grid.m)
    step = grid.step
    lower = k * step
    upper = np.where(frac == 0.0, lower, (k + 1.0) * step)
    return lower, upper, 1.0 - frac


def discretize_ranges(y, half_range, m: int, stream: RandomStream) -> np.ndarray:
    """Discretise each ``y[i]`` on its own grid of half-range ``half_range[i]``.

    Entries whose half-range is 0 are passed through unchanged; they come from
    branches whose outputs are already atomic.
    """
    y = np.asarray(y, dtype=float)
    half = np.broadcast_to(np.asarray(half_range, dtype=float), y.shape)
    out = y.copy()
    live = half > 0.0
    if not live.any():
        return out
    yl, hl = y[live], half[live]
    if np.any(np.abs(yl) > hl * (1.0 + ATOM_TOL)):
        raise ValueError("value outside [-C, C]")
    k, frac = _split(yl, hl, m)
    u = stream.uniform(yl.shape)
    # upper atom with probability frac; frac == 0 always yields the lower atom
    out[live] = (k + (u < frac)) * (hl / m)
    return out


def discretize(y, grid: GridSpec, stream: RandomStream):
    out = discretize_ranges(np.atleast_1d(np.asarray(y, dtype=float)), grid.half_range, grid.m, stream)
    return float(out[0]) if np.ndim(y) == 0 else out.reshape(np.shape(y))


def perturb_discrete(kind: MechanismKind, x, budget: PrivacyBudget | float, grid_m: int, stream: RandomStream):
    """Perturb with a piecewise or hybrid mechanism, then round continuous outputs to the grid."""
    kind = MechanismKind(kind)
    if not (kind.is_piecewise or kind.is_hybrid):
        raise ValueError(f"{kind.value} has no continuous output range to discretise")
    budget = _as_budget(budget)
    y, half = sample_with_range(kind, x, budget, stream)
    out = discretize_ranges(y, half, grid_m, stream)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

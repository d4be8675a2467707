"""One-dimensional epsilon-LDP perturbers for inputs in [-1, 1].

All samplers are vectorised: pass a scalar to get a float back, pass an array
to get an array of independent draws of the same shape.  Randomness comes
exclusively from an explicit :class:`RandomStream`; there is no global RNG.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import (
    MechanismKind,
    PrivacyBudget,
    _as_budget,
    hm_mixing_weight,
    piecewise_params,
    solve_beta,
    solve_p00,
    solve_t_opt,
    t_pm,
    t_pm_sub,
)

__all__ = [
    "MechanismKind",
    "RandomStream",
    "PerturbationRecord",
    "three_outputs_probabilities",
    "duchi_probability_positive",
    "perturb_three_outputs",
    "perturb_piecewise",
    "perturb_duchi",
    "perturb_laplace",
    "perturb",
    "sample_with_range",
    "piecewise_t",
    "records",
]


class RandomStream:
    """Seeded source of randomness with a draw counter.

    Two streams built from the same seed and queried with the same sequence of
    calls produce identical values.  ``spawn`` derives independent child
    streams from integer keys without touching the parent's state.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else 0
        else:
            self.seed = int(seed)
            self._seq = np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))
        self.position = 0

    def spawn(self, *keys: int) -> "RandomStream":
        seq = np.random.SeedSequence(self._seq.entropy, spawn_key=tuple(self._seq.spawn_key) + tuple(int(k) for k in keys))
        return RandomStream(seq)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def _count(self, size) -> None:
        self.position += 1 if size is None else int(np.prod(size))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        self._count(size)
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        self._count(size)
        return self._gen.normal(loc, scale, size)

    def laplace(self, size=None, scale: float = 1.0):
        self._count(size)
        return self._gen.laplace(0.0, scale, size)

    def integers(self, low: int, high, size=None):
        self._count(size)
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        self._count(n)
        return self._gen.permutation(n)


@dataclass(frozen=True)
class PerturbationRecord:
    x: float
    y: float
    kind: MechanismKind
    epsilon: float


def _check_domain(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.abs(arr) <= 1.0):
        raise ValueError("inputs must lie in [-1, 1]")
    return arr


def _shape_like(x, out):
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# Three-Outputs and Duchi


def three_outputs_probabilities(x, budget: PrivacyBudget | float):
    """Return ``(P[-C | x], P[0 | x], P[C | x])``.

    Probabilities for negative inputs come from the mirror identity
    ``P[C | x] = P[-C | -x]``.
    """
    budget = _as_budget(budget)
    e = budget.e
    p = solve_p00(budget)
    a = p.a
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    half = (1.0 - a) / 2.0
    toward = half + ((e - a) / (e + 1.0) - half) * ax  # output on the same side as x
    away = half + ((e - a) / (e * (e + 1.0)) - half) * ax
    zero = a - p.b * ax
    pos = np.where(x >= 0, toward, away)
    neg = np.where(x >= 0, away, toward)
    return neg, zero, pos


def perturb_three_outputs(x, budget: PrivacyBudget | float, stream: RandomStream):
    budget = _as_budget(budget)
    xa = _check_domain(x)
    c = solve_p00(budget).c_mag
    neg, zero, _ = three_outputs_probabilities(xa, budget)
    u = stream.uniform(xa.shape)
    out = np.where(u < neg, -c, np.where(u < neg + zero, 0.0, c))
    return _shape_like(x, out)


def duchi_probability_positive(x, budget: PrivacyBudget | float):
    e = _as_budget(budget).e
    return 0.5 + np.asarray(x, dtype=float) * (e - 1.0) / (2.0 * (e + 1.0))


def perturb_duchi(x, budget: PrivacyBudget | float, stream: RandomStream):
    budget = _as_budget(budget)
    xa = _check_domain(x)
    e = budget.e
    c = (e + 1.0) / (e - 1.0)
    u = stream.uniform(xa.shape)
    out = np.where(u < duchi_probability_positive(xa, budget), c, -c)
    return _shape_like(x, out)


def perturb_laplace(x, budget: PrivacyBudget | float, stream: RandomStream):
    budget = _as_budget(budget)
    xa = _check_domain(x)
    out = xa + stream.laplace(xa.shape, scale=2.0 / budget.epsilon)
    return _shape_like(x, out)


# ---------------------------------------------------------------------------
# piecewise family


def perturb_piecewise(x, budget: PrivacyBudget | float, t: float, stream: RandomStream):
    budget = _as_budget(budget)
    xa = _check_domain(x)
    pp = piecewise_params(budget, t)
    lo, hi = pp.bounds(xa)
    big_a = pp.a_bound
    u = stream.uniform(xa.shape)
    v = stream.uniform(xa.shape)
    w = stream.uniform(xa.shape)
    center = lo + (hi - lo) * v
    # tails [-A, L) and (R, A], chosen in proportion to their lengths
    left_len = lo + big_a
    right_len = big_a - hi
    tail_total = left_len + right_len
    pos = w * tail_total
    tail = np.where(pos < left_len, -big_a + pos, hi + (pos - left_len))
    out = np.where(u < pp.center_probability, center, tail)
    # rounding in L and R can push a draw a few ulps past the support edge
    out = np.clip(out, -big_a, big_a)
    return _shape_like(x, out)


def piecewise_t(kind: MechanismKind, budget: PrivacyBudget | float) -> float:
    kind = MechanismKind(kind)
    if kind is MechanismKind.PM:
        return t_pm(budget)
    if kind is MechanismKind.PM_OPT:
        return solve_t_opt(budget)
    if kind is MechanismKind.PM_SUB:
        return t_pm_sub(budget)
    raise ValueError(f"{kind.value} is not a piecewise mechanism")


# ---------------------------------------------------------------------------
# dispatch


def sample_with_range(kind: MechanismKind, x, budget: PrivacyBudget | float, stream: RandomStream):
    """Draw outputs together with the half-range of the continuous branch that produced them.

    The second array holds the piecewise half-range ``A`` wherever a continuous
    sampler fired and ``0`` wherever the output is already one of a finite set
    of atoms (Duchi, Three-Outputs) or unbounded (Laplace).  Discretisation uses
    it to decide which entries to round.
    """
    budget = _as_budget(budget)
    kind = MechanismKind(kind)
    xa = np.atleast_1d(_check_domain(x)).astype(float)
    zeros = np.zeros_like(xa)
    if kind is MechanismKind.LAPLACE:
        return perturb_laplace(xa, budget, stream), zeros
    if kind is MechanismKind.DUCHI:
        return perturb_duchi(xa, budget, stream), zeros
    if kind is MechanismKind.THREE_OUTPUTS:
        return perturb_three_outputs(xa, budget, stream), zeros
    if kind.is_piecewise:
        t = piecewise_t(kind, budget)
        return perturb_piecewise(xa, budget, t, stream), np.full_like(xa, piecewise_params(budget, t).a_bound)
    if kind is MechanismKind.HM:
        weight, t = hm_mixing_weight(budget), t_pm(budget)
        discrete = perturb_duchi
    else:
        weight, t = solve_beta(budget).beta, t_pm_sub(budget)
        discrete = perturb_three_outputs
    pick = stream.uniform(xa.shape) < weight
    out = np.empty_like(xa)
    half = np.zeros_like(xa)
    if pick.any():
        out[pick] = perturb_piecewise(xa[pick], budget, t, stream)
        half[pick] = piecewise_params(budget, t).a_bound
    if (~pick).any():
        out[~pick] = discrete(xa[~pick], budget, stream)
    return out, half


def perturb(kind: MechanismKind, x, budget: PrivacyBudget | float, stream: RandomStream):
    """Perturb ``x`` with the mechanism named by ``kind``."""
    out, _ = sample_with_range(kind, x, budget, stream)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def records(kind: MechanismKind, xs: Sequence[float], budget: PrivacyBudget | float, stream: RandomStream) -> list[PerturbationRecord]:
    budget = _as_budget(budget)
    ys = perturb(kind, np.asarray(xs, dtype=float), budget, stream)
    return [PerturbationRecord(float(x), float(y), MechanismKind(kind), budget.epsilon) for x, y in zip(xs, ys)]

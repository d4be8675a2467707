"""Derived constants and analytic variances for the numeric LDP mechanisms.

Every function here is a pure function of the privacy budget (and, where
relevant, the input ``x``).  Root solving for the Three-Outputs probability
``a = P[0 | 0]`` and the optimal piecewise shape ``t`` is done by bisection
followed by a single Newton step; closed-form radicals are deliberately kept
out of the production path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EPS_STAR",
    "EPS_PRIME",
    "MechanismKind",
    "PrivacyBudget",
    "ThreeOutputsParams",
    "PiecewiseParams",
    "HmTpParams",
    "InconsistentParametersError",
    "cubic_g",
    "quartic_t",
    "solve_p00",
    "solve_t_opt",
    "t_pm",
    "t_pm_sub",
    "piecewise_params",
    "solve_beta",
    "hm_mixing_weight",
    "variance_piecewise",
    "variance_three_outputs",
    "variance_duchi",
    "variance_laplace",
    "variance",
    "worst_case_variance",
]

LN2 = math.log(2.0)
#: Budget above which the Three-Outputs zero-probability sits at its upper bound.
EPS_PRIME = math.log((3.0 + math.sqrt(65.0)) / 2.0)
#: Budget below which HM-TP never invokes PM-SUB.
EPS_STAR = 0.610986


def _eps_star_quintic(z: float) -> float:
    return 3 * z**5 - 2 * z**3 + 3 * z**2 - 5 * z - 3


# e^{EPS_STAR/3} must be a root of the quintic above; the constant is only
# printed to six decimals, so the check is loose.
assert abs(_eps_star_quintic(math.exp(EPS_STAR / 3.0))) < 1e-4


class MechanismKind(str, enum.Enum):
    """Tags for every one-dimensional mechanism the library can sample."""

    LAPLACE = "laplace"
    DUCHI = "duchi"
    PM = "pm"
    PM_OPT = "pm-opt"
    PM_SUB = "pm-sub"
    THREE_OUTPUTS = "three-outputs"
    HM = "hm"
    HM_TP = "hm-tp"

    @classmethod
    def parse(cls, text: str) -> "MechanismKind":
        key = text.strip().lower().replace("_", "-")
        aliases = {"pmopt": "pm-opt", "pmsub": "pm-sub", "threeoutputs": "three-outputs",
                   "three": "three-outputs", "hmtp": "hm-tp"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown mechanism {text!r}")

    @property
    def is_piecewise(self) -> bool:
        return self in (MechanismKind.PM, MechanismKind.PM_OPT, MechanismKind.PM_SUB)

    @property
    def is_hybrid(self) -> bool:
        return self in (MechanismKind.HM, MechanismKind.HM_TP)


class InconsistentParametersError(ArithmeticError):
    """Raised when a derived quantity lands outside the range the analysis guarantees."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self) -> None:
        eps = float(self.epsilon)
        if not math.isfinite(eps) or eps <= 0.0:
            raise ValueError(f"privacy budget must be positive and finite, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def e(self) -> float:
        """``exp(epsilon)``."""
        return math.exp(self.epsilon)

    def split(self, k: int) -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon / k)


def _as_budget(budget: PrivacyBudget | float) -> PrivacyBudget:
    return budget if isinstance(budget, PrivacyBudget) else PrivacyBudget(budget)


@dataclass(frozen=True)
class ThreeOutputsParams:
    """``a`` is P[0 | 0], ``b = a(1 - e^-eps)`` is the slope of P[0 | x] in ``|x|``."""

    a: float
    b: float
    c_mag: float


@dataclass(frozen=True)
class PiecewiseParams:
    t: float
    c_hi: float
    d_lo: float
    a_bound: float
    e: float

    def bounds(self, x):
        """Return the center interval ``(L, R)`` for input ``x`` (scalar or array)."""
        scale = (self.e + self.t) / (self.t * (self.e - 1.0))
        return scale * (x * self.t - 1.0), scale * (x * self.t + 1.0)

    @property
    def center_probability(self) -> float:
        return self.e / (self.t + self.e)


@dataclass(frozen=True)
class HmTpParams:
    beta: float
    quant_a: Optional[float] = None
    quant_b: Optional[float] = None


# ---------------------------------------------------------------------------
# root finding


def _bisect_newton(
    f: Callable[[float], float],
    df: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-13,
) -> float:
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise InconsistentParametersError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    slope = df(root)
    if slope != 0.0:
        polished = root - f(root) / slope
        # keep the Newton step only if it stays in the bracket and helps
        if lo <= polished <= hi and abs(f(polished)) <= abs(f(root)):
            root = polished
    return root


def cubic_g(a: float, epsilon: float) -> float:
    """Cubic whose root in ``(0, e/(e+2))`` is the optimal P[0 | 0]."""
    e = math.exp(epsilon)
    return 2 * a**3 + a * a * (-e * e - 5 - 4 * e) + a * (7 * e - 4 * e * e - e**3) + (2 * e**3 - 4 * e * e)


def _cubic_g_prime(a: float, epsilon: float) -> float:
    e = math.exp(epsilon)
    return 6 * a * a + 2 * a * (-e * e - 5 - 4 * e) + (7 * e - 4 * e * e - e**3)


def quartic_t(t: float, epsilon: float) -> float:
    e = math.exp(epsilon)
    return t**4 + 2 * e * t**3 - 2 * e * t - e * e


def _quartic_t_prime(t: float, epsilon: float) -> float:
    e = math.exp(epsilon)
    return 4 * t**3 + 6 * e * t * t - 2 * e


@lru_cache(maxsize=4096)
def _p00(epsilon: float) -> float:
    e = math.exp(epsilon)
    upper = e / (e + 2.0)
    if epsilon < LN2:
        return 0.0
    if epsilon > EPS_PRIME:
        return upper
    # g(0) = 2e^2(e - 2) >= 0 and g(upper) has the sign of (-e^2 + 3e + 14) <= 0 here
    return _bisect_newton(
        lambda a: cubic_g(a, epsilon),
        lambda a: _cubic_g_prime(a, epsilon),
        0.0,
        upper,
    )


def solve_p00(budget: PrivacyBudget | float) -> ThreeOutputsParams:
    budget = _as_budget(budget)
    e = budget.e
    a = _p00(budget.epsilon)
    b = a * (1.0 - 1.0 / e)
    c_mag = (e + 1.0) / ((e - 1.0) * (1.0 - a / e))
    return ThreeOutputsParams(a=a, b=b, c_mag=c_mag)


@lru_cache(maxsize=4096)
def _t_opt(epsilon: float) -> float:
    e = math.exp(epsilon)
    # quartic(0) = -e^2 < 0 and quartic(e) = 2e^4 + e^4 - 2e^2 - e^2 > 0 for e > 1
    return _bisect_newton(
        lambda t: quartic_t(t, epsilon),
        lambda t: _quartic_t_prime(t, epsilon),
        0.0,
        e,
    )


def solve_t_opt(budget: PrivacyBudget | float) -> float:
    """Positive root of ``t^4 + 2e t^3 - 2e t - e^2``, the worst-case-optimal piecewise shape."""
    return _t_opt(_as_budget(budget).epsilon)


def t_pm(budget: PrivacyBudget | float) -> float:
    return math.exp(_as_budget(budget).epsilon / 2.0)


def t_pm_sub(budget: PrivacyBudget | float) -> float:
    return math.exp(_as_budget(budget).epsilon / 3.0)


def piecewise_params(budget: PrivacyBudget | float, t: float) -> PiecewiseParams:
    budget = _as_budget(budget)
    if not t > 0.0:
        raise ValueError("t must be positive")
    e = budget.e
    d_lo = t * (e - 1.0) / (2.0 * (t + e) ** 2)
    return PiecewiseParams(
        t=t,
        c_hi=e * d_lo,
        d_lo=d_lo,
        a_bound=(e + t) * (t + 1.0) / (t * (e - 1.0)),
        e=e,
    )


@lru_cache(maxsize=4096)
def _beta(epsilon: float) -> HmTpParams:
    if epsilon < EPS_STAR:
        return HmTpParams(beta=0.0)
    e = math.exp(epsilon)
    t = math.exp(epsilon / 3.0)
    a = _p00(epsilon)
    # At epsilon = ln 2 exactly the cubic's root is a = 0, which makes B vanish;
    # both formulas then reduce to (e - 1) / (e + t), so take the first one.
    if epsilon < LN2 or a == 0.0:
        k = a * e * (e + 1.0) ** 2
        beta = (2 * (e - a) ** 2 * (e - 1.0) - k) / (2 * (e - a) ** 2 * (e + t) - k)
        return HmTpParams(beta=beta)
    c = e
    shared = a * a * c * c * (c + 1.0) ** 4 / ((c + t) ** 2 * (c - a) ** 4 * (c - 1.0))
    quant_a = (
        shared / 4.0
        - shared / 2.0
        + ((t + 1.0) ** 3 + c - 1.0) / (3.0 * t * t * (c - 1.0) ** 2)
        - (1.0 - a) * c * c * (c + 1.0) ** 2 / ((c + t) * (c - 1.0) ** 2 * (c - a) ** 2)
    )
    quant_b = -((1.0 + t) ** 2) * shared / 4.0
    if quant_a >= 0.0 or quant_b >= 0.0:
        raise InconsistentParametersError(
            f"expected negative A and B at epsilon={epsilon}, got A={quant_a}, B={quant_b}"
        )
    beta = (-math.sqrt(quant_b / quant_a) + e - 1.0) / (e + t)
    return HmTpParams(beta=beta, quant_a=quant_a, quant_b=quant_b)


def solve_beta(budget: PrivacyBudget | float) -> HmTpParams:
    """Probability with which HM-TP routes an input to PM-SUB instead of Three-Outputs."""
    out = _beta(_as_budget(budget).epsilon)
    if not 0.0 <= out.beta <= 1.0:
        raise InconsistentParametersError(f"beta={out.beta} outside [0, 1]")
    return out


# ---------------------------------------------------------------------------
# variances


def variance_piecewise(budget: PrivacyBudget | float, t: float, x):
    budget = _as_budget(budget)
    e = budget.e
    const = (t + e) * ((t + 1.0) ** 3 + e - 1.0) / (3.0 * t * t * (e - 1.0) ** 2)
    return (t + 1.0) / (e - 1.0) * np.square(x) + const


def variance_three_outputs(budget: PrivacyBudget | float, x):
    budget = _as_budget(budget)
    p = solve_p00(budget)
    c2 = p.c_mag**2
    return c2 * (1.0 - p.a + p.b * np.abs(x)) - np.square(x)


def variance_duchi(budget: PrivacyBudget | float, x):
    e = _as_budget(budget).e
    return ((e + 1.0) / (e - 1.0)) ** 2 - np.square(x)


def variance_laplace(budget: PrivacyBudget | float, x=0.0):
    eps = _as_budget(budget).epsilon
    return 8.0 / eps**2 + 0.0 * np.asarray(x, dtype=float)


@lru_cache(maxsize=4096)
def _hm_weight(epsilon: float) -> float:
    # Both component variances are affine in x^2, so the mixture's maximum over
    # [-1, 1] sits at x = 0 or |x| = 1.  Each endpoint value is affine in q, and
    # the minimax q is where the two lines cross (clamped to [0, 1]).
    b = PrivacyBudget(epsilon)
    t = t_pm(b)
    pm0, pm1 = float(variance_piecewise(b, t, 0.0)), float(variance_piecewise(b, t, 1.0))
    du0, du1 = float(variance_duchi(b, 0.0)), float(variance_duchi(b, 1.0))
    # f0(q) = du0 + q (pm0 - du0), f1(q) = du1 + q (pm1 - du1)
    s0, s1 = pm0 - du0, pm1 - du1
    candidates = [0.0, 1.0]
    if s0 != s1:
        q = (du1 - du0) / (s0 - s1)
        if 0.0 < q < 1.0:
            candidates.append(q)
    return min(candidates, key=lambda q: (max(du0 + q * s0, du1 + q * s1), q))


def hm_mixing_weight(budget: PrivacyBudget | float) -> float:
    """Probability with which the HM baseline invokes PM (otherwise Duchi)."""
    return _hm_weight(_as_budget(budget).epsilon)


def variance(kind: MechanismKind, budget: PrivacyBudget | float, x):
    """Analytic ``Var[Y | x]`` for any mechanism kind."""
    budget = _as_budget(budget)
    kind = MechanismKind(kind)
    if kind is MechanismKind.LAPLACE:
        return variance_laplace(budget, x)
    if kind is MechanismKind.DUCHI:
        return variance_duchi(budget, x)
    if kind is MechanismKind.PM:
        return variance_piecewise(budget, t_pm(budget), x)
    if kind is MechanismKind.PM_OPT:
        return variance_piecewise(budget, solve_t_opt(budget), x)
    if kind is MechanismKind.PM_SUB:
        return variance_piecewise(budget, t_pm_sub(budget), x)
    if kind is MechanismKind.THREE_OUTPUTS:
        return variance_three_outputs(budget, x)
    if kind is MechanismKind.HM:
        q = hm_mixing_weight(budget)
        return q * variance_piecewise(budget, t_pm(budget), x) + (1 - q) * variance_duchi(budget, x)
    # Both branches are unbiased, so the mixture variance is the mixture of variances.
    beta = solve_beta(budget).beta
    return beta * variance_piecewise(budget, t_pm_sub(budget), x) + (1 - beta) * variance_three_outputs(budget, x)


def _quadratic_max(c2: float, c1: float, c0: float) -> float:
    """Max of ``c2 s^2 + c1 s + c0`` over ``s`` in [0, 1]."""
    vals = [c0, c2 + c1 + c0]
    if c2 < 0.0:
        s = -c1 / (2.0 * c2)
        if 0.0 < s < 1.0:
            vals.append(c2 * s * s + c1 * s + c0)
    return max(vals)


def _three_outputs_coeffs(budget: PrivacyBudget) -> tuple[float, float, float]:
    p = solve_p00(budget)
    c2 = p.c_mag**2
    return -1.0, c2 * p.b, c2 * (1.0 - p.a)


def _piecewise_coeffs(budget: PrivacyBudget, t: float) -> tuple[float, float, float]:
    return float(variance_piecewise(budget, t, 1.0) - variance_piecewise(budget, t, 0.0)), 0.0, float(
        variance_piecewise(budget, t, 0.0)
    )


def worst_case_variance(kind: MechanismKind, budget: PrivacyBudget | float) -> float:
    """``max_{x in [-1, 1]} Var[Y | x]``.

    Every variance here is a quadratic in ``|x|``, so the maximum is taken
    exactly over the two endpoints and the vertex.
    """
    budget = _as_budget(budget)
    kind = MechanismKind(kind)
    if kind is MechanismKind.LAPLACE:
        return 8.0 / budget.epsilon**2
    if kind is MechanismKind.DUCHI:
        return float(variance_duchi(budget, 0.0))
    if kind is MechanismKind.THREE_OUTPUTS:
        return _quadratic_max(*_three_outputs_coeffs(budget))
    if kind.is_piecewise:
        t = {MechanismKind.PM: t_pm, MechanismKind.PM_OPT: solve_t_opt, MechanismKind.PM_SUB: t_pm_sub}[kind](budget)
        return float(variance_piecewise(budget, t, 1.0))
    if kind is MechanismKind.HM:
        q = hm_mixing_weight(budget)
        p2, _, p0 = _piecewise_coeffs(budget, t_pm(budget))
        d0 = float(variance_duchi(budget, 0.0))
        return _quadratic_max(q * p2 - (1 - q), 0.0, q * p0 + (1 - q) * d0)
    beta = solve_beta(budget).beta
    p2, _, p0 = _piecewise_coeffs(budget, t_pm_sub(budget))
    t2, t1, t0 = _three_outputs_coeffs(budget)
    return _quadratic_max(beta * p2 + (1 - beta) * t2, (1 - beta) * t1, beta * p0 + (1 - beta) * t0)

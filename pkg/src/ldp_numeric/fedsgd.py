"""Federated SGD where each client uploads one LDP-perturbed gradient.

Clients are shuffled once and split into groups.  In each round the clients of
one group compute the gradient of their single example, clip it coordinate-wise
to [-1, 1], perturb it with :func:`perturb_tuple`, and the server steps along
the average of the noisy gradients.  Every client contributes at most once, so
each client's data is covered by a single epsilon-LDP report.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .mechanisms import RandomStream
from .multidim import perturb_tuple
from .params import MechanismKind, PrivacyBudget, _as_budget

__all__ = [
    "LossKind",
    "ModelState",
    "ClientExample",
    "GroupSchedule",
    "TraceRow",
    "TrainResult",
    "augment",
    "gradient",
    "batch_gradients",
    "clamp_gradient",
    "objective",
    "evaluate",
    "train",
    "trace_to_csv",
]


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"
    HINGE = "hinge"

    @property
    def is_classification(self) -> bool:
        return self is not LossKind.SQUARED


@dataclass(frozen=True)
class ModelState:
    theta: np.ndarray
    eta: float = 0.1
    loss: LossKind = LossKind.SQUARED
    lam: float = 1e-4

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).copy())
        object.__setattr__(self, "loss", LossKind(self.loss))
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        if self.lam < 0.0:
            raise ValueError("lam must be non-negative")

    @classmethod
    def zeros(cls, n_features: int, **kw) -> "ModelState":
        return cls(theta=np.zeros(n_features + 1), **kw)


@dataclass(frozen=True)
class ClientExample:
    features: np.ndarray
    label: float


@dataclass(frozen=True)
class GroupSchedule:
    group_size: int = 100
    max_iterations: int = 10_000
    convergence_tol: float = 0.0

    def __post_init__(self) -> None:
        if self.group_size < 1 or self.max_iterations < 1:
            raise ValueError("group_size and max_iterations must be positive")
        if self.convergence_tol < 0.0:
            raise ValueError("convergence_tol must be non-negative")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    loss: float
    metric: float


@dataclass
class TrainResult:
    state: ModelState
    trace: list[TraceRow] = field(default_factory=list)
    stop_reason: str = ""

    tail_fraction: float = 0.1

    @property
    def final_loss(self) -> float:
        """Probe objective averaged over the last ``tail_fraction`` of rounds.

        With a constant step size the iterate keeps fluctuating around the
        optimum, so the loss at the very last round is a single noisy draw; the
        tail average is a steadier summary of where training ended up.
        """
        return self._tail_mean("loss")

    @property
    def final_metric(self) -> float:
        return self._tail_mean("metric")

    def _tail_mean(self, attr: str) -> float:
        if not self.trace:
            return float("nan")
        m = max(1, math.ceil(self.tail_fraction * len(self.trace)))
        return float(np.mean([getattr(r, attr) for r in self.trace[-m:]]))


def augment(features) -> np.ndarray:
    """Append the constant bias feature."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    return np.hstack([f, np.ones((f.shape[0], 1))])


def batch_gradients(state: ModelState, features, labels) -> np.ndarray:
    xt = augment(features)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if xt.shape[1] != state.theta.shape[0]:
        raise ValueError(f"expected {state.theta.shape[0] - 1} features, got {xt.shape[1] - 1}")
    if xt.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on the number of examples")
    z = xt @ state.theta
    if state.loss is LossKind.SQUARED:
        coef = z - y
    elif state.loss is LossKind.LOGISTIC:
        # -y / (1 + exp(y z)), written to avoid overflow
        coef = -y * np.exp(-np.logaddexp(0.0, y * z))
    else:
        coef = np.where(y * z < 1.0, -y, 0.0)
    return coef[:, None] * xt + state.lam * state.theta


def gradient(state: ModelState, ex: ClientExample) -> np.ndarray:
    """Gradient of ``loss(theta; ex) + (lam / 2) |theta|^2``."""
    return batch_gradients(state, np.asarray(ex.features, dtype=float)[None, :], [ex.label])[0]


def clamp_gradient(g) -> np.ndarray:
    return np.clip(np.asarray(g, dtype=float), -1.0, 1.0)


def _pointwise_loss(loss: LossKind, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if loss is LossKind.SQUARED:
        return 0.5 * (z - y) ** 2
    if loss is LossKind.LOGISTIC:
        return np.logaddexp(0.0, -y * z)
    return np.maximum(0.0, 1.0 - y * z)


def _objective_z(state: ModelState, z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(_pointwise_loss(state.loss, z, y)) + 0.5 * state.lam * state.theta @ state.theta)


def _metric_z(loss: LossKind, z: np.ndarray, y: np.ndarray) -> float:
    if loss is LossKind.SQUARED:
        return float(np.mean((z - y) ** 2))
    pred = np.where(z >= 0.0, 1.0, -1.0)
    return float(np.mean(pred != y))


def objective(state: ModelState, features, labels) -> float:
    """Mean loss plus the L2 penalty, the quantity the gradients descend."""
    return _objective_z(state, augment(features) @ state.theta, np.asarray(labels, dtype=float))


def evaluate(state: ModelState, features, labels) -> float:
    """MSE for regression, misclassification rate for classification."""
    y = np.asarray(labels, dtype=float)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    return _metric_z(state.loss, augment(features) @ state.theta, y)


def train(
    features,
    labels,
    kind: Optional[MechanismKind],
    budget: Optional[PrivacyBudget | float],
    schedule: GroupSchedule,
    state: ModelState,
    stream: RandomStream,
    probe: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> TrainResult:
    """Run federated SGD.  ``kind=None`` trains without perturbation (the non-private control).

    ``probe`` is a held-out ``(features, labels)`` pair on which the trace
    records the objective and metric after every round; it defaults to the
    training data.
    """
    feats = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("need a non-empty 2-D feature matrix")
    if kind is not None:
        kind = MechanismKind(kind)
        budget = _as_budget(budget)
    probe_x, probe_y = probe if probe is not None else (feats, y)
    probe_xt = augment(probe_x)
    probe_y = np.asarray(probe_y, dtype=float)
    order = stream.permutation(feats.shape[0])
    n_groups = -(-feats.shape[0] // schedule.group_size)
    result = TrainResult(state=state)
    reason = "clients exhausted"
    for it in range(n_groups):
        if it >= schedule.max_iterations:
            reason = "max iterations"
            break
        members = order[it * schedule.group_size : (it + 1) * schedule.group_size]
        grads = clamp_gradient(batch_gradients(state, feats[members], y[members]))
        if kind is not None:
            grads = perturb_tuple(kind, grads, budget, stream)
        step = state.eta * grads.mean(axis=0)
        state = replace(state, theta=state.theta - step)
        z = probe_xt @ state.theta
        result.trace.append(TraceRow(it + 1, _objective_z(state, z, probe_y), _metric_z(state.loss, z, probe_y)))
        if np.max(np.abs(step)) < schedule.convergence_tol:
            reason = "converged"
            break
    result.state = state
    result.stop_reason = reason
    return result


def trace_to_csv(result: TrainResult, mechanism: str, epsilon: Optional[float], seed: int, path: Optional[str | Path] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loss", "metric", "mechanism", "epsilon", "seed"])
    eps = "" if epsilon is None else repr(float(epsilon))
    for row in result.trace:
        w.writerow([row.iteration, repr(row.loss), repr(row.metric), mechanism, eps, seed])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text

"""Experiment runners: variance tables, mean estimation, discretisation sweeps and ERM.

Seeding rule: every random quantity is drawn from a child of
``SeedSequence(seed)`` addressed by a fixed key.

* data for repetition ``r``: ``(0, r)``
* mechanism draws: ``(1, r)``
* discretisation draws at grid size ``m``: ``(2, r, m)``
* ERM client ordering and noise: ``(3, r)``; the train/test split: ``(0, 0)``

The keys leave out the mechanism and the budget on purpose.  Within one
repetition every (mechanism, epsilon) cell starts from the same random numbers,
so paired comparisons across mechanisms see less noise.  Adding, removing or
reordering mechanisms and budgets never changes the draws of any cell.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset, synth_gaussian, synth_regression
from .discretize import bits_per_sample, discretize_ranges
from .fedsgd import GroupSchedule, LossKind, ModelState, train
from .mechanisms import RandomStream
from .multidim import draw_tuples
from .params import MechanismKind, PrivacyBudget, worst_case_variance

__all__ = [
    "Task",
    "ExperimentConfig",
    "Record",
    "ExperimentReport",
    "NON_PRIVATE",
    "run_variance_table",
    "run_mean_estimation",
    "run_discretize_sweep",
    "run_erm",
    "run",
]

NON_PRIVATE = "non-private"
DEFAULT_MECHANISMS = (
    MechanismKind.LAPLACE,
    MechanismKind.DUCHI,
    MechanismKind.PM,
    MechanismKind.PM_OPT,
    MechanismKind.PM_SUB,
    MechanismKind.THREE_OUTPUTS,
    MechanismKind.HM,
    MechanismKind.HM_TP,
)


class Task(str, enum.Enum):
    VARIANCE_TABLE = "variance-table"
    MEAN_ESTIMATION = "mean-estimation"
    DISCRETIZE_SWEEP = "discretize-sweep"
    ERM = "erm"


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task
    mechanisms: tuple[MechanismKind, ...] = DEFAULT_MECHANISMS
    epsilons: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    n_users: int = 10_000
    d: int = 16
    repetitions: int = 100
    seed: int = 0
    grid_m: Optional[int] = None
    grid_ms: tuple[int, ...] = (1, 10, 100, 2000)
    mu: float = 1.0 / 3.0
    sigma: float = 0.25
    fixed_x: Optional[float] = None
    loss: LossKind = LossKind.SQUARED
    group_size: int = 100
    eta: float = 0.1
    lam: float = 1e-4
    max_iterations: int = 10_000
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "mechanisms", tuple(MechanismKind(m) for m in self.mechanisms))
        object.__setattr__(self, "epsilons", tuple(PrivacyBudget(e).epsilon for e in self.epsilons))
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.n_users < 1 or self.d < 1:
            raise ValueError("n_users and d must be positive")
        if not self.mechanisms or not self.epsilons:
            raise ValueError("need at least one mechanism and one epsilon")
        if self.fixed_x is not None and abs(self.fixed_x) > 1.0:
            raise ValueError("fixed_x must lie in [-1, 1]")
        if self.threads < 1:
            raise ValueError("threads must be positive")


@dataclass
class Record:
    mechanism: str
    epsilon: Optional[float]
    repetition: int
    mse: Optional[float] = None
    max_error: Optional[float] = None
    worst_var: Optional[float] = None
    misclassification: Optional[float] = None
    final_loss: Optional[float] = None
    grid_m: Optional[int] = None
    bits_per_sample: Optional[int] = None
    wall_time: float = field(default=0.0, compare=False)


#: Columns written to CSV/JSON; wall time stays in memory so report files are reproducible.
REPORT_COLUMNS = (
    "mechanism",
    "epsilon",
    "repetition",
    "mse",
    "max_error",
    "worst_var",
    "misclassification",
    "final_loss",
    "grid_m",
    "bits_per_sample",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list[Record] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in self.records]

    def select(self, mechanism=None, epsilon=None, grid_m="any") -> list[Record]:
        out = []
        for r in self.records:
            if mechanism is not None and r.mechanism != _name(mechanism):
                continue
            if epsilon is not None and r.epsilon != float(epsilon):
                continue
            if grid_m != "any" and r.grid_m != grid_m:
                continue
            out.append(r)
        return out

    def mean(self, column: str, mechanism=None, epsilon=None, grid_m="any") -> float:
        vals = [getattr(r, column) for r in self.select(mechanism, epsilon, grid_m)]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def wide_table(self) -> tuple[list[str], list[list]]:
        """Variance table layout: one row per epsilon, one column per mechanism."""
        mechs = [m.value for m in self.config.mechanisms]
        header = ["epsilon"] + mechs
        body = []
        for eps in self.config.epsilons:
            cells = {r.mechanism: r.worst_var for r in self.records if r.epsilon == eps}
            body.append([eps] + [cells.get(m) for m in mechs])
        return header, body

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.config.task is Task.VARIANCE_TABLE:
            header, body = self.wide_table()
            w.writerow(header)
            for row in body:
                w.writerow([_fmt(v) for v in row])
        else:
            w.writerow(REPORT_COLUMNS)
            for row in self.rows():
                w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        cfg = asdict(self.config)
        cfg = {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in cfg.items()}
        cfg["mechanisms"] = [m.value for m in self.config.mechanisms]
        payload = {"config": cfg, "records": self.rows()}
        if self.config.task is Task.VARIANCE_TABLE:
            header, body = self.wide_table()
            payload["table"] = [dict(zip(header, row)) for row in body]
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        """Human-readable per-(mechanism, epsilon) averages."""
        lines = []
        keys = []
        for r in self.records:
            key = (r.mechanism, r.epsilon, r.grid_m)
            if key not in keys:
                keys.append(key)
        cols = [c for c in ("worst_var", "mse", "misclassification", "final_loss") if any(getattr(r, c) is not None for r in self.records)]
        lines.append("  ".join(["mechanism".ljust(14), "epsilon".rjust(8), "grid_m".rjust(6)] + [c.rjust(14) for c in cols]))
        for mech, eps, m in keys:
            vals = [self.mean(c, mech, eps, m) for c in cols]
            eps_s = "" if eps is None else f"{eps:g}"
            lines.append(
                "  ".join([mech.ljust(14), eps_s.rjust(8), ("" if m is None else str(m)).rjust(6)] + [f"{v:14.6g}" for v in vals])
            )
        return "\n".join(lines) + "\n"


def _name(m) -> str:
    return m if isinstance(m, str) else MechanismKind(m).value


def _root(config: ExperimentConfig) -> RandomStream:
    return RandomStream(config.seed)


def _map_repetitions(config: ExperimentConfig, fn: Callable[[int], list[Record]]) -> list[Record]:
    reps = range(config.repetitions)
    if config.threads == 1:
        chunks = [fn(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(fn, reps))
    return [rec for chunk in chunks for rec in chunk]


# ---------------------------------------------------------------------------


def run_variance_table(config: ExperimentConfig) -> ExperimentReport:
    """Worst-case variance of every (mechanism, epsilon).  No sampling; one record per cell."""
    report = ExperimentReport(config)
    for eps in config.epsilons:
        for kind in config.mechanisms:
            report.records.append(Record(kind.value, eps, 0, worst_var=worst_case_variance(kind, eps)))
    return report


def _population(config: ExperimentConfig, rep: int, dataset: Optional[Dataset]) -> np.ndarray:
    if dataset is not None:
        return dataset.rows
    if config.fixed_x is not None:
        return np.full((config.n_users, config.d), float(config.fixed_x))
    data_stream = _root(config).spawn(0, rep)
    return synth_gaussian(config.n_users, config.d, config.mu, config.sigma, data_stream).rows


def run_mean_estimation(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> ExperimentReport:
    """Estimate coordinate means from perturbed tuples; MSE is against the sample's own means."""
    root = _root(config)

    def one(rep: int) -> list[Record]:
        rows = _population(config, rep, dataset)
        truth = rows.mean(axis=0)
        out = []
        for kind in config.mechanisms:
            for eps in config.epsilons:
                t0 = time.perf_counter()
                stream = root.spawn(1, rep)
                draw = draw_tuples(kind, rows, eps, stream)
                values = draw.values
                bits = None
                if config.grid_m is not None and (kind.is_piecewise or kind.is_hybrid):
                    dstream = root.spawn(2, rep, config.grid_m)
                    values = discretize_ranges(values, draw.half_range, config.grid_m, dstream)
                    bits = bits_per_sample(config.grid_m)
                err = draw.assemble(values).mean(axis=0) - truth
                out.append(
                    Record(
                        kind.value,
                        eps,
                        rep,
                        mse=float(np.mean(err**2)),
                        max_error=float(np.max(np.abs(err))),
                        worst_var=worst_case_variance(kind, eps),
                        grid_m=config.grid_m if bits is not None else None,
                        bits_per_sample=bits,
                        wall_time=time.perf_counter() - t0,
                    )
                )
        return out

    return ExperimentReport(config, _map_repetitions(config, one))


def run_discretize_sweep(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> ExperimentReport:
    """Mean-estimation error with and without rounding to each grid size in ``config.grid_ms``.

    Each repetition draws the continuous outputs once and then discretises
    those same draws at every grid size, so the comparison isolates the
    rounding error.  Records with ``grid_m`` empty are the continuous baseline.
    """
    root = _root(config)
    grid_ms = tuple(config.grid_ms) if config.grid_m is None else (config.grid_m,)
    for kind in config.mechanisms:
        if not (kind.is_piecewise or kind.is_hybrid):
            raise ValueError(f"{kind.value} has no continuous range to discretise")

    def one(rep: int) -> list[Record]:
        rows = _population(config, rep, dataset)
        truth = rows.mean(axis=0)
        out = []
        for kind in config.mechanisms:
            for eps in config.epsilons:
                t0 = time.perf_counter()
                draw = draw_tuples(kind, rows, eps, root.spawn(1, rep))
                err = draw.assemble().mean(axis=0) - truth
                wv = worst_case_variance(kind, eps)
                out.append(
                    Record(kind.value, eps, rep, mse=float(np.mean(err**2)), max_error=float(np.max(np.abs(err))),
                           worst_var=wv, wall_time=time.perf_counter() - t0)
                )
                for m in grid_ms:
                    t0 = time.perf_counter()
                    dstream = root.spawn(2, rep, m)
                    vals = discretize_ranges(draw.values, draw.half_range, m, dstream)
                    err = draw.assemble(vals).mean(axis=0) - truth
                    out.append(
                        Record(kind.value, eps, rep, mse=float(np.mean(err**2)), max_error=float(np.max(np.abs(err))),
                               worst_var=wv, grid_m=m, bits_per_sample=bits_per_sample(m),
                               wall_time=time.perf_counter() - t0)
                    )
        return out

    return ExperimentReport(config, _map_repetitions(config, one))


def _split(n: int, stream: RandomStream, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    order = stream.permutation(n)
    cut = int(round(train_fraction * n))
    return order[:cut], order[cut:]


def run_erm(config: ExperimentConfig, dataset: Dataset, loss: Optional[LossKind] = None) -> ExperimentReport:
    """Train with federated SGD per (mechanism, epsilon, repetition) plus a non-private control.

    The 80/20 train/test split is drawn once from the seed and shared by every run.
    """
    loss = LossKind(loss) if loss is not None else config.loss
    if dataset.labels is None:
        raise ValueError("ERM needs a labelled dataset")
    labels = np.asarray(dataset.labels, dtype=float)
    if loss.is_classification and not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("classification labels must be +-1")
    root = _root(config)
    tr, te = _split(dataset.n, root.spawn(0, 0))
    xtr, ytr, xte, yte = dataset.rows[tr], labels[tr], dataset.rows[te], labels[te]
    schedule = GroupSchedule(group_size=config.group_size, max_iterations=config.max_iterations)

    def fit(kind: Optional[MechanismKind], eps: Optional[float], rep: int) -> Record:
        t0 = time.perf_counter()
        state = ModelState.zeros(dataset.d, eta=config.eta, loss=loss, lam=config.lam)
        res = train(xtr, ytr, kind, eps, schedule, state, root.spawn(3, rep), probe=(xte, yte))
        metric = res.final_metric
        return Record(
            NON_PRIVATE if kind is None else kind.value,
            eps,
            rep,
            mse=None if loss.is_classification else metric,
            misclassification=metric if loss.is_classification else None,
            worst_var=None if kind is None else worst_case_variance(kind, eps),
            final_loss=res.final_loss,
            wall_time=time.perf_counter() - t0,
        )

    def one(rep: int) -> list[Record]:
        out = [fit(None, None, rep)]
        out.extend(fit(kind, eps, rep) for kind in config.mechanisms for eps in config.epsilons)
        return out

    return ExperimentReport(config, _map_repetitions(config, one))


def default_regression_dataset(config: ExperimentConfig, n_features: int = 1, noise_sigma: float = 0.5) -> Dataset:
    return synth_regression(config.n_users, n_features, config.seed, noise_sigma, _root(config).spawn(4))


def run(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> ExperimentReport:
    if config.task is Task.VARIANCE_TABLE:
        return run_variance_table(config)
    if config.task is Task.MEAN_ESTIMATION:
        return run_mean_estimation(config, dataset)
    if config.task is Task.DISCRETIZE_SWEEP:
        return run_discretize_sweep(config, dataset)
    return run_erm(config, dataset if dataset is not None else default_regression_dataset(config), config.loss)

"""Command-line entry point.

Exit status is 0 on success, 1 for usage errors (bad flags or values) and 2
for data errors (unreadable or malformed input files).  Every error goes to
standard error as one line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .data import DataError, load_csv, read_schema
from .discretize import perturb_discrete
from .fedsgd import LossKind
from .mechanisms import RandomStream, perturb
from .params import (
    MechanismKind,
    PrivacyBudget,
    solve_beta,
    solve_p00,
    solve_t_opt,
    t_pm_sub,
    worst_case_variance,
)

THREADS_ENV = "LDP_NUMERIC_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kinds(text: str) -> list[MechanismKind]:
    try:
        return [MechanismKind.parse(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# flag name -> (argparse kwargs, default)
_FLAGS = {
    "epsilons": (dict(type=_floats, help="privacy budget(s), comma separated"), [0.5, 1.0, 2.0, 4.0]),
    "mechanisms": (dict(type=_kinds, help="mechanism(s), comma separated: " + ", ".join(k.value for k in MechanismKind)),
                   list(bench.DEFAULT_MECHANISMS)),
    "n_users": (dict(type=int, help="number of users / clients"), 10_000),
    "dims": (dict(type=int, help="attributes per tuple"), 16),
    "grid_m": (dict(type=_ints, help="discretisation half-grid size(s), comma separated"), None),
    "seed": (dict(type=int, help="master random seed"), 0),
    "repetitions": (dict(type=int, help="independent repetitions"), 100),
    "out": (dict(type=str, help="write the report to this file"), None),
    "format": (dict(choices=["csv", "json"], help="report format"), "csv"),
    "loss": (dict(choices=[k.value for k in LossKind], help="ERM loss"), "squared"),
    "data": (dict(type=str, help="CSV file of input tuples"), None),
    "schema": (dict(type=str, help="schema file for --data (lines of 'column = numeric|categorical|label')"), None),
    "mu": (dict(type=float, help="mean of the synthetic truncated Gaussian"), 1.0 / 3.0),
    "x": (dict(type=float, help="input value in [-1, 1]"), None),
    "group_size": (dict(type=int, help="clients per federated round"), 100),
    "eta": (dict(type=float, help="learning rate"), 0.1),
}

_ALIASES = {"epsilons": ["--epsilon"], "mechanisms": ["--mechanism"]}

_SUBCOMMANDS = {
    "variance-table": ("worst-case variance of each mechanism at each budget", ["epsilons", "mechanisms", "out", "format"]),
    "mean-estimation": ("MSE of mean estimation on synthetic or CSV data",
                        ["epsilons", "mechanisms", "n_users", "dims", "grid_m", "seed", "repetitions", "out", "format",
                         "data", "schema", "mu"]),
    "discretize-sweep": ("mean-estimation MSE with and without output discretisation",
                         ["epsilons", "mechanisms", "n_users", "dims", "grid_m", "seed", "repetitions", "out", "format",
                          "data", "schema", "mu"]),
    "erm": ("federated SGD with perturbed gradients",
            ["epsilons", "mechanisms", "n_users", "seed", "repetitions", "out", "format", "loss", "data", "schema",
             "group_size", "eta"]),
    "perturb": ("draw one perturbed value", ["mechanisms", "epsilons", "x", "seed", "grid_m"]),
    "params": ("derived mechanism parameters and worst-case variances", ["epsilons", "format", "out"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ldp-numeric", description="Local differential privacy for numeric data.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, (help_text, flags) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for flag in flags:
            kwargs, _ = _FLAGS[flag]
            opts = ["--" + flag.replace("_", "-")] + _ALIASES.get(flag, [])
            p.add_argument(*opts, dest=flag, default=None, **kwargs)
        p.add_argument("--config", default=None, help="flat 'key = value' file; command-line flags take precedence")
    return parser


def _read_config(path: str, allowed: Sequence[str]) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        key = {"epsilon": "epsilons", "mechanism": "mechanisms"}.get(key, key)
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for this command")
        values[key] = val
    return values


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    flags = _SUBCOMMANDS[args.command][1]
    if args.config:
        for key, raw in _read_config(args.config, flags).items():
            if getattr(args, key) is None:
                kwargs, _ = _FLAGS[key]
                conv = kwargs.get("type", str)
                try:
                    value = conv(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config key {key}: {exc}") from None
                if "choices" in kwargs and value not in kwargs["choices"]:
                    raise UsageError(f"config key {key}: invalid choice {value!r}")
                setattr(args, key, value)
    for key in flags:
        if getattr(args, key) is None:
            setattr(args, key, _FLAGS[key][1])
    return args


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _emit(text: str, out: Optional[str], stdout) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise DataError(f"cannot write {out}: {exc.strerror}") from None
    else:
        stdout.write(text)


def _load_dataset(args, loss: Optional[str] = None):
    if args.data is None:
        if args.schema is not None:
            raise UsageError("--schema requires --data")
        return None
    if args.schema is None:
        raise UsageError("--data requires --schema")
    try:
        schema = read_schema(args.schema)
        return load_csv(args.data, schema, loss=loss)
    except OSError as exc:
        raise DataError(f"cannot read {exc.filename}: {exc.strerror}") from None


def _single(values: list, name: str):
    if len(values) != 1:
        raise UsageError(f"{name} takes exactly one value here")
    return values[0]


def _cmd_params(args, stdout) -> None:
    rows = []
    for eps in args.epsilons:
        b = PrivacyBudget(eps)
        p = solve_p00(b)
        hp = solve_beta(b)
        row = {
            "epsilon": eps,
            "a": p.a,
            "C": p.c_mag,
            "t_opt": solve_t_opt(b),
            "t_sub": t_pm_sub(b),
            "beta": hp.beta,
        }
        row.update({f"worst_{k.value}": worst_case_variance(k, b) for k in MechanismKind})
        rows.append(row)
    if args.format == "json":
        text = json.dumps(rows if len(rows) > 1 else rows[0], indent=2) + "\n"
    else:
        blocks = ["\n".join(f"{k} = {v!r}" for k, v in row.items()) for row in rows]
        text = "\n\n".join(blocks) + "\n"
    _emit(text, args.out, stdout)


def _cmd_perturb(args, stdout) -> None:
    kind = _single(args.mechanisms, "--mechanism")
    eps = _single(args.epsilons, "--epsilon")
    if args.x is None:
        raise UsageError("perturb needs --x")
    if abs(args.x) > 1.0:
        raise UsageError("--x must lie in [-1, 1]")
    stream = RandomStream(args.seed)
    if args.grid_m:
        y = perturb_discrete(kind, args.x, eps, _single(args.grid_m, "--grid-m"), stream)
    else:
        y = perturb(kind, args.x, eps, stream)
    stdout.write(f"{y!r}\n")


def _cmd_bench(args, stdout) -> None:
    task = bench.Task(args.command)
    kw = dict(
        task=task,
        mechanisms=tuple(args.mechanisms),
        epsilons=tuple(args.epsilons),
        seed=getattr(args, "seed", 0),
        threads=_threads(),
    )
    if task is not bench.Task.VARIANCE_TABLE:
        kw.update(n_users=args.n_users, repetitions=args.repetitions)
    if task in (bench.Task.MEAN_ESTIMATION, bench.Task.DISCRETIZE_SWEEP):
        kw.update(d=args.dims, mu=args.mu)
        if args.grid_m:
            if task is bench.Task.MEAN_ESTIMATION:
                kw["grid_m"] = _single(args.grid_m, "--grid-m")
            else:
                kw["grid_ms"] = tuple(args.grid_m)
    if task is bench.Task.ERM:
        kw.update(loss=args.loss, group_size=args.group_size, eta=args.eta)
    try:
        config = bench.ExperimentConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = None
    if task is not bench.Task.VARIANCE_TABLE:
        dataset = _load_dataset(args, loss=args.loss if task is bench.Task.ERM else None)
    if dataset is not None and task is bench.Task.ERM and dataset.labels is None:
        raise DataError("ERM data needs a label column")
    try:
        report = bench.run(config, dataset)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    text = report.to_json() if args.format == "json" else report.to_csv()
    _emit(text, args.out, stdout)
    if args.out:
        stdout.write(report.summary())


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = _resolve(build_parser().parse_args(argv))
        if args.command == "params":
            _cmd_params(args, stdout)
        elif args.command == "perturb":
            _cmd_perturb(args, stdout)
        else:
            _cmd_bench(args, stdout)
    except UsageError as exc:
        stderr.write(f"ldp-numeric: error: {exc}\n")
        return 1
    except DataError as exc:
        stderr.write(f"ldp-numeric: data error: {exc}\n")
        return 2
    except ValueError as exc:
        stderr.write(f"ldp-numeric: error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

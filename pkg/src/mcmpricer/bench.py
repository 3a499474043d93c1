"""Experiment orchestration: run configs, sweeps, scaling, and persistence.

The CLI exposes three subcommands::

    mcmpricer price   --config cfg.json [--method P2opt --dim 5 ...]
    mcmpricer sweep   --config cfg.json --axes '{"dim": [1, 5, 10]}'
    mcmpricer scaling --config cfg.json --degrees 1,2,4

Results are written as CSV (one row per cell) plus a JSON mirror.  Identical
config and seed produce identical tables up to the runtime columns.
Exit codes: 0 ok, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, McmPricerError, NonDeterministicResultError
from .pricer import MCM_METHODS, Payoff, price_ls, price_mcm

ENV_THREADS = "MCMPRICER_THREADS"
TABLE_COLUMNS = ("method", "payoff", "dim", "steps", "paths", "price", "std", "fallbacks", "runtime_ms")
CALIBRATIONS = ("closed", "M1", "M2")


@dataclass(frozen=True)
class RunConfig:
    """One pricing experiment; see README for the JSON schema."""

    payoff: str = "geometric_put"
    dim: int = 1
    strike: float = 100.0
    maturity: float = 1.0
    rate: float = float(np.log(1.1))
    vol: object = 0.2
    s0: float = 100.0
    n_steps: int = 10
    log2_paths: int = 10
    method: str = "P2opt"
    conditioning: bool = True
    calibration: str = "closed"
    m2_eps: float = 1e-3
    replications: int = 16
    seed: int = 42
    threads: int = 1
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.method not in MCM_METHODS + ("LS",):
            raise ConfigError("method", f"must be one of {MCM_METHODS + ('LS',)}, got {self.method!r}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError("calibration", f"must be one of {CALIBRATIONS}, got {self.calibration!r}")
        for name in ("strike", "maturity", "m2_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, "must be positive")
        for name in ("dim", "n_steps", "replications", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not 0 <= self.log2_paths <= 26:
            raise ConfigError("log2_paths", "must be in [0, 26]")
        if self.rate < 0:
            raise ConfigError("rate", "must be nonnegative")
        if self.s0 <= 0:
            raise ConfigError("s0", "must be positive")
        try:
            Payoff(kind=self.payoff, dim=self.dim, strike=self.strike)
        except (ValueError, McmPricerError) as exc:
            raise ConfigError("payoff", str(exc)) from exc
        return self

    @property
    def n_paths(self) -> int:
        return 1 << self.log2_paths

    @classmethod
    def from_json(cls, path: str, overrides: dict | None = None) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "top-level JSON value must be an object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        merged = {**data, **(overrides or {})}
        try:
            return cls(**merged).validate()
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc


@dataclass
class PriceTable:
    """Rows keyed by (method, payoff, dim, steps, paths), deterministically ordered."""

    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append({c: row[c] for c in TABLE_COLUMNS})

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r["method"], r["payoff"], r["dim"], r["steps"], r["paths"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "failures": self.failures}, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str) -> "PriceTable":
        table = cls()
        for row in csv.DictReader(io.StringIO(text)):
            table.add(
                method=row["method"], payoff=row["payoff"],
                dim=int(row["dim"]), steps=int(row["steps"]), paths=int(row["paths"]),
                price=float(row["price"]), std=float(row["std"]),
                fallbacks=int(row["fallbacks"]), runtime_ms=float(row["runtime_ms"]),
            )
        return table

    def content_key(self) -> tuple:
        """Row contents excluding runtime columns, for determinism checks."""
        return tuple(
            tuple(r[c] for c in TABLE_COLUMNS if c != "runtime_ms") for r in self.rows
        )

    def write(self, path: str) -> None:
        base, ext = os.path.splitext(path)
        csv_path = path if ext.lower() == ".csv" else base + ".csv"
        json_path = base + ".json"
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            fh.write(self.to_json())


def _run_cell(config: RunConfig) -> dict:
    payoff = Payoff(kind=config.payoff, dim=config.dim, strike=config.strike)
    t0 = time.perf_counter()
    if config.method == "LS":
        est = price_ls(
            payoff, config.vol, config.maturity, config.n_steps, config.s0, config.rate,
            config.n_paths, config.seed, replications=config.replications, n_workers=config.threads,
        )
    else:
        est = price_mcm(
            payoff, config.vol, config.maturity, config.n_steps, config.s0, config.rate,
            config.n_paths, config.seed, method=config.method, conditioning=config.conditioning,
            replications=config.replications, n_workers=config.threads,
            calibration=config.calibration, m2_eps=config.m2_eps,
        )
    runtime_ms = (time.perf_counter() - t0) * 1e3
    return {
        "method": config.method, "payoff": config.payoff, "dim": config.dim,
        "steps": config.n_steps, "paths": config.n_paths,
        "price": est.price, "std": est.std, "fallbacks": est.fallbacks,
        "runtime_ms": runtime_ms, "values": est.values,
    }


def run(config: RunConfig) -> PriceTable:
    """Execute one validated config; emits a single-row table."""
    config.validate()
    cell = _run_cell(config)
    if config.replications == 1:
        sys.stderr.write("warning: replications=1, std dev reported as 0\n")
    table = PriceTable()
    table.add(**{k: v for k, v in cell.items() if k in TABLE_COLUMNS})
    return table


SWEEP_AXES = ("dim", "steps", "log2_paths", "method")


def sweep(config: RunConfig, axes: dict[str, list]) -> PriceTable:
    """Cross-product of runs over the given axes, concatenated in one table.

    Failed cells are recorded in table.failures and the sweep continues.
    """
    config.validate()
    bad = set(axes) - set(SWEEP_AXES)
    if bad:
        raise ConfigError(sorted(bad)[0], f"sweep axes limited to {SWEEP_AXES}")
    names = [a for a in SWEEP_AXES if a in axes]
    table = PriceTable()

    def recurse(i: int, cfg: RunConfig) -> None:
        if i == len(names):
            try:
                cfg.validate()
                cell = _run_cell(cfg)
            except (McmPricerError, ValueError) as exc:
                table.failures.append({
                    "cell": {n: getattr(cfg, "n_steps" if n == "steps" else n) for n in names},
                    "error": str(exc),
                })
                return
            table.add(**{k: v for k, v in cell.items() if k in TABLE_COLUMNS})
            return
        for value in axes[names[i]]:
            fld = "n_steps" if names[i] == "steps" else names[i]
            recurse(i + 1, replace(cfg, **{fld: value}))

    recurse(0, config)
    table.sort()
    return table


def scaling_report(config: RunConfig, degrees: list[int]) -> list[dict]:
    """Same-seed runs at each parallelism degree with a hard determinism check.

    Returns one row per degree: (degree, runtime_ms, speedup, price).  Raises
    NonDeterministicResultError when any degree disagrees bitwise on the
    replication values.
    """
    config.validate()
    if not degrees or any(d < 1 for d in degrees):
        raise ConfigError("degrees", "must be a nonempty list of integers >= 1")
    rows = []
    reference = None
    for degree in degrees:
        cell = _run_cell(replace(config, threads=degree))
        if reference is None:
            reference = cell["values"]
        elif cell["values"] != reference:
            raise NonDeterministicResultError(
                f"degree {degree} changed replication values: {cell['values']} != {reference}"
            )
        rows.append({
            "degree": degree,
            "runtime_ms": cell["runtime_ms"],
            "price": cell["price"],
            "std": cell["std"],
        })
    base = rows[0]["runtime_ms"]
    for row in rows:
        row["speedup"] = base / row["runtime_ms"] if row["runtime_ms"] > 0 else float("inf")
    return rows


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _default_threads() -> int:
    env = os.environ.get(ENV_THREADS)
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=False, help="JSON config file")
    parser.add_argument("--method", choices=MCM_METHODS + ("LS",))
    parser.add_argument("--payoff", choices=("geometric_put", "min_put", "max_call"))
    parser.add_argument("--dim", type=int)
    parser.add_argument("--steps", type=int, dest="n_steps")
    parser.add_argument("--log2-paths", type=int, dest="log2_paths")
    parser.add_argument("--replications", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--no-conditioning", action="store_true")
    parser.add_argument("--calibration", choices=CALIBRATIONS)
    parser.add_argument("--out", help="output CSV path (a JSON mirror is written next to it)")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for name in ("method", "payoff", "dim", "n_steps", "log2_paths", "replications",
                 "seed", "threads", "calibration", "out"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_conditioning", False):
        overrides["conditioning"] = False
    if "threads" not in overrides and os.environ.get(ENV_THREADS):
        overrides["threads"] = _default_threads()
    if args.config:
        return RunConfig.from_json(args.config, overrides)
    return replace(RunConfig(), **overrides).validate()


def _emit(table: PriceTable, out: str | None) -> None:
    sys.stdout.write(table.to_csv())
    if out:
        table.write(out)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mcmpricer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_price = sub.add_parser("price", help="price one config")
    _add_common(p_price)

    p_sweep = sub.add_parser("sweep", help="cross-product of configs")
    _add_common(p_sweep)
    p_sweep.add_argument("--axes", required=True, help='JSON object, e.g. {"dim": [1,5], "steps": [10,20]}')

    p_scale = sub.add_parser("scaling", help="runtime vs parallelism degree")
    _add_common(p_scale)
    p_scale.add_argument("--degrees", required=True, help="comma-separated worker counts, e.g. 1,2,4")

    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "price":
            _emit(run(config), config.out)
        elif args.command == "sweep":
            try:
                axes = json.loads(args.axes)
            except json.JSONDecodeError as exc:
                raise ConfigError("axes", f"invalid JSON: {exc}") from exc
            _emit(sweep(config, axes), config.out)
        else:
            degrees = [int(v) for v in args.degrees.split(",") if v]
            rows = scaling_report(config, degrees)
            writer = csv.DictWriter(sys.stdout, fieldnames=["degree", "runtime_ms", "speedup", "price", "std"],
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
            if config.out:
                with open(config.out, "w") as fh:
                    json.dump(rows, fh, indent=2)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except McmPricerError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: sweep experiments, validation, single solves.

Subcommands:
  sweep     grid of P_max or I_th values x scenario seeds x policies -> CSV
  validate  closed-form vs Monte-Carlo check on a small instance
  solve     one scenario, optimal allocation, metrics printed

Exit codes: 0 ok, 1 usage, 2 config, 3 numerical failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from . import mc
from .config import (ConfigError, SystemConfig, db_to_linear, dbm_to_watt,
                     parse_config)
from .estimation import compute_coefficients
from .metrics import metrics_report
from .optimizer import (NumericalError, equal_power_allocation,
                        maximize_energy_efficiency)
from .scenario import build_scenario

DEFAULT_PMAX_GRID_DBM = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
DEFAULT_ITH_GRID_DB = (-20.0, -15.0, -10.0, -5.0, -3.0, 0.0, 4.0)

SWEEP_CSV_HEADER = ("sweep,grid_value,seed,policy,EE_bit_per_J,sumSE_bps_Hz,"
                    "feasible,iters_outer,iters_inner")


@dataclass(frozen=True)
class SweepSpec:
    """One experiment: an axis kind, its grid, and how many seeds to average."""

    kind: str                 # "pmax" (grid in dBm) or "ith" (grid in dB over noise)
    grid: tuple
    trials: int
    policies: tuple
    config: SystemConfig
    jobs: int = 1
    trace: bool = False

    def __post_init__(self):
        if self.kind not in ("pmax", "ith"):
            raise ValueError(f"unknown sweep kind: {self.kind}")
        if not self.grid:
            raise ValueError("sweep grid must be nonempty")
        object.__setattr__(self, "grid", tuple(sorted(set(float(g) for g in self.grid))))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = set(self.policies) - {"optimal", "equal"}
        if bad or not self.policies:
            raise ValueError(f"unknown policies: {sorted(bad)}")


@dataclass(frozen=True)
class SweepRow:
    kind: str
    grid_value: float
    seed: int
    policy: str
    ee_bit_per_joule: float
    sum_se_bps_hz: float
    feasible: bool
    iters_outer: int
    iters_inner: int
    failed: bool = False

    def csv(self):
        return (f"{self.kind},{self.grid_value!r},{self.seed},{self.policy},"
                f"{self.ee_bit_per_joule!r},{self.sum_se_bps_hz!r},"
                f"{int(self.feasible)},{self.iters_outer},{self.iters_inner}")


def _grid_config(cfg: SystemConfig, kind, grid_value, seed) -> SystemConfig:
    if kind == "pmax":
        return replace(cfg, p_max_w=dbm_to_watt(grid_value), seed=seed)
    return replace(cfg, i_th_w=cfg.sigma2_w * db_to_linear(grid_value), seed=seed)


def _run_point(cfg: SystemConfig, kind, grid_value, seed, policies, trace):
    """All requested policies on one (grid value, seed) cell; scenario and
    coefficients are shared so policy comparisons are paired."""
    run_cfg = _grid_config(cfg, kind, grid_value, seed)
    scenario = build_scenario(run_cfg)
    coeffs = compute_coefficients(scenario)
    rows = []
    for policy in policies:
        if policy == "equal":
            report = metrics_report(equal_power_allocation(scenario, coeffs),
                                    coeffs, run_cfg)
            rows.append(SweepRow(kind, grid_value, seed, policy,
                                 report.ee_bit_per_joule,
                                 float(report.se.sum()), report.feasible, 0, 0))
            continue
        trace_fn = None
        if trace:
            trace_fn = lambda o, n, lam, f, ee: print(  # noqa: E731
                f"trace,{kind},{grid_value!r},{seed},{o},{n},{lam!r},{f!r},{ee!r}",
                file=sys.stderr)
        try:
            res = maximize_energy_efficiency(scenario, coeffs, trace=trace_fn)
        except NumericalError as exc:
            print(f"warning: optimizer failed at {kind}={grid_value} "
                  f"seed={seed}: {exc}", file=sys.stderr)
            rows.append(SweepRow(kind, grid_value, seed, policy, float("nan"),
                                 float("nan"), False, 0, 0, failed=True))
            continue
        rows.append(SweepRow(kind, grid_value, seed, policy,
                             res.report.ee_bit_per_joule,
                             float(res.report.se.sum()), res.report.feasible,
                             res.outer_iterations, res.inner_iterations))
    return rows


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    mean_ee: dict      # (policy, grid_value) -> mean EE over successful seeds
    failures: int


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Run the full grid; deterministic given the base config (seed included).

    Scenario seeds are config.seed + 0 .. trials-1; tasks fan out over
    workers but results are assembled in task order, so the output does not
    depend on the worker count.
    """
    tasks = [(g, spec.config.seed + i) for g in spec.grid for i in range(spec.trials)]
    chunks = Parallel(n_jobs=spec.jobs)(
        delayed(_run_point)(spec.config, spec.kind, g, s, spec.policies, spec.trace)
        for g, s in tasks)
    rows = tuple(row for chunk in chunks for row in chunk)
    mean_ee = {}
    for policy in spec.policies:
        for g in spec.grid:
            vals = [r.ee_bit_per_joule for r in rows
                    if r.policy == policy and r.grid_value == g and not r.failed]
            mean_ee[(policy, g)] = float(np.mean(vals)) if vals else float("nan")
    return SweepResult(rows, mean_ee, sum(r.failed for r in rows))


def emit_csv(rows, path):
    """Write sweep rows under the fixed header; UTF-8, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SWEEP_CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv() + "\n")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="underlay-ee",
                     description="Shared-spectrum downlink power allocation "
                                 "experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="grid sweep, CSV output")
    sweep.add_argument("--kind", choices=("pmax", "ith"), required=True)
    sweep.add_argument("--config", default=None, help="flat key=value file")
    sweep.add_argument("--out", required=True, help="output CSV path")
    sweep.add_argument("--trials", type=int, default=100,
                       help="scenario seeds per grid point")
    sweep.add_argument("--seed", type=int, default=None,
                       help="base seed (default: config seed)")
    sweep.add_argument("--policy", default="optimal,equal",
                       help="comma list from {optimal,equal}")
    sweep.add_argument("--grid", default=None,
                       help="comma list of grid values (dBm for pmax, dB over "
                            "noise for ith)")
    sweep.add_argument("--jobs", type=int, default=1,
                       help="parallel workers (-1 = all cores)")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable")
    sweep.add_argument("--trace", action="store_true",
                       help="stream optimizer iterations to stderr")

    val = sub.add_parser("validate", help="closed forms vs Monte-Carlo")
    val.add_argument("--trials", type=int, default=100000)
    val.add_argument("--seed", type=int, default=1)
    val.add_argument("--L", type=int, default=2)
    val.add_argument("--N", type=int, default=2)
    val.add_argument("--Ks", type=int, default=2)
    val.add_argument("--Kp", type=int, default=1)
    val.add_argument("--M", type=int, default=2)
    val.add_argument("--tol", type=float, default=0.02)
    val.add_argument("--out", default=None, help="also write rows as CSV")
    val.add_argument("--corrupt-coefficient", type=float, default=None,
                     help=argparse.SUPPRESS)

    solve = sub.add_parser("solve", help="optimize one instance")
    solve.add_argument("--config", default=None)
    solve.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    solve.add_argument("--trace", action="store_true")
    solve.add_argument("--dump-coeffs", default=None,
                       help="write coefficient tensors to CSV for debugging")
    return parser


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config, args.set)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.grid is not None:
        grid = tuple(float(v) for v in args.grid.split(","))
    else:
        grid = DEFAULT_PMAX_GRID_DBM if args.kind == "pmax" else DEFAULT_ITH_GRID_DB
    policies = tuple(p.strip() for p in args.policy.split(",") if p.strip())
    spec = SweepSpec(args.kind, grid, args.trials, policies, cfg,
                     jobs=args.jobs, trace=args.trace)
    result = run_sweep(spec)
    emit_csv(result.rows, args.out)
    if result.failures:
        print(f"{result.failures} optimizer runs failed (rows kept with nan)",
              file=sys.stderr)
    for (policy, g), ee in sorted(result.mean_ee.items()):
        print(f"mean EE [{policy}] {spec.kind}={g:g}: {ee:.6g} bit/J")
    return 0


def _cmd_validate(args) -> int:
    cfg = SystemConfig(L=args.L, N=args.N, K_s=args.Ks, K_p=args.Kp, M=args.M,
                       seed=args.seed)
    scenario = build_scenario(cfg)
    allocation = equal_power_allocation(scenario)
    rows = mc.validation_report(scenario, allocation, args.trials,
                                seed=args.seed, tol=args.tol,
                                corrupt=args.corrupt_coefficient)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(mc.VALIDATION_CSV_HEADER + "\n")
            for row in rows:
                fh.write(row.csv() + "\n")
    width = max(len(r.quantity) for r in rows)
    for r in rows:
        print(f"{r.quantity:<{width}}  closed={r.closed_form:<13.6g} "
              f"empirical={r.empirical:<13.6g} rel_err={r.rel_err:<10.3g} "
              f"{r.status}")
    failed = [r for r in rows if r.status == "fail"]
    inconclusive = [r for r in rows if r.status == "inconclusive"]
    if failed:
        print(f"validation FAILED: {', '.join(r.quantity for r in failed)}",
              file=sys.stderr)
        return 4
    if inconclusive:
        print(f"{len(inconclusive)} quantities inconclusive at {args.trials} "
              f"trials; increase --trials to resolve", file=sys.stderr)
    print(f"validation ok: {len(rows) - len(inconclusive)} quantities within "
          f"{args.tol:.2%}, {len(inconclusive)} inconclusive")
    return 0


def _dump_coefficients(coeffs, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("tensor,i,j,l,value\n")
        K, _, L = coeffs.mean_gain.shape
        for name, tensor in (("mean_gain", coeffs.mean_gain),
                             ("power_gain", coeffs.power_gain),
                             ("leakage", coeffs.leakage)):
            for i in range(tensor.shape[0]):
                for j in range(tensor.shape[1]):
                    for l in range(tensor.shape[2]):
                        fh.write(f"{name},{i},{j},{l},{tensor[i, j, l]!r}\n")
        for k in range(K):
            fh.write(f"primary_noise_w,{k},,,{coeffs.primary_noise_w[k]!r}\n")


def _cmd_solve(args) -> int:
    cfg = parse_config(args.config, args.set)
    scenario = build_scenario(cfg)
    coeffs = compute_coefficients(scenario)
    if args.dump_coeffs:
        _dump_coefficients(coeffs, args.dump_coeffs)
    trace_fn = None
    if args.trace:
        print("outer_iter,inner_iter,lambda,F_lambda,EE_lb", file=sys.stderr)
        trace_fn = lambda o, n, lam, f, ee: print(  # noqa: E731
            f"{o},{n},{lam!r},{f!r},{ee!r}", file=sys.stderr)
    result = maximize_energy_efficiency(scenario, coeffs, trace=trace_fn)
    rep = result.report
    print(f"termination: {result.termination} "
          f"({result.outer_iterations} outer / {result.inner_iterations} inner)")
    print(f"EE: {rep.ee_bit_per_joule:.6g} bit/J")
    print(f"sum SE: {float(rep.se.sum()):.6g} bit/s/Hz")
    print(f"throughput: {rep.sum_throughput_bps:.6g} bit/s")
    print(f"power (full/reduced): {rep.power_w:.6g} / {rep.power_reduced_w:.6g} W")
    print(f"feasible: {rep.feasible}")
    for k, (g, se) in enumerate(zip(rep.gamma, rep.se)):
        print(f"user {k}: SINR={g:.6g} SE={se:.6g} bit/s/Hz")
    for l, pw in enumerate(rep.per_ap_power_w):
        print(f"AP {l}: power={pw:.6g} W (cap {cfg.p_max_w:.6g})")
    for m, iw in enumerate(rep.per_pue_interference_w):
        print(f"primary user {m}: interference={iw:.6g} W (cap {cfg.i_th_w:.6g})")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_solve(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()

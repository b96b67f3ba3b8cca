"""Command-line front end for the experiment drivers.

A single JSON config document (schema 1) can set any ExperimentConfig field;
CLI flags override the file. Exit code is 0 iff every solve converged,
otherwise a machine-readable error summary goes to stderr and the exit code
is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import RobustLqgError
from .experiments import ExperimentConfig, run_experiment
from .frank_wolfe import FwConfig

_EXPERIMENTS = {
    "solve": "single_solve",
    "gaps": "gaps",
    "convergence": "convergence",
    "runtime": "runtime",
    "stationary": "stationary",
}


def _add_common(sub: argparse.ArgumentParser, mandatory: bool = False) -> None:
    req = mandatory
    sub.add_argument("--config", help="JSON config file (schema 1); flags override it")
    sub.add_argument("--seed", type=int, action="append", dest="seeds", required=req,
                     help="seed (repeatable)")
    sub.add_argument("--rho", type=float, action="append", dest="rhos", required=req,
                     help="ambiguity radius (repeatable for grids)")
    sub.add_argument("--horizon", type=int, dest="T", required=req)
    sub.add_argument("--dim", type=int, dest="d", required=req)
    sub.add_argument("--divergence", choices=["wasserstein2", "kl", "fisher", "entropic_ot"],
                     required=req)
    sub.add_argument("--out", dest="output_dir", required=req)
    sub.add_argument("--eps", type=float, help="entropic-OT regularization")
    sub.add_argument("--jobs", type=int, help="parallel grid points")
    sub.add_argument("--max-iters", type=int)
    sub.add_argument("--gap-tol", type=float)
    sub.add_argument("--oracle-delta", type=float)
    sub.add_argument("--step-rule", choices=["vanishing", "line_search"])
    sub.add_argument("--parallel-oracles", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustlqg",
                                     description="Distributionally robust LQG experiments")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in _EXPERIMENTS:
        sub = subs.add_parser(name)
        _add_common(sub, mandatory=(name == "solve"))
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        schema = raw.pop("schema", 1)
        if schema != 1:
            raise RobustLqgError(f"unsupported config schema {schema}")
    raw["experiment"] = _EXPERIMENTS[args.command]
    if args.seeds is not None:
        raw["seeds"] = args.seeds
    if args.rhos is not None:
        raw["rho"] = args.rhos if len(args.rhos) > 1 else args.rhos[0]
    for attr, key in (("T", "T"), ("d", "d"), ("divergence", "divergence"),
                      ("output_dir", "output_dir"), ("eps", "eps"), ("jobs", "jobs")):
        val = getattr(args, attr, None)
        if val is not None:
            raw[key] = val
    fw_raw = dict(raw.pop("fw", {}))
    for attr, key in (("max_iters", "max_iters"), ("gap_tol", "gap_tol"),
                      ("oracle_delta", "oracle_delta"), ("step_rule", "step_rule"),
                      ("parallel_oracles", "parallel_oracles")):
        val = getattr(args, attr, None)
        if val is not None:
            fw_raw[key] = val
    raw["fw"] = FwConfig(**fw_raw)
    return ExperimentConfig(**raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        result = run_experiment(cfg)
    except RobustLqgError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    if not result.get("all_converged", True):
        json.dump({"error": "NotConverged",
                   "message": "one or more solves did not reach the gap tolerance"},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

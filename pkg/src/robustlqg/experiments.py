"""Experiment drivers: single solves, convergence traces, runtime sweeps,
and worst-case/nominal performance gaps, all emitting schema-stable CSVs.

Every run directory receives a metadata JSON carrying the seed(s), a hash of
the effective configuration, the library version, the RNG algorithm, and
wall time. Files are written atomically (temp file + rename). No plots are
produced; the CSVs are meant to be consumed by external plotting.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .divergences import DivergenceKind
from .errors import InvalidInputError
from .frank_wolfe import FwConfig, solve
from .instances import RNG_ALGORITHM, generate_instance
from .lqg import CovarianceProfile, lqg_value
from .oracles import solve_oracle
from .stacked import (
    build_stacked,
    kalman_policy_to_purified,
    moment_blocks,
    policy_quadratic_forms,
    stack_moments,
)

GAPS_HEADER = ["rho", "seed", "worst_case_gap", "nominal_gap"]
RUNTIME_HEADER = ["T", "seed", "wall_seconds", "iterations"]
CONVERGENCE_HEADER = ["T", "seed", "iterations", "converged", "final_gap", "wall_seconds"]


@dataclass
class ExperimentConfig:
    experiment: str = "single_solve"  # convergence | runtime | gaps | stationary | single_solve
    d: int = 10
    T: int = 10
    divergence: str = "wasserstein2"
    rho: float | list = 0.1
    eps: float = 0.0
    seeds: list = field(default_factory=lambda: list(range(10)))
    output_dir: str = "runs"
    jobs: int = 1
    runtime_horizons: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    fw: FwConfig = field(default_factory=FwConfig)

    def __post_init__(self):
        if self.d < 1 or self.T < 1:
            raise InvalidInputError("d and T must be >= 1")
        rhos = self.rho if isinstance(self.rho, list) else [self.rho]
        if any(r < 0 for r in rhos):
            raise InvalidInputError("rho entries must be nonnegative")

    @property
    def kind(self) -> DivergenceKind:
        return DivergenceKind(self.divergence)

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["schema"] = 1
        return out


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_metadata(cfg: ExperimentConfig, outdir: Path, wall_seconds: float, extra=None) -> None:
    meta = {
        "schema": 1,
        "experiment": cfg.experiment,
        "seeds": list(cfg.seeds),
        "config_hash": config_hash(cfg),
        "library_version": __version__,
        "rng": RNG_ALGORITHM,
        "wall_seconds": wall_seconds,
    }
    if extra:
        meta.update(extra)
    atomic_write_text(outdir / "metadata.json", json.dumps(meta, indent=2) + "\n")


def _trace_csv_text(trace) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "objective", "fw_gap", "step", "wall_ms"])
    for r in trace.records:
        writer.writerow([r.iter, repr(r.objective), repr(r.fw_gap), repr(r.step_size), repr(r.wall_ms)])
    return buf.getvalue()


def run_single_solve(cfg: ExperimentConfig) -> dict:
    """One FW solve per seed; trace CSVs plus a JSON result summary."""
    outdir = Path(cfg.output_dir)
    t_start = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        sys, model = generate_instance(
            cfg.d, cfg.T, seed, cfg.kind, _scalar_rho(cfg.rho), cfg.eps
        )
        worst, trace = solve(sys, model.ball_profile(), cfg=cfg.fw)
        atomic_write_text(outdir / f"trace_seed{seed}.csv", _trace_csv_text(trace))
        results.append(
            {
                "seed": seed,
                "converged": trace.converged,
                "iterations": len(trace.records),
                "objective": trace.records[-1].objective,
                "final_gap": trace.records[-1].fw_gap,
            }
        )
    summary = {"runs": results, "all_converged": all(r["converged"] for r in results)}
    atomic_write_text(outdir / "solve_summary.json", json.dumps(summary, indent=2) + "\n")
    write_metadata(cfg, outdir, time.perf_counter() - t_start)
    return summary


def _scalar_rho(rho) -> float:
    if isinstance(rho, list):
        raise InvalidInputError("this experiment expects a single rho")
    return float(rho)


def run_convergence(cfg: ExperimentConfig) -> dict:
    """FW trace per seed at the configured horizon, plus a summary CSV."""
    outdir = Path(cfg.output_dir)
    t_start = time.perf_counter()
    rows = []
    all_converged = True
    for seed in cfg.seeds:
        sys, model = generate_instance(
            cfg.d, cfg.T, seed, cfg.kind, _scalar_rho(cfg.rho), cfg.eps
        )
        t0 = time.perf_counter()
        _, trace = solve(sys, model.ball_profile(), cfg=cfg.fw)
        wall = time.perf_counter() - t0
        atomic_write_text(
            outdir / f"convergence_T{cfg.T}_seed{seed}.csv", _trace_csv_text(trace)
        )
        rows.append(
            [cfg.T, seed, len(trace.records), int(trace.converged),
             repr(trace.records[-1].fw_gap), repr(wall)]
        )
        all_converged &= trace.converged
    write_csv(outdir / "convergence_summary.csv", CONVERGENCE_HEADER, rows)
    write_metadata(cfg, outdir, time.perf_counter() - t_start)
    return {"all_converged": all_converged, "rows": rows}


def run_runtime(cfg: ExperimentConfig) -> dict:
    """Wall-clock per solve over a horizon sweep. The SDP baseline column is
    intentionally absent: no SDP solver ships with this package."""
    outdir = Path(cfg.output_dir)
    t_start = time.perf_counter()

    def one(args):
        T, seed = args
        sys, model = generate_instance(cfg.d, T, seed, cfg.kind, _scalar_rho(cfg.rho), cfg.eps)
        t0 = time.perf_counter()
        _, trace = solve(sys, model.ball_profile(), cfg=cfg.fw)
        return [T, seed, time.perf_counter() - t0, len(trace.records), trace.converged]

    points = [(T, seed) for T in cfg.runtime_horizons for seed in cfg.seeds]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            raw = list(pool.map(one, points))
    else:
        raw = [one(pt) for pt in points]
    rows = [[T, seed, repr(w), iters] for T, seed, w, iters, _ in raw]
    write_csv(outdir / "runtime.csv", RUNTIME_HEADER, rows)
    write_metadata(cfg, outdir, time.perf_counter() - t_start)
    return {"all_converged": all(c for *_, c in raw), "rows": rows}


def policy_worst_case_cost(ss, U, balls, delta: float = 0.95):
    """Worst-case expected cost of a fixed linear purified policy.

    The cost is linear in the noise moments for fixed U, so the worst case
    over the product ball is a single oracle pass per noise term. Returns
    (cost, per-block worst covariances).
    """
    ups_w, ups_v = policy_quadratic_forms(ss, U)
    blocks_w = moment_blocks(ups_w, ss.n)
    blocks_v = moment_blocks(ups_v, ss.p)
    ball_list = balls.blocks()
    grads = blocks_w + blocks_v
    total = 0.0
    worst_blocks = []
    for z, ball in enumerate(ball_list):
        floor = float(np.linalg.eigvalsh(ball.nominal.cov).min()) if z > balls.T else 0.0
        res = solve_oracle(ball, grads[z], ball.nominal.cov, floor, delta)
        total += float(np.sum(grads[z] * res.sigma_star))
        worst_blocks.append(res.sigma_star)
    return total, worst_blocks


def policy_nominal_cost(ss, U, cov: CovarianceProfile) -> float:
    """Expected cost of a fixed linear purified policy at given covariances."""
    ups_w, ups_v = policy_quadratic_forms(ss, U)
    _, M_w, _, M_v = stack_moments(cov, ss.n, ss.p)
    return float(np.sum(ups_w * M_w) + np.sum(ups_v * M_v))


def run_gaps(cfg: ExperimentConfig) -> dict:
    """Worst-case and nominal performance gaps over a radius grid.

    For each (rho, seed): the nominally optimal policy comes from the LQG
    solution at the nominal covariances, the robust policy from the FW
    worst case; each policy's worst-case cost needs one oracle pass per
    noise term because the fixed-policy objective is linear in moments.
    """
    outdir = Path(cfg.output_dir)
    t_start = time.perf_counter()
    rhos = cfg.rho if isinstance(cfg.rho, list) else [cfg.rho]
    rows = []
    all_converged = True

    def one(args):
        rho, seed = args
        sys, model = generate_instance(cfg.d, cfg.T, seed, cfg.kind, float(rho), cfg.eps)
        balls = model.ball_profile()
        nominal_cov = model.nominal_profile()
        ss = build_stacked(sys)
        U_nom = kalman_policy_to_purified(sys, nominal_cov).U
        worst_profile, trace = solve(sys, balls, cfg=cfg.fw)
        U_rob = kalman_policy_to_purified(sys, worst_profile).U
        wc_nom, _ = policy_worst_case_cost(ss, U_nom, balls, cfg.fw.oracle_delta)
        wc_rob, _ = policy_worst_case_cost(ss, U_rob, balls, cfg.fw.oracle_delta)
        nom_nom = policy_nominal_cost(ss, U_nom, nominal_cov)
        nom_rob = policy_nominal_cost(ss, U_rob, nominal_cov)
        return [float(rho), seed, wc_nom - wc_rob, nom_rob - nom_nom], trace.converged

    points = [(rho, seed) for rho in rhos for seed in cfg.seeds]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            raw = list(pool.map(one, points))
    else:
        raw = [one(pt) for pt in points]
    for row, conv in raw:
        rows.append([row[0], row[1], repr(row[2]), repr(row[3])])
        all_converged &= conv
    write_csv(outdir / "gaps.csv", GAPS_HEADER, rows)
    write_metadata(cfg, outdir, time.perf_counter() - t_start)
    return {"all_converged": all_converged, "rows": rows}


def run_stationary(cfg: ExperimentConfig) -> dict:
    """Stationary FW on the benchmark dynamics with time-invariant noise."""
    from .divergences import AmbiguityBall, MomentPair
    from .instances import instance_rng, random_covariance
    from .stationary import StationarySystem, solve_stationary_fw, stationary_cost

    outdir = Path(cfg.output_dir)
    t_start = time.perf_counter()
    results = []
    all_converged = True
    for seed in cfg.seeds:
        rng = instance_rng(seed)
        d = cfg.d
        A = 0.1 * np.eye(d)
        if d > 1:
            A += 0.1 * np.diag(np.ones(d - 1), 1)
        ss = StationarySystem(A=A, B=np.eye(d), C=np.eye(d), Q=np.eye(d), R=np.eye(d))
        Sw = random_covariance(d, rng)
        Sv = random_covariance(d, rng)
        rho = _scalar_rho(cfg.rho)
        ball_w = AmbiguityBall(kind=cfg.kind, nominal=MomentPair.zero_mean(Sw), radius=rho, eps=cfg.eps)
        ball_v = AmbiguityBall(kind=cfg.kind, nominal=MomentPair.zero_mean(Sv), radius=rho, eps=cfg.eps)
        Sw_star, Sv_star, trace = solve_stationary_fw(ss, ball_w, ball_v, cfg.fw)
        cost, _ = stationary_cost(ss, Sw_star, Sv_star)
        atomic_write_text(outdir / f"stationary_seed{seed}.csv", _trace_csv_text(trace))
        results.append({"seed": seed, "converged": trace.converged, "worst_cost": cost})
        all_converged &= trace.converged
    atomic_write_text(outdir / "stationary_summary.json", json.dumps(results, indent=2) + "\n")
    write_metadata(cfg, outdir, time.perf_counter() - t_start)
    return {"all_converged": all_converged, "results": results}


RUNNERS = {
    "single_solve": run_single_solve,
    "convergence": run_convergence,
    "runtime": run_runtime,
    "gaps": run_gaps,
    "stationary": run_stationary,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    try:
        runner = RUNNERS[cfg.experiment]
    except KeyError:
        raise InvalidInputError(f"unknown experiment '{cfg.experiment}'") from None
    return runner(cfg)

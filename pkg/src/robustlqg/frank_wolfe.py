"""Outer Frank-Wolfe loop maximizing the concave LQG value over ambiguity balls.

Each iteration evaluates the exact gradient of the LQG value in every
covariance block, solves the 2T+1 separable linearization oracles (optionally
in parallel; results are merged by block index so runs are reproducible
either way), and takes a convex-combination step toward the oracle targets.
The surrogate gap sum_z <grad_z, Sigma_z* - Sigma_z> certifies
epsilon-suboptimality for the concave objective and drives the stopping rule.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .divergences import AmbiguityBall, DivergenceKind, MomentPair, membership
from .errors import InvalidInputError
from .gradient import lqg_gradient
from .lqg import CovarianceProfile, SystemInstance
from .oracles import solve_oracle


@dataclass(frozen=True)
class FwConfig:
    max_iters: int = 500
    gap_tol: float = 1e-3
    oracle_delta: float = 0.95
    step_rule: str = "vanishing"  # or "line_search"
    parallel_oracles: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.gap_tol <= 0.0:
            raise InvalidInputError("gap_tol must be positive")
        if not 0.0 < self.oracle_delta < 1.0:
            raise InvalidInputError("oracle_delta must lie in (0, 1)")
        if self.step_rule not in ("vanishing", "line_search"):
            raise InvalidInputError(f"unknown step rule '{self.step_rule}'")


@dataclass(frozen=True)
class FwRecord:
    iter: int
    objective: float
    fw_gap: float
    step_size: float
    wall_ms: float
    rel_gap: float  # gap / max(|objective|, 1); kept in the record, not the CSV


@dataclass
class FwTrace:
    records: list[FwRecord] = field(default_factory=list)
    final: Optional[CovarianceProfile] = None
    converged: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "objective", "fw_gap", "step", "wall_ms"])
            for r in self.records:
                writer.writerow(
                    [r.iter, repr(r.objective), repr(r.fw_gap), repr(r.step_size), repr(r.wall_ms)]
                )


@dataclass(frozen=True)
class BallProfile:
    """One ambiguity ball per noise term, ordered [x0, w_0.., v_0..]."""

    x0: AmbiguityBall
    w: tuple[AmbiguityBall, ...]
    v: tuple[AmbiguityBall, ...]

    @property
    def T(self) -> int:
        return len(self.w)

    def blocks(self) -> list[AmbiguityBall]:
        return [self.x0] + list(self.w) + list(self.v)

    def nominal_profile(self) -> CovarianceProfile:
        return CovarianceProfile(
            X0=self.x0.nominal.cov,
            W=np.stack([b.nominal.cov for b in self.w]),
            V=np.stack([b.nominal.cov for b in self.v]),
        )


@dataclass(frozen=True)
class NominalModel:
    """Zero-mean nominal noise model plus ambiguity radii for each noise term."""

    kind: DivergenceKind
    X0: np.ndarray
    W: np.ndarray  # (T, n, n)
    V: np.ndarray  # (T, p, p)
    rho_x0: float
    rho_w: np.ndarray  # (T,)
    rho_v: np.ndarray  # (T,)
    eps: float = 0.0

    @classmethod
    def uniform(cls, kind: DivergenceKind, cov: CovarianceProfile, rho: float, eps: float = 0.0):
        T = cov.T
        return cls(
            kind=kind, X0=cov.X0, W=cov.W, V=cov.V,
            rho_x0=rho, rho_w=np.full(T, float(rho)), rho_v=np.full(T, float(rho)), eps=eps,
        )

    def nominal_profile(self) -> CovarianceProfile:
        return CovarianceProfile(X0=self.X0, W=self.W, V=self.V)

    def ball_profile(self) -> BallProfile:
        def ball(cov, rho):
            return AmbiguityBall(
                kind=self.kind, nominal=MomentPair.zero_mean(cov),
                radius=float(rho), eps=self.eps,
            )

        return BallProfile(
            x0=ball(self.X0, self.rho_x0),
            w=tuple(ball(self.W[t], self.rho_w[t]) for t in range(self.W.shape[0])),
            v=tuple(ball(self.V[t], self.rho_v[t]) for t in range(self.V.shape[0])),
        )


def _lam_floors(balls: BallProfile) -> list[float]:
    """Observation-noise blocks keep their nominal minimum eigenvalue as floor."""
    floors = [0.0] * (1 + balls.T)
    for b in balls.v:
        floors.append(float(np.linalg.eigvalsh(b.nominal.cov).min()))
    return floors


def _oracle_targets(
    balls: BallProfile,
    grad_blocks: Sequence[np.ndarray],
    cur_blocks: Sequence[np.ndarray],
    floors: Sequence[float],
    delta: float,
    parallel: bool,
):
    ball_list = balls.blocks()

    def run(z):
        return solve_oracle(ball_list[z], grad_blocks[z], cur_blocks[z], floors[z], delta)

    indices = range(len(ball_list))
    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(ball_list))) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(z) for z in indices]
    return results


def fw_gap(
    sys: SystemInstance,
    balls: BallProfile,
    current: CovarianceProfile,
    delta: float = 0.95,
    parallel: bool = False,
) -> tuple[float, CovarianceProfile]:
    """Surrogate duality gap and oracle targets at the current profile.

    gap = sum_z <grad_z f, Sigma_z* - Sigma_z>; for concave f this upper
    bounds f* - f(current) (up to the oracle delta factor).
    """
    value, grad = lqg_gradient(sys, current)
    gap, targets, _ = _gap_and_targets(sys, balls, current, grad, delta, parallel)
    return gap, targets


def _gap_and_targets(sys, balls, current, grad, delta, parallel):
    grad_blocks = grad.blocks()
    cur_blocks = current.blocks()
    floors = _lam_floors(balls)
    results = _oracle_targets(balls, grad_blocks, cur_blocks, floors, delta, parallel)
    gap = 0.0
    target_blocks = []
    for z, res in enumerate(results):
        gap += float(np.sum(grad_blocks[z] * (res.sigma_star - cur_blocks[z])))
        target_blocks.append(res.sigma_star)
    targets = CovarianceProfile.from_blocks(target_blocks, sys.T)
    return gap, targets, results


def _step_blocks(current: CovarianceProfile, targets: CovarianceProfile, alpha: float, T: int):
    blocks = [
        (1.0 - alpha) * c + alpha * t
        for c, t in zip(current.blocks(), targets.blocks())
    ]
    return CovarianceProfile.from_blocks(blocks, T)


def solve(
    sys: SystemInstance,
    balls: BallProfile,
    init: Optional[CovarianceProfile] = None,
    cfg: FwConfig = FwConfig(),
) -> tuple[CovarianceProfile, FwTrace]:
    """Run Frank-Wolfe; returns (worst-case profile, trace).

    init defaults to the nominal covariances, which are feasible in every
    ball. Iterates move as (1 - alpha) * current + alpha * targets with
    alpha = 2/(2+k) (or a backtracking line search when configured); the
    loop stops when the surrogate gap falls below cfg.gap_tol or the
    iteration budget is exhausted.
    """
    current = balls.nominal_profile() if init is None else init
    if current.T != sys.T:
        raise InvalidInputError("initial profile horizon mismatch")
    for ball, block in zip(balls.blocks(), current.blocks()):
        if not membership(ball, MomentPair.zero_mean(block), 1e-8):
            raise InvalidInputError("initial profile is infeasible in an ambiguity ball")

    trace = FwTrace()
    converged = False
    for k in range(cfg.max_iters):
        t0 = time.perf_counter()
        value, grad = lqg_gradient(sys, current)
        gap, targets, _ = _gap_and_targets(
            sys, balls, current, grad, cfg.oracle_delta, cfg.parallel_oracles
        )
        if gap <= cfg.gap_tol:
            wall = (time.perf_counter() - t0) * 1e3
            trace.records.append(
                FwRecord(k, value, gap, 0.0, wall, gap / max(abs(value), 1.0))
            )
            converged = True
            break
        alpha = 2.0 / (2.0 + k)
        if cfg.step_rule == "line_search":
            alpha = _backtrack(sys, current, targets, value, gap, alpha)
        current = _step_blocks(current, targets, alpha, sys.T)
        wall = (time.perf_counter() - t0) * 1e3
        trace.records.append(
            FwRecord(k, value, gap, alpha, wall, gap / max(abs(value), 1.0))
        )
    trace.final = current
    trace.converged = converged
    return current, trace


def _backtrack(sys, current, targets, value, gap, alpha_min, shrink=0.5, armijo=0.1):
    """Backtracking line search exploiting concavity; falls back to 2/(2+k)."""
    from .lqg import lqg_value

    alpha = 1.0
    while alpha > alpha_min:
        cand = _step_blocks(current, targets, alpha, sys.T)
        if lqg_value(sys, cand).cost >= value + armijo * alpha * gap:
            return alpha
        alpha *= shrink
    return alpha_min

"""Finite-horizon LQG evaluation: Riccati sweep, Kalman filter, optimal cost.

For a linear system x_{t+1} = A_t x_t + B_t u_t + w_t observed through
y_t = C_t x_t + v_t with zero-mean Gaussian noise, this module computes the
optimal feedback gains (backward Riccati recursion), the filter covariances
and gains (forward Kalman recursion), the optimal expected cost, and a
Monte-Carlo closed-loop simulator used as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, InvalidInputError
from .matops import sym_sqrt, symmetrize

_PD_TOL = 1e-10


@dataclass(frozen=True)
class SystemInstance:
    """Time-varying system and cost matrices over a horizon T.

    A, B, C cover t = 0..T-1; Q covers t = 0..T (Q[T] is the terminal cost);
    R covers t = 0..T-1. Q_t must be psd and R_t positive definite.
    """

    T: int
    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, n, m)
    C: np.ndarray  # (T, p, n)
    Q: np.ndarray  # (T+1, n, n)
    R: np.ndarray  # (T, m, m)

    def __post_init__(self):
        T = self.T
        if T < 1:
            raise InvalidInputError("horizon T must be >= 1")
        for name, arr, steps in (
            ("A", self.A, T), ("B", self.B, T), ("C", self.C, T),
            ("Q", self.Q, T + 1), ("R", self.R, T),
        ):
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 3 or arr.shape[0] != steps:
                raise InvalidInputError(f"{name} must have shape ({steps}, ., .)")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        n, m, p = self.n, self.m, self.p
        if self.A.shape[1:] != (n, n) or self.B.shape[1:] != (n, m):
            raise InvalidInputError("A/B dimensions inconsistent")
        if self.C.shape[1:] != (p, n):
            raise InvalidInputError("C dimensions inconsistent")
        if self.Q.shape[1:] != (n, n) or self.R.shape[1:] != (m, m):
            raise InvalidInputError("Q/R dimensions inconsistent")
        for t in range(T + 1):
            if np.linalg.eigvalsh(symmetrize(self.Q[t])).min() < -_PD_TOL:
                raise InvalidInputError(f"Q[{t}] is not psd")
        for t in range(T):
            if np.linalg.eigvalsh(symmetrize(self.R[t])).min() < _PD_TOL:
                raise InvalidInputError(f"R[{t}] is not positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @classmethod
    def time_invariant(cls, A, B, C, Q, R, T: int, Qf=None) -> "SystemInstance":
        """Replicate constant matrices over the horizon (Qf defaults to Q)."""
        A, B, C, Q, R = (np.asarray(M, dtype=float) for M in (A, B, C, Q, R))
        Qf = Q if Qf is None else np.asarray(Qf, dtype=float)
        return cls(
            T=T,
            A=np.repeat(A[None], T, axis=0),
            B=np.repeat(B[None], T, axis=0),
            C=np.repeat(C[None], T, axis=0),
            Q=np.concatenate([np.repeat(Q[None], T, axis=0), Qf[None]], axis=0),
            R=np.repeat(R[None], T, axis=0),
        )


@dataclass(frozen=True)
class CovarianceProfile:
    """The adversary's decision variable: one covariance per noise term.

    X0 is the initial-state covariance, W[t] the process-noise covariance and
    V[t] the observation-noise covariance for t = 0..T-1. Kalman filtering
    requires every V[t] to be positive definite; simulation does not.
    """

    X0: np.ndarray
    W: np.ndarray  # (T, n, n)
    V: np.ndarray  # (T, p, p)

    def __post_init__(self):
        object.__setattr__(self, "X0", symmetrize(np.asarray(self.X0, dtype=float)))
        for name in ("W", "V"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 3:
                raise InvalidInputError(f"{name} must be a (T, d, d) array")
            arr = 0.5 * (arr + np.transpose(arr, (0, 2, 1)))
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.W.shape[0]

    def blocks(self) -> list[np.ndarray]:
        """Flatten to the per-noise-term order [X0, W_0..W_{T-1}, V_0..V_{T-1}]."""
        return [self.X0] + list(self.W) + list(self.V)

    @classmethod
    def from_blocks(cls, blocks, T: int) -> "CovarianceProfile":
        return cls(
            X0=blocks[0],
            W=np.stack(blocks[1 : T + 1]),
            V=np.stack(blocks[T + 1 : 2 * T + 1]),
        )


@dataclass(frozen=True)
class LqgSolution:
    """Riccati matrices, gains, filter covariances, and the optimal cost.

    P has T+1 entries with P[T] = Q_T. Sigma_pred has T+1 entries where
    Sigma_pred[t] is the covariance of x_t given y_0..y_{t-1}
    (Sigma_pred[0] = X0); Sigma_filt[t] conditions on y_0..y_t.
    """

    P: np.ndarray
    K: np.ndarray
    Sigma_filt: np.ndarray
    Sigma_pred: np.ndarray
    L: np.ndarray
    cost: float


def riccati_backward(sys: SystemInstance) -> tuple[np.ndarray, np.ndarray]:
    """Backward Riccati sweep; returns (P[0..T], K[0..T-1]).

    P_T = Q_T and
    P_t = A_t^T P_{t+1} A_t + Q_t
          - A_t^T P_{t+1} B_t (R_t + B_t^T P_{t+1} B_t)^{-1} B_t^T P_{t+1} A_t,
    K_t = -(R_t + B_t^T P_{t+1} B_t)^{-1} B_t^T P_{t+1} A_t.

    K is independent of the noise covariances.
    """
    T, n, m = sys.T, sys.n, sys.m
    P = np.empty((T + 1, n, n))
    K = np.empty((T, m, n))
    P[T] = symmetrize(sys.Q[T])
    for t in range(T - 1, -1, -1):
        A, B = sys.A[t], sys.B[t]
        PB = P[t + 1] @ B
        gain_sys = sys.R[t] + B.T @ PB
        BtPA = PB.T @ A
        K[t] = -np.linalg.solve(gain_sys, BtPA)
        P[t] = symmetrize(A.T @ P[t + 1] @ A + sys.Q[t] + BtPA.T @ K[t])
    return P, K


def _chol_pd(M: np.ndarray, what: str):
    """Cholesky with an explicit positive-pivot threshold."""
    M = symmetrize(M)
    try:
        chol = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} is not positive definite") from exc
    if np.diag(chol).min() < np.sqrt(_PD_TOL):
        raise ConditioningError(f"{what} is numerically singular (pivot < 1e-10)")
    return chol


def _pd_solve(M: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    chol = _chol_pd(M, what)
    y = np.linalg.solve(chol, B)
    return np.linalg.solve(chol.T, y)


def kalman_forward(
    sys: SystemInstance, cov: CovarianceProfile
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward Kalman covariance recursion; returns (Sigma_filt, Sigma_pred, L).

    Sigma_pred[0] = X0 and for t = 0..T-1:
      Sigma_filt[t] = S_t - S_t C_t^T (C_t S_t C_t^T + V_t)^{-1} C_t S_t,
      Sigma_pred[t+1] = A_t Sigma_filt[t] A_t^T + W_t,
    with S_t = Sigma_pred[t]. The filter gain is L_t = Sigma_filt[t] C_t^T V_t^{-1}.

    Raises ConditioningError naming the offending t when V_t (or the innovation
    covariance) is numerically singular.
    """
    T, n, p = sys.T, sys.n, sys.p
    if cov.T != T or cov.X0.shape != (n, n) or cov.V.shape[1:] != (p, p):
        raise InvalidInputError("covariance profile inconsistent with system dims")
    filt = np.empty((T, n, n))
    pred = np.empty((T + 1, n, n))
    L = np.empty((T, n, p))
    pred[0] = symmetrize(cov.X0)
    for t in range(T):
        Ct, Vt = sys.C[t], cov.V[t]
        S = pred[t]
        SCt = S @ Ct.T
        innov = Ct @ SCt + Vt
        gain = _pd_solve(innov, SCt.T, f"innovation covariance at t={t}").T
        filt[t] = symmetrize(S - gain @ SCt.T)
        # the innovation update is used as printed; when rounding pushes it
        # off the psd cone, restabilize with the (equivalent) Joseph form
        lam_min = np.linalg.eigvalsh(filt[t]).min()
        if lam_min < 0.0:
            if lam_min < -1e-8 * (1.0 + np.linalg.norm(S)):
                raise ConditioningError(f"filter covariance lost psd at t={t}")
            closed = np.eye(n) - gain @ Ct
            filt[t] = symmetrize(closed @ S @ closed.T + gain @ Vt @ gain.T)
        L[t] = _pd_solve(Vt, (filt[t] @ Ct.T).T, f"V[{t}]").T
        pred[t + 1] = symmetrize(sys.A[t] @ filt[t] @ sys.A[t].T + cov.W[t])
    return filt, pred, L


def lqg_value(sys: SystemInstance, cov: CovarianceProfile) -> LqgSolution:
    """Optimal LQG cost and all solution matrices for the given noise profile.

    cost = sum_t Tr((Q_t - P_t) Sigma_filt[t])
         + sum_{t=1..T} Tr(P_t Sigma_pred[t]) + Tr(P_0 X0).
    """
    P, K = riccati_backward(sys)
    filt, pred, L = kalman_forward(sys, cov)
    cost = float(np.trace(P[0] @ pred[0]))
    for t in range(sys.T):
        cost += float(np.trace((sys.Q[t] - P[t]) @ filt[t]))
        cost += float(np.trace(P[t + 1] @ pred[t + 1]))
    return LqgSolution(P=P, K=K, Sigma_filt=filt, Sigma_pred=pred, L=L, cost=cost)


def _noise_sqrts(cov: CovarianceProfile):
    sq_X0 = sym_sqrt(cov.X0)
    sq_W = [sym_sqrt(Wt) for Wt in cov.W]
    sq_V = [sym_sqrt(Vt) for Vt in cov.V]
    return sq_X0, sq_W, sq_V


def simulate_closed_loop(
    sys: SystemInstance,
    cov: CovarianceProfile,
    gains: LqgSolution,
    num_samples: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the closed-loop cost under u_t = K_t xhat_t.

    The estimate is deterministic given the seed. The state estimate follows
    the zero-mean MMSE recursion
      xhat_0 = L_0 y_0,
      xhat_{t+1} = Abar_t xhat_t + L_{t+1}(y_{t+1} - C_{t+1} Abar_t xhat_t),
    with Abar_t = A_t + B_t K_t. Covariances only need to be psd here.

    Returns:
        (mean_cost, std_error) over num_samples independent rollouts.
    """
    T, n = sys.T, sys.n
    if gains.K.shape != (T, sys.m, n):
        raise InvalidInputError("gains inconsistent with system dims")
    rng = np.random.default_rng(seed)
    sq_X0, sq_W, sq_V = _noise_sqrts(cov)
    N = int(num_samples)
    x = rng.standard_normal((N, n)) @ sq_X0.T
    costs = np.zeros(N)
    xhat_pred = np.zeros((N, n))
    for t in range(T):
        v = rng.standard_normal((N, sys.p)) @ sq_V[t].T
        y = x @ sys.C[t].T + v
        if t == 0:
            xhat = y @ gains.L[0].T
        else:
            xhat = xhat_pred + (y - xhat_pred @ sys.C[t].T) @ gains.L[t].T
        u = xhat @ gains.K[t].T
        costs += np.einsum("ij,jk,ik->i", x, sys.Q[t], x)
        costs += np.einsum("ij,jk,ik->i", u, sys.R[t], u)
        w = rng.standard_normal((N, n)) @ sq_W[t].T
        x = x @ sys.A[t].T + u @ sys.B[t].T + w
        xhat_pred = xhat @ (sys.A[t] + sys.B[t] @ gains.K[t]).T
    costs += np.einsum("ij,jk,ik->i", x, sys.Q[T], x)
    mean = float(costs.mean())
    stderr = float(costs.std(ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return mean, stderr

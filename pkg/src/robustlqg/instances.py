"""Random benchmark instances: bidiagonal dynamics with identity costs.

Instances are generated with a counter-based Philox4x64-10 generator so the
same seed reproduces bit-identical matrices across platforms and runs.
"""

from __future__ import annotations

import numpy as np

from .divergences import DivergenceKind
from .errors import InvalidInputError
from .frank_wolfe import NominalModel
from .lqg import CovarianceProfile, SystemInstance

RNG_ALGORITHM = "philox4x64-10"


def instance_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def random_covariance(d: int, rng: np.random.Generator, lo: float = 1.0, hi: float = 2.0):
    """U diag(lam) U^T with lam uniform on [lo, hi] and U a sign-fixed QR factor."""
    M = rng.standard_normal((d, d))
    Qm, Rm = np.linalg.qr(M)
    Qm = Qm * np.sign(np.diag(Rm))
    lam = rng.uniform(lo, hi, d)
    return (Qm * lam) @ Qm.T


def generate_instance(
    d: int,
    T: int,
    seed: int,
    kind: DivergenceKind = DivergenceKind.WASSERSTEIN2,
    rho: float = 0.1,
    eps: float = 0.0,
) -> tuple[SystemInstance, NominalModel]:
    """Benchmark instance: A has 0.1 on the diagonal and superdiagonal,
    B = C = Q_t = R_t = I_d, and random nominal covariances with eigenvalues
    in [1, 2]. Deterministic per seed."""
    if d < 1 or T < 1:
        raise InvalidInputError("d and T must be >= 1")
    rng = instance_rng(seed)
    A = 0.1 * np.eye(d)
    if d > 1:
        A += 0.1 * np.diag(np.ones(d - 1), 1)
    eye = np.eye(d)
    sys = SystemInstance.time_invariant(A, eye, eye, eye, eye, T=T)
    cov = CovarianceProfile(
        X0=random_covariance(d, rng),
        W=np.stack([random_covariance(d, rng) for _ in range(T)]),
        V=np.stack([random_covariance(d, rng) for _ in range(T)]),
    )
    model = NominalModel.uniform(kind, cov, rho, eps=eps)
    return sys, model

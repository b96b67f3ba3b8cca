import math

import numpy as np
import pytest

from robustlqg.divergences import (
    AmbiguityBall,
    CustomDivergence,
    DivergenceKind,
    MomentPair,
    entropic_ot,
    entropic_ot_squared,
    fisher_gaussian,
    gelbrich,
    kl_t_divergence,
    membership,
    register_moment_divergence,
    zero_mean_feasibility_check,
)
from robustlqg.errors import InvalidInputError, NumericError, UnsupportedDivergenceError

from conftest import rand_spd


def _pair(cov, mean=None):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if mean is None:
        return MomentPair.zero_mean(cov)
    return MomentPair.from_cov(np.asarray(mean, dtype=float), cov)


def test_moment_pair_validation():
    with pytest.raises(InvalidInputError):
        MomentPair(mean=np.array([1.0]), second_moment=np.array([[0.5]]))  # M < mu mu'
    p = MomentPair(mean=np.array([1.0]), second_moment=np.array([[1.5]]))
    assert p.cov[0, 0] == pytest.approx(0.5)


def test_gelbrich_trivial_values():
    a = _pair(np.diag([1.0, 2.0]))
    assert gelbrich(a, a) == pytest.approx(0.0, abs=1e-10)
    assert gelbrich(_pair(1.0), _pair(4.0)) == pytest.approx(1.0, abs=1e-10)
    a = _pair(np.diag([1.0, 9.0]))
    b = _pair(np.diag([4.0, 1.0]))
    assert gelbrich(a, b) == pytest.approx(math.sqrt(5.0), abs=1e-10)


def test_gelbrich_symmetry_and_triangle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(1, 5))
        pairs = [
            MomentPair.from_cov(rng.standard_normal(d), rand_spd(d, rng)) for _ in range(3)
        ]
        a, b, c = pairs
        assert gelbrich(a, b) == pytest.approx(gelbrich(b, a), abs=1e-10)
        assert gelbrich(a, c) <= gelbrich(a, b) + gelbrich(b, c) + 1e-9


def test_kl_trivial_values():
    d = 3
    a = _pair(rand_spd(d, np.random.default_rng(1)))
    assert kl_t_divergence(a, a) == pytest.approx(0.0, abs=1e-10)
    for d in (1, 2, 5):
        two = _pair(2.0 * np.eye(d))
        one = _pair(np.eye(d))
        assert kl_t_divergence(two, one) == pytest.approx(d * (1 - math.log(2)) / 2, abs=1e-10)
    shift = _pair(np.eye(2), mean=[1.0, 0.0])
    assert kl_t_divergence(shift, _pair(np.eye(2))) == pytest.approx(0.5, abs=1e-10)


def test_kl_nonnegativity_and_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        a = _pair(rand_spd(d, rng))
        b = _pair(rand_spd(d, rng))
        val = kl_t_divergence(a, b)
        assert val >= -1e-12
        if val < 1e-10:
            np.testing.assert_allclose(a.cov, b.cov, atol=1e-4)


def test_kl_errors_and_sentinel():
    one = _pair(np.eye(2))
    with pytest.raises(InvalidInputError):
        kl_t_divergence(one, _pair(np.zeros((2, 2))))
    assert math.isinf(kl_t_divergence(_pair(np.diag([1.0, 0.0])), one))


def test_fisher_trivial_values():
    a = _pair(rand_spd(3, np.random.default_rng(3)))
    assert fisher_gaussian(a, a) == pytest.approx(0.0, abs=1e-10)
    assert fisher_gaussian(_pair(2.0), _pair(1.0)) == pytest.approx(0.5, abs=1e-10)
    shift = _pair(np.eye(2), mean=[1.0, 0.0])
    assert fisher_gaussian(shift, _pair(np.eye(2))) == pytest.approx(1.0, abs=1e-10)


def test_entropic_ot_small_eps_matches_gelbrich():
    rng = np.random.default_rng(4)
    for _ in range(10):
        d = int(rng.integers(1, 4))
        a = _pair(rand_spd(d, rng, 0.5, 2.0))
        b = _pair(rand_spd(d, rng, 0.5, 2.0))
        assert entropic_ot(a, b, eps=1e-6) == pytest.approx(gelbrich(a, b), abs=1e-4)


def test_entropic_ot_scalar_hand_expansion():
    # scalar Sigma_a = Sigma_b = 1, eps = 1: X_eps = sqrt(1 + 1/16) - 1/4
    # and the squared value follows term by term
    a = _pair(1.0)
    X = math.sqrt(1.0 + 1.0 / 16.0) - 0.25
    expected = 1.0 + 1.0 - 2.0 * X - 0.5 * math.log(
        (2 * math.pi * math.e) ** 2 * 0.5 * X
    )
    assert entropic_ot_squared(a, a, eps=1.0) == pytest.approx(expected, abs=1e-12)
    # the squared value is negative here, so no real square root exists
    assert expected < 0
    with pytest.raises(NumericError):
        entropic_ot(a, a, eps=1.0)
    # positive branch at small eps: strictly positive at identical arguments
    assert entropic_ot(a, a, eps=1e-3) > 0.0


def test_entropic_ot_minimizer_location():
    # scalar numeric minimization of the squared value over Sigma_a finds
    # Sigma_b + eps/2
    for eps in (0.5, 1.0):
        b = _pair(1.3)
        grid = np.linspace(0.05, 5.0, 4001)
        vals = [entropic_ot_squared(_pair(s), b, eps) for s in grid]
        argmin = grid[int(np.argmin(vals))]
        assert argmin == pytest.approx(1.3 + eps / 2.0, abs=2e-3)


def test_entropic_ot_ball_min_radius():
    nominal = _pair(np.eye(2))
    with pytest.raises(InvalidInputError):
        AmbiguityBall(kind=DivergenceKind.ENTROPIC_OT, nominal=nominal, radius=0.0, eps=1e-2)
    ball = AmbiguityBall(kind=DivergenceKind.ENTROPIC_OT, nominal=nominal, radius=0.5, eps=1e-2)
    assert ball.min_radius <= 0.5
    shifted = _pair(np.eye(2) + 0.5e-2 * np.eye(2))
    assert membership(ball, shifted)


def test_membership_boundaries():
    w2 = AmbiguityBall(kind=DivergenceKind.WASSERSTEIN2, nominal=_pair(1.0), radius=1.0)
    assert membership(w2, _pair(1.0))
    assert membership(w2, _pair(4.0), tol=1e-9)
    assert not membership(w2, _pair(4.2), tol=1e-9)

    # KL boundary from an independent scalar bisection of T(s, 1) = 1/2
    lo, hi = 1.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (mid - math.log(mid) - 1.0) < 0.5:
            lo = mid
        else:
            hi = mid
    boundary = 0.5 * (lo + hi)
    kl = AmbiguityBall(kind=DivergenceKind.KULLBACK_LEIBLER, nominal=_pair(1.0), radius=0.5)
    assert boundary == pytest.approx(3.146, abs=2e-3)
    assert membership(kl, _pair(boundary), tol=1e-3)
    assert not membership(kl, _pair(boundary * 1.01), tol=1e-6)


def test_membership_any_radius_contains_nominal():
    rng = np.random.default_rng(5)
    nominal = _pair(rand_spd(2, rng))
    for kind in (DivergenceKind.WASSERSTEIN2, DivergenceKind.KULLBACK_LEIBLER, DivergenceKind.FISHER):
        ball = AmbiguityBall(kind=kind, nominal=nominal, radius=0.0)
        assert membership(ball, nominal)


def test_zero_mean_feasibility_all_kinds():
    rng = np.random.default_rng(6)
    for kind in (DivergenceKind.WASSERSTEIN2, DivergenceKind.KULLBACK_LEIBLER, DivergenceKind.FISHER):
        nominal = _pair(rand_spd(3, rng, 0.8, 2.0))
        ball = AmbiguityBall(kind=kind, nominal=nominal, radius=1.0)
        hits = 0
        for _ in range(200):
            mu = 0.3 * rng.standard_normal(3)
            cov = nominal.cov + 0.2 * rand_spd(3, rng, 0.0, 1.0)
            cand = MomentPair.from_cov(mu, cov)
            if membership(ball, cand):
                hits += 1
            assert zero_mean_feasibility_check(ball, cand)
        assert hits > 20  # the check must actually exercise feasible points


def test_zero_mean_check_requires_zero_nominal():
    ball = AmbiguityBall(
        kind=DivergenceKind.WASSERSTEIN2,
        nominal=MomentPair.from_cov([1.0], [[1.0]]),
        radius=1.0,
    )
    with pytest.raises(InvalidInputError):
        zero_mean_feasibility_check(ball, _pair(1.0))


def test_sublevel_convexity():
    rng = np.random.default_rng(7)
    kinds = (DivergenceKind.WASSERSTEIN2, DivergenceKind.KULLBACK_LEIBLER, DivergenceKind.FISHER)
    for kind in kinds:
        nominal = _pair(rand_spd(2, rng, 0.8, 2.0))
        ball = AmbiguityBall(kind=kind, nominal=nominal, radius=0.8)
        found = 0
        while found < 20:
            m1 = MomentPair.from_cov(0.2 * rng.standard_normal(2), nominal.cov + 0.3 * rand_spd(2, rng, 0.0, 1.0))
            m2 = MomentPair.from_cov(0.2 * rng.standard_normal(2), nominal.cov + 0.3 * rand_spd(2, rng, 0.0, 1.0))
            if not (membership(ball, m1) and membership(ball, m2)):
                continue
            found += 1
            for lam in (0.25, 0.5, 0.75):
                mix = MomentPair(
                    mean=lam * m1.mean + (1 - lam) * m2.mean,
                    second_moment=lam * m1.second_moment + (1 - lam) * m2.second_moment,
                )
                assert membership(ball, mix, tol=1e-8)


def test_monotone_ordering_fisher_kl():
    rng = np.random.default_rng(8)
    nominal = _pair(rand_spd(3, rng, 0.8, 2.0))
    for div in (kl_t_divergence, fisher_gaussian):
        prev = _pair(nominal.cov.copy())
        value = 0.0
        for _ in range(5):
            bumped = _pair(prev.cov + 0.3 * rand_spd(3, rng, 0.1, 1.0))
            new_value = div(bumped, nominal)
            assert new_value > value
            prev, value = bumped, new_value


def test_custom_divergence_registration():
    nominal = _pair(np.eye(2))

    def frob(candidate, nom):
        dmu = candidate.mean - nom.mean
        return float(np.linalg.norm(candidate.cov - nom.cov, "fro") + dmu @ dmu)

    handle = CustomDivergence(name="frobenius-test", evaluate=frob)
    register_moment_divergence(handle, nominal, rho=1.0)
    ball = AmbiguityBall(
        kind=DivergenceKind.MOMENT_CUSTOM, nominal=nominal, radius=1.0,
        custom_name="frobenius-test",
    )
    assert membership(ball, _pair(np.eye(2) * 1.5))
    assert not membership(ball, _pair(np.eye(2) * 3.0))
    with pytest.raises(InvalidInputError):
        register_moment_divergence(handle, nominal, rho=1.0)  # write-once

    bad = CustomDivergence(name="not-a-divergence", evaluate=lambda c, n: 1.0)
    with pytest.raises(InvalidInputError):
        register_moment_divergence(bad, nominal, rho=1.0)


def test_custom_divergence_unregistered_errors():
    ball = AmbiguityBall(
        kind=DivergenceKind.MOMENT_CUSTOM, nominal=_pair(np.eye(2)), radius=1.0,
        custom_name="missing",
    )
    with pytest.raises(UnsupportedDivergenceError):
        membership(ball, _pair(np.eye(2)))


def test_zero_mean_feasibility_entropic_ot():
    rng = np.random.default_rng(9)
    nominal = _pair(rand_spd(2, rng, 0.8, 2.0))
    ball = AmbiguityBall(kind=DivergenceKind.ENTROPIC_OT, nominal=nominal, radius=1.2, eps=0.1)
    hits = 0
    for _ in range(200):
        mu = 0.3 * rng.standard_normal(2)
        cov = nominal.cov + 0.2 * rand_spd(2, rng, 0.0, 1.0)
        cand = MomentPair.from_cov(mu, cov)
        if membership(ball, cand):
            hits += 1
        assert zero_mean_feasibility_check(ball, cand)
    assert hits > 20

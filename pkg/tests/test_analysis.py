import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adoptnet.analysis import (
    EquilibriumKind,
    EquilibriumReport,
    Verdict,
    adoption_free_equilibrium,
    certify,
    diffused_equilibrium,
    equilibrium_residual,
    find_varsigma,
    jacobian_radius,
    opinion_bounds,
    psi,
    r0,
    r0_extremes,
    stability_constants,
)
from adoptnet.dynamics import State, simulate
from adoptnet.errors import ConvergedToFree, SingularDenominator

from conftest import diffused_params, random_params, random_state, scalar_params


def test_psi_examples(scalar):
    assert psi([1.0], scalar)[0] == 0.0
    assert psi([0.0], scalar)[0] == 1.0
    assert psi([0.5], scalar)[0] == pytest.approx(1 / 3, abs=1e-15)


def test_psi_singular():
    p = scalar_params(gamma=0.4, theta=0.0)
    with pytest.raises(SingularDenominator):
        psi([0.0], p)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_psi_decreasing(n, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n)
    x = rng.uniform(0, 1, n)
    y = np.minimum(x + rng.uniform(0, 1, n), 1.0)
    assert np.all(psi(x, p) >= psi(y, p) - 1e-15)
    assert np.all((psi(x, p) >= 0) & (psi(x, p) <= 1))


def test_adoption_free_scalar(scalar):
    eq = adoption_free_equilibrium(scalar)
    assert eq.x_star[0] == pytest.approx(0.2, abs=1e-15)
    assert eq.d_star[0] == pytest.approx(2 / 3, abs=1e-15)
    assert eq.residual <= 1e-10


def test_fully_stubborn_keeps_anchor(rng):
    from adoptnet.dynamics import ModelParams

    p = random_params(rng, 4)
    q = ModelParams(p.beta, p.gamma, p.theta, p.delta, np.ones(4), np.zeros(4), np.zeros(4), p.W, p.Wt, p.x0)
    assert np.allclose(adoption_free_equilibrium(q).x_star, q.x0, atol=1e-15)


def test_opinion_bounds_scalar(scalar):
    lo, hi = opinion_bounds(scalar)
    assert lo[0] == pytest.approx(0.2, abs=1e-15)
    assert hi[0] == pytest.approx(0.8, abs=1e-15)


def test_opinion_bounds_without_feedback(scalar):
    p = scalar_params(alpha=0.5, lam=0.5, xi=0.0)
    lo, hi = opinion_bounds(p)
    assert lo[0] == hi[0] == pytest.approx(adoption_free_equilibrium(p).x_star[0], abs=1e-15)
    r_min, r_max = r0_extremes(p)
    assert r_min == r_max


def test_opinion_bounds_contain_trajectories(rng):
    for _ in range(100):
        n = int(rng.integers(1, 6))
        p = random_params(rng, n)
        lo, hi = opinion_bounds(p)
        s0 = random_state(rng, n)
        s0 = State(s0.a, s0.d, lo + rng.uniform(0, 1, n) * (hi - lo))
        X = simulate(s0, p, 200).x
        assert np.all(X.min(axis=0) >= lo - 1e-9)
        assert np.all(X.max(axis=0) <= hi + 1e-9)


def test_opinions_enter_bounds_from_anywhere(rng):
    for _ in range(20):
        n = int(rng.integers(1, 6))
        p = random_params(rng, n)
        lo, hi = opinion_bounds(p)
        X = simulate(random_state(rng, n), p, 3000).x[2000:]
        assert np.all(X >= lo - 1e-9) and np.all(X <= hi + 1e-9)


def test_r0_examples(scalar):
    assert r0([1.0], scalar) == pytest.approx(1.2, abs=1e-15)
    assert r0([0.0], scalar) == pytest.approx(0.7, abs=1e-15)
    r_min, r_max = r0_extremes(scalar)
    assert r_min == pytest.approx(0.7 + 0.1 / 3, abs=1e-14)


def test_r0_without_contagion(rng):
    p = random_params(rng, 5).with_(beta=np.zeros(5))
    assert r0(rng.uniform(0, 1, 5), p) == pytest.approx((1 - p.delta).max(), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_r0_monotone_in_x(n, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n)
    x = rng.uniform(0, 1, n)
    y = np.minimum(x + rng.uniform(0, 0.5, n), 1.0)
    assert r0(x, p) <= r0(y, p) + 1e-10
    r_min, r_max = r0_extremes(p)
    assert r_min <= r_max + 1e-12


def test_diffused_from_adoption_free_start(scalar):
    free = adoption_free_equilibrium(scalar)
    eq = diffused_equilibrium(scalar, guess=free.state)
    assert eq.kind is EquilibriumKind.ADOPTION_FREE
    assert eq.iterations == 0


def test_diffused_scalar_example():
    p = scalar_params(beta=0.9, delta=0.1, gamma=0.5, theta=0.1, xi=0.3, lam=0.5, alpha=0.2, x0=1.0)
    eq = diffused_equilibrium(p)
    assert eq.kind is EquilibriumKind.ADOPTION_DIFFUSED
    assert eq.a_star[0] > 0
    assert eq.residual <= eq.tolerance
    assert equilibrium_residual(p, eq.a_star, eq.d_star, eq.x_star) == eq.residual


def test_newton_refinement_agrees(rng):
    p = diffused_params(rng, 5)
    e1 = diffused_equilibrium(p, tol=1e-12)
    e2 = diffused_equilibrium(p, tol=1e-13, newton=True)
    assert np.allclose(e1.stacked(), e2.stacked(), atol=1e-10)


def test_converged_to_free_warns():
    # contagion only through a community that never adopts
    p = scalar_params(beta=0.9, delta=0.1, gamma=0.5, theta=0.1, xi=0.3, lam=0.5, alpha=0.2, x0=1.0)
    with pytest.warns(ConvergedToFree):
        eq = diffused_equilibrium(p, guess=State([0.0], [0.1], [0.9]))
    assert eq.kind is EquilibriumKind.ADOPTION_FREE


def test_stability_constants_scalar(scalar):
    eq = adoption_free_equilibrium(scalar)
    q = scalar_params(x0=1.0, alpha=0.2, lam=0.0, xi=0.8)  # x ranges over [0.2, 1]
    const = stability_constants(q, adoption_free_equilibrium(q))
    assert const.x_lower[0] == pytest.approx(0.2)
    assert const.x_upper[0] == pytest.approx(1.0)
    assert const.eta == pytest.approx(0.76, abs=1e-14)
    const = stability_constants(scalar, eq)
    assert const.nu == pytest.approx(0.2 * 0.8 - 0.3, abs=1e-14)
    assert 0 < const.eta < 1


def test_certify_inconclusive_scalar(scalar):
    eq = certify(scalar, adoption_free_equilibrium(scalar))
    assert eq.thm1_verdict is Verdict.INCONCLUSIVE
    assert not eq.thm2_stability.certified


def test_certify_gas_and_collapse(rng):
    p = scalar_params(beta=0.1, delta=1.0)
    eq = certify(p, adoption_free_equilibrium(p))
    assert eq.thm1_verdict is Verdict.GAS
    for _ in range(50):
        traj = simulate(random_state(rng, 1), p, 200)
        assert traj.a[-1].max() < 1e-6


def test_certify_varphi_blocks_certificate(rng):
    p = diffused_params(rng, 4)
    eq = certify(p, diffused_equilibrium(p, newton=True))
    assert eq.thm1_verdict is Verdict.UNSTABLE
    assert eq.constants.varphi >= 1
    assert not eq.thm2_stability.certified


def test_find_varsigma_none_for_varphi_one():
    assert find_varsigma(0.5, 0.1, 1.0, 0.1) is None


def test_find_varsigma_pair_satisfies_inequalities():
    eta, nu, varphi, rho = 0.3, 0.05, 0.2, 0.1
    s1, s2 = find_varsigma(eta, nu, varphi, rho)
    assert nu**2 + s2 * nu**2 / (1 - eta**2) + s1**2 * varphi**2 / (1 - varphi**2) ** 2 < s1
    assert rho**2 + s1 * rho**2 / (1 - varphi**2) + s2**2 * eta**2 / (1 - eta**2) ** 2 < s2


def test_report_serialisation_round_trip(rng):
    p = diffused_params(rng, 3)
    eq = certify(p, diffused_equilibrium(p))
    back = EquilibriumReport.from_dict(json.loads(json.dumps(eq.to_dict())))
    assert np.array_equal(back.a_star, eq.a_star)
    assert back.thm1_verdict is eq.thm1_verdict
    assert back.constants.varphi == eq.constants.varphi
    rec = eq.to_record()
    assert "kind=AdoptionDiffused" in rec and "thm2_stability.certified=False" in rec


def test_jacobian_radius_below_one_at_stable_point(rng):
    p = diffused_params(rng, 4)
    eq = diffused_equilibrium(p, newton=True)
    assert jacobian_radius(p, eq) < 1


def test_varphi_vertex_rule_matches_dense_grid(rng):
    from adoptnet.analysis import varphi_rows

    p = diffused_params(rng, 2)
    eq = diffused_equilibrium(p)
    W = p.W.weights
    g = np.linspace(0, 1, 11)
    # every (a, d, x) on the joint 11^6 grid
    a1, a2, d1, d2, x1, x2 = (v.ravel() for v in np.meshgrid(g, g, g, g, g, g, indexing="ij"))
    A, D, X = np.stack([a1, a2], 1), np.stack([d1, d2], 1), np.stack([x1, x2], 1)
    diag = 1 - p.delta - p.beta * X * (W @ eq.a_star)
    gain = p.beta * X * (1 - A - D)
    rows = np.abs(diag + gain * np.diag(W)) + np.abs(gain) * (1 - np.diag(W))
    assert varphi_rows(p, eq.a_star).max() == pytest.approx(rows.max(), abs=1e-12)

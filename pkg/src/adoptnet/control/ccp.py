"""Constant control policy: the time-invariant control whose induced
equilibrium has the lowest weighted cost."""
from __future__ import annotations

import warnings

import numpy as np

from ..analysis import (
    EquilibriumKind,
    certify,
    diffused_equilibrium,
    jacobian_radius,
    opinion_bounds,
    r0,
    r0_extremes,
)
from ..dynamics import advance, controlled_params
from ..errors import ConvergedToFree, Infeasible, NoConvergence
from .projection import project_budget_box
from .spec import PolicyResult

RELAXED = "relaxed"
STRICT = "strict"


class CcpProblem:
    """Equilibrium cost ``J(u)`` with feasibility screening.

    ``J(u) = sum_i -Qa (a*_i)^2 + Qd (d*_i)^2 + L u_i^2`` at the equilibrium of
    the model under constant control ``u``.  Candidates are rejected (cost
    ``inf``) unless ``r0_min(u) > 1``, the fixed-point search lands on an
    adoption-diffused equilibrium, and that equilibrium passes the stability
    check: the Lyapunov certificate in ``strict`` mode, a step-Jacobian
    spectral radius below one in ``relaxed`` mode.
    """

    def __init__(self, p, spec, mode=RELAXED, eq_tol=1e-13):
        if mode not in (RELAXED, STRICT):
            raise ValueError(f"unknown feasibility mode {mode!r}")
        self.p = p
        self.spec = spec
        self.mode = mode
        self.eq_tol = eq_tol
        self.ub = spec.effective_upper
        self.evaluations = 0
        self._cache = {}

    def project(self, u):
        return project_budget_box(u, self.spec.budget, self.ub)

    def cost_at(self, u, eq):
        s = self.spec
        return float(np.sum(-s.Qa * eq.a_star**2 + s.Qd * eq.d_star**2 + s.L * u**2))

    def evaluate(self, u, guess=None, screen=True):
        """Return ``(J, equilibrium or None, reason)``."""
        u = np.asarray(u, dtype=float)
        key = (u.tobytes(), screen)
        if key in self._cache:
            return self._cache[key]
        self.evaluations += 1
        pu = controlled_params(self.p, u, self.spec.channel, validate=False)
        bounds = r0_extremes(pu) if screen else (np.inf, np.inf)
        if screen and not bounds[0] > 1:
            out = (np.inf, None, f"r0_min = {bounds[0]:.6g} <= 1")
        else:
            out = self._equilibrium_cost(u, pu, guess, bounds, screen)
        self._cache[key] = out
        return out

    def _equilibrium_cost(self, u, pu, guess, bounds, screen):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergedToFree)
                eq = diffused_equilibrium(
                    pu, guess=guess, tol=self.eq_tol, newton=True, r0_bounds=bounds,
                    newton_switch=1e-3, max_iters=50_000,
                )
        except NoConvergence as exc:
            return np.inf, None, str(exc)
        if eq.kind is not EquilibriumKind.ADOPTION_DIFFUSED:
            return np.inf, None, "no adoption-diffused equilibrium found"
        if screen:
            if self.mode == STRICT:
                eq = certify(pu, eq)
                if not eq.thm2_stability.certified:
                    return np.inf, None, "stability certificate: " + eq.thm2_stability.reason
            else:
                rho = jacobian_radius(pu, eq)
                if not rho < 1:
                    return np.inf, None, f"equilibrium locally unstable (rho = {rho:.6g})"
        return self.cost_at(u, eq), eq, ""

    def gradient(self, u, eq, h=1e-6):
        """Central differences of ``J``; one-sided at the box faces."""
        n = u.size
        g = np.zeros(n)
        guess = eq.stacked()
        for i in range(n):
            up, dn = u.copy(), u.copy()
            up[i] = min(u[i] + h, self.ub[i])
            dn[i] = max(u[i] - h, 0.0)
            if up[i] - dn[i] <= 0:
                continue
            fu = self.evaluate(up, guess, screen=False)[0]
            fd = self.evaluate(dn, guess, screen=False)[0]
            f0 = None
            if not np.isfinite(fu) or not np.isfinite(fd):
                f0 = self.cost_at(u, eq)
            if np.isfinite(fu) and np.isfinite(fd):
                g[i] = (fu - fd) / (up[i] - dn[i])
            elif np.isfinite(fu) and up[i] > u[i]:
                g[i] = (fu - f0) / (up[i] - u[i])
            elif np.isfinite(fd) and dn[i] < u[i]:
                g[i] = (f0 - fd) / (u[i] - dn[i])
        return g

    def stationarity(self, u, g):
        return float(np.max(np.abs(u - self.project(u - g)), initial=0.0))


def ccp_starts(problem, count=16, seed=0):
    """Deterministic multi-start set: zero, the even split of the budget,
    budget concentrated on single communities, then random feasible points."""
    spec, ub = problem.spec, problem.ub
    n, C = spec.n, spec.budget
    rng = np.random.default_rng(seed)
    starts = [np.zeros(n), problem.project(np.full(n, C / n))]
    influence = problem.p.W.weights.sum(axis=0)
    for i in np.argsort(-influence, kind="stable")[: min(n, max(0, (count - 2) // 2))]:
        e = np.zeros(n)
        e[i] = C
        starts.append(problem.project(e))
    while len(starts) < count:
        w = rng.dirichlet(np.ones(n)) * C * rng.uniform(0.3, 1.0)
        starts.append(problem.project(w))
    return starts[:count]


def _restore(problem, u, iters=60, h=1e-6):
    """Phase one: projected gradient ascent on ``r0_min(u)`` from an
    infeasible start until the threshold is crossed (or progress stops)."""
    def r_min(v):
        q = controlled_params(problem.p, v, problem.spec.channel, validate=False)
        return r0(opinion_bounds(q)[0], q)

    r = r_min(u)
    step = 0.1 * max(problem.spec.budget, 1e-12)
    for _ in range(iters):
        if r > 1 + 1e-9:
            break
        g = np.zeros_like(u)
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = h
            g[i] = (r_min(np.minimum(u + e, problem.ub)) - r_min(np.maximum(u - e, 0.0))) / (2 * h)
        if not np.any(g):
            break
        g /= np.abs(g).max()
        while step > 1e-8:
            v = problem.project(u + step * g)
            rv = r_min(v)
            if rv > r:
                u, r = v, rv
                step *= 2
                break
            step *= 0.5
        else:
            break
    return u


def _descend(problem, u, J, eq, max_iters, step_tol):
    """Projected gradient with Barzilai-Borwein trial steps and Armijo backtracking."""
    g = problem.gradient(u, eq)
    alpha = 1.0
    it = 0
    for it in range(1, max_iters + 1):
        if problem.stationarity(u, g) <= step_tol:
            break
        accepted = False
        trial = alpha
        while trial > 1e-14:
            v = problem.project(u - trial * g)
            Jv, eqv, _ = problem.evaluate(v, eq.stacked())
            if np.isfinite(Jv) and Jv <= J + 1e-4 * g @ (v - u):
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        g_new = problem.gradient(v, eqv)
        s, y = v - u, g_new - g
        sy = s @ y
        alpha = float(np.clip(s @ s / sy, 1e-6, 1e6)) if sy > 0 else min(2 * trial, 1e6)
        u, J, eq, g = v, Jv, eqv, g_new
    return u, J, eq, g, it


def _rollout_converges(p, u, channel, eq, steps, tol):
    n = p.n
    a = np.full(n, 0.01)
    d = np.zeros(n)
    x = p.x0.copy()
    for _ in range(steps):
        a, d, x = advance(a, d, x, p, u, channel)
    dev = max(np.abs(a - eq.a_star).max(), np.abs(d - eq.d_star).max(), np.abs(x - eq.x_star).max())
    return dev <= tol


def solve_ccp(
    p,
    spec,
    *,
    mode=RELAXED,
    starts=16,
    seed=0,
    max_iters=100,
    step_tol=1e-7,
    rollout_steps=5000,
    rollout_tol=1e-6,
    restarts=4,
    raise_on_infeasible=False,
):
    """Optimal constant control over the budgeted box.

    Multi-start projected-gradient descent on :class:`CcpProblem`.  The best
    finite-cost result (ties broken by start index) is returned.  In relaxed
    mode the winner must additionally pull an early-stage state (1% adopters
    everywhere, nobody dissatisfied, opinions at their predisposition) onto
    its equilibrium within ``rollout_steps``; otherwise the next best result
    is tried.  Up to ``restarts`` starts that violate ``r0_min > 1`` are
    first pushed across the threshold by ascent on ``r0_min``.

    Returns a :class:`PolicyResult` whose ``equilibrium`` is the controlled
    equilibrium targeted by the predictive controller.  ``feasible`` is
    False when no start yields an admissible equilibrium.
    """
    problem = CcpProblem(p, spec, mode)
    outcomes = []
    total_iters = 0
    reasons = []
    for k, u0 in enumerate(ccp_starts(problem, starts, seed)):
        J0, eq0, why = problem.evaluate(u0)
        if not np.isfinite(J0) and restarts > 0:
            restarts -= 1
            u0 = _restore(problem, u0)
            J0, eq0, why = problem.evaluate(u0)
        if not np.isfinite(J0):
            reasons.append(why)
            continue
        u, J, eq, g, it = _descend(problem, u0, J0, eq0, max_iters, step_tol)
        total_iters += it
        outcomes.append((J, k, u, eq, problem.stationarity(u, g)))

    outcomes.sort(key=lambda o: (o[0], o[1]))
    for J, k, u, eq, kkt in outcomes:
        if mode == RELAXED:
            pu = controlled_params(p, u, spec.channel, validate=False)
            if not _rollout_converges(pu, np.zeros(p.n), None, eq, rollout_steps, rollout_tol):
                reasons.append("rollout under the constant control does not settle")
                continue
        return PolicyResult(
            controls=u,
            cost=J,
            feasible=True,
            iterations=total_iters,
            kkt_residual=kkt,
            equilibrium=eq,
            message=f"best of {len(outcomes)} feasible starts (start {k})",
        )

    msg = "no admissible constant control: " + (reasons[0] if reasons else "no starts")
    if raise_on_infeasible:
        raise Infeasible(msg)
    return PolicyResult(
        controls=np.zeros(p.n),
        cost=np.inf,
        feasible=False,
        iterations=total_iters,
        kkt_residual=np.nan,
        message=msg,
    )


def ccp_cost(p, spec, u, mode=RELAXED):
    """Equilibrium cost of one constant control (``inf`` when inadmissible)."""
    return CcpProblem(p, spec, mode).evaluate(np.asarray(u, dtype=float))[0]

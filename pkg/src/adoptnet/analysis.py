"""Equilibria, reproduction numbers and stability certificates."""
from __future__ import annotations

import enum
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .dynamics import ModelParams, State, advance, step_jacobian
from .errors import ConvergedToFree, NoConvergence, SingularDenominator, SingularSystem
from .network import spectral_radius


class EquilibriumKind(str, enum.Enum):
    ADOPTION_FREE = "AdoptionFree"
    ADOPTION_DIFFUSED = "AdoptionDiffused"


class Verdict(str, enum.Enum):
    GAS = "GAS"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class StabilityConstants:
    eta: float
    nu: float
    varphi: float
    x_lower: np.ndarray
    x_upper: np.ndarray
    bstar: np.ndarray  # diagonal of beta * x* * (W a*)
    rho_bstar: float

    def to_dict(self):
        return {
            "eta": self.eta,
            "nu": self.nu,
            "varphi": self.varphi,
            "x_lower": self.x_lower.tolist(),
            "x_upper": self.x_upper.tolist(),
            "bstar": self.bstar.tolist(),
            "rho_bstar": self.rho_bstar,
        }


@dataclass(frozen=True)
class Certificate:
    certified: bool
    varsigma: Optional[Tuple[float, float]] = None
    reason: str = ""

    def __str__(self):
        if self.certified:
            return f"Certified({self.varsigma[0]:.6g}, {self.varsigma[1]:.6g})"
        return "NotCertified"


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    kind: EquilibriumKind
    a_star: np.ndarray
    d_star: np.ndarray
    x_star: np.ndarray
    residual: float
    tolerance: float
    r0_min: float = float("nan")
    r0_max: float = float("nan")
    thm1_verdict: Verdict = Verdict.INCONCLUSIVE
    thm2_existence: bool = False
    thm2_stability: Certificate = field(default_factory=lambda: Certificate(False, None, "not checked"))
    constants: Optional[StabilityConstants] = None
    iterations: int = 0

    @property
    def state(self):
        return State(self.a_star, self.d_star, self.x_star)

    def stacked(self):
        return np.concatenate([self.a_star, self.d_star, self.x_star])

    def to_dict(self):
        cert = self.thm2_stability
        return {
            "kind": self.kind.value,
            "a_star": self.a_star.tolist(),
            "d_star": self.d_star.tolist(),
            "x_star": self.x_star.tolist(),
            "residual": self.residual,
            "tolerance": self.tolerance,
            "r0_min": self.r0_min,
            "r0_max": self.r0_max,
            "thm1_verdict": self.thm1_verdict.value,
            "thm2_existence": self.thm2_existence,
            "thm2_stability": {
                "certified": cert.certified,
                "varsigma": list(cert.varsigma) if cert.varsigma else None,
                "reason": cert.reason,
            },
            "constants": self.constants.to_dict() if self.constants else None,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data):
        cert = data.get("thm2_stability") or {}
        const = data.get("constants")
        return cls(
            kind=EquilibriumKind(data["kind"]),
            a_star=np.asarray(data["a_star"], dtype=float),
            d_star=np.asarray(data["d_star"], dtype=float),
            x_star=np.asarray(data["x_star"], dtype=float),
            residual=float(data["residual"]),
            tolerance=float(data["tolerance"]),
            r0_min=float(data.get("r0_min", "nan")),
            r0_max=float(data.get("r0_max", "nan")),
            thm1_verdict=Verdict(data.get("thm1_verdict", "Inconclusive")),
            thm2_existence=bool(data.get("thm2_existence", False)),
            thm2_stability=Certificate(
                bool(cert.get("certified", False)),
                tuple(cert["varsigma"]) if cert.get("varsigma") else None,
                cert.get("reason", ""),
            ),
            constants=None
            if const is None
            else StabilityConstants(
                const["eta"],
                const["nu"],
                const["varphi"],
                np.asarray(const["x_lower"]),
                np.asarray(const["x_upper"]),
                np.asarray(const["bstar"]),
                const["rho_bstar"],
            ),
            iterations=int(data.get("iterations", 0)),
        )

    def to_record(self):
        """Flat ``key=value`` text, one entry per line, vectors comma-joined."""
        lines = []

        def emit(key, value):
            if isinstance(value, (list, tuple)):
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{key}={value}")

        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    emit(f"{key}.{sub}", v)
            else:
                emit(key, value)
        return "\n".join(lines) + "\n"


def psi(x, p):
    """Equilibrium dissatisfied fraction of an adopter-free community.

    ``theta (1 - x) / ((gamma - theta) x + theta)`` entrywise.
    """
    x = np.asarray(x, dtype=float)
    den = (p.gamma - p.theta) * x + p.theta
    if np.any(den <= 0):
        i = int(np.flatnonzero(den <= 0)[0])
        raise SingularDenominator(f"community {i}: theta = 0 and gamma * x = 0")
    return p.theta * (1.0 - x) / den


def _fj_solve(p, rhs):
    n = p.n
    A = np.eye(n) - p.lam[:, None] * p.Wt.weights
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"I - Lambda Wt is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("I - Lambda Wt is numerically singular")
    return sol


def opinion_bounds(p, mode="reachable"):
    """Lower and upper bounds on the opinion trajectory.

    ``x_lower`` is the opinion fixed point with no adopters and ``x_upper``
    the one with every community fully adopting.  With ``mode="extreme"``
    the upper bound is the all-ones vector instead.
    """
    base = p.anchor_weight * p.x0
    x_lower = np.clip(_fj_solve(p, base), 0.0, 1.0)
    if mode == "extreme":
        x_upper = np.ones(p.n)
    elif mode == "reachable":
        x_upper = np.clip(_fj_solve(p, base + p.xi * p.W.weights.sum(axis=1)), 0.0, 1.0)
    else:
        raise ValueError(f"unknown opinion bound mode {mode!r}")
    return x_lower, x_upper


def r0_matrix(x, p):
    x = np.asarray(x, dtype=float)
    gain = p.beta * x * (1.0 - psi(x, p))
    return np.diag(1.0 - p.delta) + gain[:, None] * p.W.weights


def r0(x, p, tol=1e-12):
    """Opinion-dependent reproduction number at opinion vector ``x``."""
    return spectral_radius(r0_matrix(x, p), tol=tol)


def r0_extremes(p, mode="reachable"):
    """``(r0_min, r0_max)`` at the lower and upper opinion bounds."""
    x_lower, x_upper = opinion_bounds(p, mode)
    return r0(x_lower, p), r0(x_upper, p)


def equilibrium_residual(p, a, d, x):
    a1, d1, x1 = advance(a, d, x, p)
    return float(max(np.abs(a1 - a).max(), np.abs(d1 - d).max(), np.abs(x1 - x).max()))


def adoption_free_equilibrium(p, mode="reachable", tol=1e-10):
    """Closed-form adoption-free equilibrium ``(0, psi(x*), x*)``."""
    x_star, _ = opinion_bounds(p, mode)
    d_star = psi(x_star, p)
    a_star = np.zeros(p.n)
    r_min, r_max = r0_extremes(p, mode)
    return EquilibriumReport(
        kind=EquilibriumKind.ADOPTION_FREE,
        a_star=a_star,
        d_star=d_star,
        x_star=x_star,
        residual=equilibrium_residual(p, a_star, d_star, x_star),
        tolerance=tol,
        r0_min=r_min,
        r0_max=r_max,
        thm2_existence=bool(r_min > 1),
    )


def _in_box(z, n):
    a, d, x = z[:n], z[n:2 * n], z[2 * n:]
    return (
        z.min() >= -1e-12
        and x.max() <= 1 + 1e-12
        and (a + d).max() <= 1 + 1e-12
    )


def diffused_equilibrium(
    p,
    guess=None,
    tol=1e-12,
    max_iters=200_000,
    damping=0.5,
    newton=False,
    r0_bounds=None,
    newton_switch=1e-6,
):
    """Fixed point of the model reached by damped Picard iteration.

    Iterates ``z <- z + damping * (F(z) - z)`` until the fixed-point residual
    ``||F(z) - z||_inf`` is at most ``tol``.  With ``newton=True`` the
    iteration switches to Newton steps once the residual is below
    ``newton_switch`` and
    falls back to Picard if a Newton step leaves the state box or fails to
    reduce the residual.

    The result is classified as adoption-diffused when ``min a* > 10 tol``;
    otherwise it is reported as adoption-free (with a :class:`ConvergedToFree`
    warning when ``r0_min > 1`` said a diffused equilibrium exists).
    """
    n = p.n
    if guess is None:
        z = np.concatenate([np.full(n, 0.5), np.zeros(n), p.x0])
    elif isinstance(guess, State):
        z = guess.stacked().copy()
    elif isinstance(guess, EquilibriumReport):
        z = guess.stacked().copy()
    else:
        z = np.array(guess, dtype=float)
    if r0_bounds is None:
        r0_bounds = r0_extremes(p)

    def F(z):
        return np.concatenate(advance(z[:n], z[n:2 * n], z[2 * n:], p))

    fz = F(z)
    res = np.abs(fz - z).max()
    it = 0
    newton_ok = newton
    while res > tol:
        if it >= max_iters:
            raise NoConvergence(
                f"fixed-point iteration stalled at residual {res:.3e} after {max_iters} iterations"
            )
        it += 1
        if newton_ok and res < newton_switch:
            Jz, _ = step_jacobian(z[:n], z[n:2 * n], z[2 * n:], p)
            try:
                dz = np.linalg.solve(Jz - np.eye(3 * n), -(fz - z))
            except np.linalg.LinAlgError:
                dz = None
            if dz is not None:
                z_new = z + dz
                if _in_box(z_new, n):
                    f_new = F(z_new)
                    r_new = np.abs(f_new - z_new).max()
                    if r_new < res:
                        z, fz, res = z_new, f_new, r_new
                        continue
            newton_ok = False
        z = z + damping * (fz - z)
        fz = F(z)
        res = np.abs(fz - z).max()

    a, d, x = z[:n].copy(), z[n:2 * n].copy(), z[2 * n:].copy()
    a[np.abs(a) < 1e-300] = 0.0
    diffused = a.min() > 10 * tol
    r_min, r_max = r0_bounds
    if not diffused and r_min > 1:
        warnings.warn(
            "fixed-point search converged to the adoption-free equilibrium although r0_min > 1",
            ConvergedToFree,
            stacklevel=2,
        )
    return EquilibriumReport(
        kind=EquilibriumKind.ADOPTION_DIFFUSED if diffused else EquilibriumKind.ADOPTION_FREE,
        a_star=a,
        d_star=d,
        x_star=x,
        residual=equilibrium_residual(p, a, d, x),
        tolerance=tol,
        r0_min=r_min,
        r0_max=r_max,
        thm2_existence=bool(r_min > 1),
        iterations=it,
    )


def varphi_rows(p, a_star):
    """Per-community maximum absolute row sum entering ``varphi``.

    Row ``i`` of ``I - Delta - B*(x) + B diag(x) diag(1 - a - d) W`` depends
    only on ``(x_i, a_i, d_i)``, and its absolute sum is convex in ``x_i`` and
    in ``(a_i, d_i)`` separately, so the box maximum sits on a vertex:
    ``x_i in {0, 1}`` and ``1 - a_i - d_i in {-1, 0, 1}``.
    """
    W = p.W.weights
    w_diag = np.diag(W)
    w_off = W.sum(axis=1) - w_diag
    pull = W @ np.asarray(a_star, dtype=float)
    best = np.zeros(p.n)
    for x in (0.0, 1.0):
        for c in (-1.0, 0.0, 1.0):
            bx = p.beta * x
            row = np.abs(1.0 - p.delta - bx * pull + bx * c * w_diag) + bx * abs(c) * w_off
            best = np.maximum(best, row)
    return best


def stability_constants(p, eq, mode="reachable"):
    x_lower, x_upper = opinion_bounds(p, mode)
    recovery_lo = p.gamma * x_lower + p.theta * (1.0 - x_lower)
    recovery_hi = p.gamma * x_upper + p.theta * (1.0 - x_upper)
    eta = 1.0 - float(min(recovery_lo.min(), recovery_hi.min()))
    nu = float(np.max(p.theta * (1.0 - x_lower) - p.delta))
    varphi = float(varphi_rows(p, eq.a_star).max())
    bstar = p.beta * eq.x_star * (p.W.weights @ eq.a_star)
    return StabilityConstants(
        eta=eta,
        nu=nu,
        varphi=varphi,
        x_lower=x_lower,
        x_upper=x_upper,
        bstar=bstar,
        rho_bstar=float(np.abs(bstar).max()),
    )


def find_varsigma(eta, nu, varphi, rho_bstar, grid=200, bounds=(1e-4, 1e4)):
    """First ``(s1, s2)`` on a log grid meeting both strict Lyapunov
    inequalities, scanning ``s1`` rows first; ``None`` when none does."""
    if not (0 <= eta < 1 and 0 <= varphi < 1):
        return None
    s = np.logspace(np.log10(bounds[0]), np.log10(bounds[1]), grid)
    s1, s2 = np.meshgrid(s, s, indexing="ij")
    e2, f2, r2, n2 = eta**2, varphi**2, rho_bstar**2, nu**2
    ok1 = n2 + s2 * n2 / (1 - e2) + s1**2 * f2 / (1 - f2) ** 2 < s1
    ok2 = r2 + s1 * r2 / (1 - f2) + s2**2 * e2 / (1 - e2) ** 2 < s2
    hits = np.argwhere(ok1 & ok2)
    if hits.size == 0:
        return None
    i, j = hits[0]
    return float(s[i]), float(s[j])


def certify(p, eq, mode="reachable", grid=200):
    """Attach the reproduction-number verdict and the diffused-equilibrium
    stability certificate to ``eq``."""
    if np.isnan(eq.r0_min) or np.isnan(eq.r0_max):
        r_min, r_max = r0_extremes(p, mode)
    else:
        r_min, r_max = eq.r0_min, eq.r0_max
    if r_max < 1:
        verdict = Verdict.GAS
    elif r_min > 1:
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.INCONCLUSIVE

    const = stability_constants(p, eq, mode)
    cert = _stability_certificate(p, eq, const, r_min, grid)
    return replace(
        eq,
        r0_min=r_min,
        r0_max=r_max,
        thm1_verdict=verdict,
        thm2_existence=bool(r_min > 1),
        thm2_stability=cert,
        constants=const,
    )


def _stability_certificate(p, eq, const, r_min, grid):
    if eq.kind is not EquilibriumKind.ADOPTION_DIFFUSED:
        return Certificate(False, None, "not an adoption-diffused equilibrium")
    if not r_min > 1:
        return Certificate(False, None, "r0_min <= 1")
    lhs = p.beta * p.W.weights.sum(axis=1)
    bad = np.flatnonzero(lhs > p.delta + const.bstar)
    if bad.size:
        return Certificate(False, None, f"contagion bound fails in community {int(bad[0])}")
    if const.varphi >= 1:
        return Certificate(False, None, f"varphi = {const.varphi:.6g} >= 1")
    if const.eta >= 1:
        return Certificate(False, None, f"eta = {const.eta:.6g} >= 1")
    pair = find_varsigma(const.eta, const.nu, const.varphi, const.rho_bstar, grid)
    if pair is None:
        return Certificate(False, None, "no (s1, s2) on the search grid")
    return Certificate(True, pair, "")


def jacobian_radius(p, eq):
    """Spectral radius of the uncontrolled step Jacobian at ``eq``."""
    Jz, _ = step_jacobian(eq.a_star, eq.d_star, eq.x_star, p)
    return float(np.max(np.abs(np.linalg.eigvals(Jz))))

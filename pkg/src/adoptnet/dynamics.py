"""One-step map and trajectories of the coupled adoption-opinion model.

The susceptible fraction is never stored: ``s = 1 - a - d``.  Controls enter
through one of three channels and substitute a model quantity for the
duration of one step:

* ``Channel.OPINION``          anchor ``x0 -> x0 + u`` in the opinion row only
* ``Channel.ADOPTION_RATE``    ``beta -> beta * (1 + u)``
* ``Channel.DISSATISFACTION``  ``delta -> delta * (1 - u)``
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import InvariantBreach, ValidationError
from .network import Network, reaches

DUST = 1e-9
RATE_FIELDS = ("beta", "gamma", "theta", "delta", "alpha", "lam", "xi")


class Channel(str, enum.Enum):
    OPINION = "opinion"
    ADOPTION_RATE = "beta"
    DISSATISFACTION = "delta"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {
            "opinion": cls.OPINION,
            "beta": cls.ADOPTION_RATE,
            "adoption_rate": cls.ADOPTION_RATE,
            "adoptionrate": cls.ADOPTION_RATE,
            "delta": cls.DISSATISFACTION,
            "dissatisfaction": cls.DISSATISFACTION,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValidationError(f"unknown control channel {value!r}", field="channel") from None


def _vector(name, value, n=None):
    v = np.array(value, dtype=float, copy=True).reshape(-1)
    if n is not None and v.shape != (n,):
        raise ValidationError(f"{name} must have length {n}, got {v.shape[0]}", field=name)
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries", field=name)
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Per-community rates, opinion weights, both layers and the opinion anchor.

    ``lam`` is the social-influence weight (lambda).  Validation runs on
    construction; every invariant breach names the offending community.
    """

    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    W: Network
    Wt: Network
    x0: np.ndarray

    def __post_init__(self):
        n = self.W.n
        if self.Wt.n != n:
            raise ValidationError("physical and social layers differ in size", field="Wt")
        for name in RATE_FIELDS + ("x0",):
            v = _vector(name, getattr(self, name), n)
            bad = np.flatnonzero((v < 0) | (v > 1))
            if bad.size:
                i = int(bad[0])
                raise ValidationError(
                    f"{name}[{i}] = {v[i]!r} outside [0, 1]", field=name, index=i
                )
            object.__setattr__(self, name, v)

        total = self.alpha + self.lam + self.xi
        bad = np.flatnonzero(np.abs(total - 1.0) > 1e-12)
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"community {i}: alpha + lambda + xi = {total[i]!r} != 1", field="alpha", index=i
            )
        gt = self.gamma + self.theta
        bad = np.flatnonzero((gt <= 0) | (gt >= 1))
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"community {i}: gamma + theta = {gt[i]!r} not in (0, 1)", field="gamma", index=i
            )
        ok = reaches(self.Wt.weights, self.alpha > 0)
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            raise ValidationError(
                f"community {i} cannot reach a stubborn community in the social layer",
                field="alpha",
                index=i,
            )
        object.__setattr__(self, "anchor_weight", 1.0 - self.lam - self.xi)

    @property
    def n(self):
        return self.W.n

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            all(np.array_equal(getattr(self, f), getattr(other, f)) for f in RATE_FIELDS + ("x0",))
            and self.W == other.W
            and self.Wt == other.Wt
        )

    __hash__ = None

    def with_(self, **changes):
        return replace(self, **changes)


def controlled_params(p, u, channel, validate=True):
    """Parameters of the model under the constant control ``u``.

    The substitution is the same one :func:`step` applies, so fixed points of
    the returned model are the equilibria of the controlled dynamics.
    ``validate=False`` skips re-checking the invariants (the substituted
    quantity is clipped into [0, 1], the networks are untouched); solvers use
    it in their inner loops.
    """
    channel = Channel.parse(channel)
    u = np.asarray(u, dtype=float)
    if channel is Channel.OPINION:
        changes = {"x0": np.clip(p.x0 + u, 0.0, 1.0)}
    elif channel is Channel.ADOPTION_RATE:
        changes = {"beta": np.clip(p.beta * (1.0 + u), 0.0, 1.0)}
    else:
        changes = {"delta": np.clip(p.delta * (1.0 - u), 0.0, 1.0)}
    if validate:
        return p.with_(**changes)
    q = object.__new__(ModelParams)
    q.__dict__.update(p.__dict__)
    for name, value in changes.items():
        value.setflags(write=False)
        q.__dict__[name] = value
    return q


@dataclass(frozen=True, eq=False)
class State:
    a: np.ndarray
    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.a).size
        for name in ("a", "d", "x"):
            object.__setattr__(self, name, _vector(name, getattr(self, name), n))

    @property
    def s(self):
        return 1.0 - self.a - self.d

    @property
    def n(self):
        return self.a.size

    def stacked(self):
        return np.concatenate([self.a, self.d, self.x])

    @classmethod
    def from_stacked(cls, z):
        a, d, x = np.split(np.asarray(z, dtype=float), 3)
        return cls(a, d, x)

    def validate(self, slack=0.0):
        for name in ("a", "d", "x"):
            v = getattr(self, name)
            if np.any(v < -slack) or np.any(v > 1 + slack):
                i = int(np.flatnonzero((v < -slack) | (v > 1 + slack))[0])
                raise ValidationError(f"{name}[{i}] = {v[i]!r} outside [0, 1]", field=name, index=i)
        over = np.flatnonzero(self.a + self.d > 1 + slack)
        if over.size:
            i = int(over[0])
            raise ValidationError(f"a + d exceeds 1 in community {i}", field="d", index=i)
        return self

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in "adx")

    __hash__ = None


@dataclass(frozen=True)
class ControlInput:
    u: np.ndarray
    channel: Channel

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel.parse(self.channel))
        object.__setattr__(self, "u", _vector("u", self.u))


def channel_upper_bound(p, channel, adoption_cap=1.0):
    """Default per-community control ceiling for a channel.

    Opinion: ``1 - x0`` keeps the shifted anchor inside [0, 1].
    Dissatisfaction: 1.  Adoption rate: ``adoption_cap``, further limited so
    that the boosted rate ``beta * (1 + u)`` stays a probability.
    """
    channel = Channel.parse(channel)
    if channel is Channel.OPINION:
        return 1.0 - p.x0
    if channel is Channel.DISSATISFACTION:
        return np.ones(p.n)
    with np.errstate(divide="ignore"):
        rate_room = np.where(p.beta > 0, 1.0 / np.where(p.beta > 0, p.beta, 1.0) - 1.0, np.inf)
    return np.minimum(adoption_cap, rate_room)


def advance(a, d, x, p, u=None, channel=None):
    """Raw one-step update on arrays; no validation, no clamping.

    ``a``, ``d`` and ``x`` may carry a leading batch axis (shape ``(k, n)``)
    to advance ``k`` states at once.
    """
    beta, delta, anchor = p.beta, p.delta, p.x0
    if u is not None:
        if channel is Channel.OPINION:
            anchor = p.x0 + u
        elif channel is Channel.ADOPTION_RATE:
            beta = p.beta * (1.0 + u)
        else:
            delta = p.delta * (1.0 - u)
    s = 1.0 - a - d
    Wa = a @ p.W.weights.T
    a_next = a + beta * x * s * Wa - delta * a
    d_next = d - p.gamma * x * d + p.theta * (1.0 - x) * s + delta * a
    x_next = p.anchor_weight * anchor + p.lam * (x @ p.Wt.weights.T) + p.xi * Wa
    return a_next, d_next, x_next


def _settle(a, d, x, step_index=None):
    """Clamp floating-point dust, raise on genuine excursions."""
    low = min(a.min(), d.min(), x.min())
    high = max(a.max(), d.max(), x.max(), (a + d).max())
    if low < -DUST or high > 1 + DUST:
        raise InvariantBreach(
            f"state left the feasible box (min {low:.3e}, max {high:.3e})", step=step_index
        )
    a = np.clip(a, 0.0, 1.0)
    d = np.clip(d, 0.0, 1.0)
    x = np.clip(x, 0.0, 1.0)
    d = np.minimum(d, 1.0 - a)
    return a, d, x


def _check_control(ctrl, p):
    u = ctrl.u
    if u.shape != (p.n,):
        raise ValidationError(f"control must have length {p.n}", field="u")
    if np.any(u < -DUST):
        raise ValidationError("control must be nonnegative", field="u")
    if ctrl.channel is Channel.OPINION and np.any(u > 1.0 - p.x0 + DUST):
        raise ValidationError("opinion control exceeds 1 - x0", field="u")
    if ctrl.channel is Channel.DISSATISFACTION and np.any(u > 1.0 + DUST):
        raise ValidationError("dissatisfaction control exceeds 1", field="u")


def step(s, p, ctrl=None, *, step_index=None):
    """Advance ``s`` by one time step, optionally under ``ctrl``."""
    u = channel = None
    if ctrl is not None:
        _check_control(ctrl, p)
        u, channel = ctrl.u, ctrl.channel
    a, d, x = advance(s.a, s.d, s.x, p, u, channel)
    return State(*_settle(a, d, x, step_index))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``t = 0..T`` as rows, and the ``T`` controls applied between them."""

    a: np.ndarray
    d: np.ndarray
    x: np.ndarray
    u: Optional[np.ndarray] = None
    channel: Optional[Channel] = None

    @property
    def T(self):
        return self.a.shape[0] - 1

    @property
    def n(self):
        return self.a.shape[1]

    def state(self, t):
        return State(self.a[t], self.d[t], self.x[t])

    def states(self):
        return [self.state(t) for t in range(self.T + 1)]

    def controls(self):
        """(T, n) array of applied controls; zeros when uncontrolled."""
        if self.u is None:
            return np.zeros((self.T, self.n))
        return self.u

    def aggregate(self):
        """Per-time totals: sum of adopters, sum of dissatisfied, mean opinion."""
        return self.a.sum(axis=1), self.d.sum(axis=1), self.x.mean(axis=1)

    def to_csv(self, path):
        """Columns ``t, a_1..a_n, d_1..d_n, x_1..x_n, u_1..u_n``.

        Row ``t`` carries the control applied at time ``t``; the final row has
        zero controls because nothing is applied after the horizon.
        """
        n, T = self.n, self.T
        u = np.vstack([self.controls(), np.zeros((1, n))])
        header = ["t"] + [f"{v}_{i + 1}" for v in "adxu" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(T + 1):
                row = np.concatenate([self.a[t], self.d[t], self.x[t], u[t]])
                w.writerow([t] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, channel=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
        n = data.shape[1] // 4
        a, d, x, u = (data[:, k * n:(k + 1) * n] for k in range(4))
        return cls(a, d, x, u[:-1], Channel.parse(channel) if channel else None)


Policy = Union[None, Sequence[ControlInput], np.ndarray, Callable[[int, State], Optional[ControlInput]]]


def simulate(s0, p, T, policy=None, channel=None):
    """Roll the model forward ``T`` steps.

    ``policy`` may be ``None``; a sequence of :class:`ControlInput`; a
    ``(T, n)`` array together with ``channel``; or a callable
    ``policy(t, state)`` returning a control or ``None``.
    """
    if T < 0:
        raise ValidationError("T must be nonnegative", field="T")
    if isinstance(policy, np.ndarray):
        if channel is None:
            raise ValidationError("an array policy needs a channel", field="channel")
        ch = Channel.parse(channel)
        policy = [ControlInput(row, ch) for row in np.atleast_2d(policy)]
    if policy is not None and not callable(policy) and len(policy) < T:
        raise ValidationError(f"policy has {len(policy)} controls, need {T}", field="policy")

    n = p.n
    A = np.empty((T + 1, n))
    D = np.empty((T + 1, n))
    X = np.empty((T + 1, n))
    U = np.zeros((T, n))
    used_channel = Channel.parse(channel) if channel is not None else None
    A[0], D[0], X[0] = s0.a, s0.d, s0.x
    state = s0
    for t in range(T):
        ctrl = None
        if policy is not None:
            ctrl = policy(t, state) if callable(policy) else policy[t]
        if ctrl is not None:
            U[t] = ctrl.u
            used_channel = ctrl.channel
        state = step(state, p, ctrl, step_index=t)
        A[t + 1], D[t + 1], X[t + 1] = state.a, state.d, state.x
    return Trajectory(A, D, X, U if policy is not None else None, used_channel)


def step_jacobian(a, d, x, p, u=None, channel=None):
    """Dense Jacobians of :func:`advance` in stacked coordinates ``(a, d, x)``.

    Returns ``(Jz, Ju)`` of shapes ``(3n, 3n)`` and ``(3n, n)``.
    """
    n = p.n
    beta, delta = _effective_rates(p, u, channel)
    W, Wt = p.W.weights, p.Wt.weights
    s = 1.0 - a - d
    Wa = W @ a
    Jz = np.zeros((3 * n, 3 * n))
    ia, id_, ix = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    Jz[ia, ia] = np.diag(1.0 - delta - beta * x * Wa) + (beta * x * s)[:, None] * W
    Jz[ia, id_] = np.diag(-beta * x * Wa)
    Jz[ia, ix] = np.diag(beta * s * Wa)
    Jz[id_, ia] = np.diag(delta - p.theta * (1.0 - x))
    Jz[id_, id_] = np.diag(1.0 - p.gamma * x - p.theta * (1.0 - x))
    Jz[id_, ix] = np.diag(-p.gamma * d - p.theta * s)
    Jz[ix, ia] = p.xi[:, None] * W
    Jz[ix, ix] = p.lam[:, None] * Wt
    Ju = np.zeros((3 * n, n))
    if channel is Channel.OPINION:
        Ju[ix] = np.diag(p.anchor_weight)
    elif channel is Channel.ADOPTION_RATE:
        Ju[ia] = np.diag(p.beta * x * s * Wa)
    elif channel is Channel.DISSATISFACTION:
        Ju[ia] = np.diag(p.delta * a)
        Ju[id_] = np.diag(-p.delta * a)
    return Jz, Ju


def _effective_rates(p, u, channel):
    if u is None or channel is None:
        return p.beta, p.delta
    if channel is Channel.ADOPTION_RATE:
        return p.beta * (1.0 + u), p.delta
    if channel is Channel.DISSATISFACTION:
        return p.beta, p.delta * (1.0 - u)
    return p.beta, p.delta


def step_vjp(a, d, x, p, u, channel, lam_a, lam_d, lam_x):
    """Transposed Jacobian products of :func:`advance`.

    Given cotangents on ``(a+, d+, x+)`` returns cotangents on ``(a, d, x)``
    and on ``u``, without forming the Jacobian.
    """
    beta, delta = _effective_rates(p, u, channel)
    W, Wt = p.W.weights, p.Wt.weights
    s = 1.0 - a - d
    Wa = W @ a
    bx = beta * x
    ga = (1.0 - delta - bx * Wa) * lam_a + W.T @ (bx * s * lam_a)
    ga += (delta - p.theta * (1.0 - x)) * lam_d + W.T @ (p.xi * lam_x)
    gd = -bx * Wa * lam_a + (1.0 - p.gamma * x - p.theta * (1.0 - x)) * lam_d
    gx = beta * s * Wa * lam_a - (p.gamma * d + p.theta * s) * lam_d + Wt.T @ (p.lam * lam_x)
    if channel is Channel.OPINION:
        gu = p.anchor_weight * lam_x
    elif channel is Channel.ADOPTION_RATE:
        gu = p.beta * x * s * Wa * lam_a
    elif channel is Channel.DISSATISFACTION:
        gu = p.delta * a * (lam_a - lam_d)
    else:
        gu = np.zeros_like(a)
    return ga, gd, gx, gu

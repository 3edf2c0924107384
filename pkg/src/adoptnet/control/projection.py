"""Euclidean projection onto the budgeted box ``{0 <= u <= ub, sum(u) <= C}``."""
import numpy as np


def project_budget_box(v, C, ub):
    """Project ``v`` onto ``{0 <= u <= ub, 1'u <= C}``.

    The projection is ``clip(v - tau, 0, ub)`` for the smallest ``tau >= 0``
    meeting the budget.  ``sum(clip(v - tau, 0, ub))`` is piecewise linear in
    ``tau`` with kinks at ``v_i`` and ``v_i - ub_i``, so ``tau`` is found
    exactly by locating the bracketing kinks and interpolating.
    """
    v = np.asarray(v, dtype=float)
    return project_rows(v[None, :], C, ub)[0]


def project_rows(V, C, ub, weights=None):
    """Row-wise :func:`project_budget_box` for a ``(m, n)`` array.

    With ``weights`` (positive, broadcastable to ``V``) each row is projected
    in the metric ``sum_i w_i (u_i - v_i)^2``; the solution is then
    ``clip(v - tau / w, 0, ub)``.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if C < 0:
        raise ValueError("budget must be nonnegative")
    ub = np.minimum(np.broadcast_to(np.asarray(ub, dtype=float), V.shape), C)
    if np.any(ub < 0):
        raise ValueError("upper bounds must be nonnegative")
    out = np.minimum(np.maximum(V, 0.0), ub)
    over = out.sum(axis=1) > C
    if not over.any():
        return out

    Vo, Uo = V[over], ub[over]
    if weights is None:
        Wo = np.ones_like(Vo)
    else:
        Wo = np.broadcast_to(np.asarray(weights, dtype=float), V.shape)[over]
    kinks = np.sort(np.concatenate([Wo * (Vo - Uo), Wo * Vo], axis=1), axis=1)
    # mass[k, j]: budget used at tau = kinks[k, j]
    shifted = Vo[:, None, :] - kinks[:, :, None] / Wo[:, None, :]
    mass = np.minimum(np.maximum(shifted, 0.0), Uo[:, None, :]).sum(axis=2)
    j = np.maximum(np.argmax(mass <= C, axis=1), 1)
    rows = np.arange(len(j))
    t0, t1 = kinks[rows, j - 1], kinks[rows, j]
    m0, m1 = mass[rows, j - 1], mass[rows, j]
    frac = np.where(m0 > m1, (m0 - C) / np.where(m0 > m1, m0 - m1, 1.0), 0.0)
    tau = np.maximum(t0 + (t1 - t0) * np.clip(frac, 0.0, 1.0), 0.0)
    out[over] = np.minimum(np.maximum(Vo - tau[:, None] / Wo, 0.0), Uo)
    return out

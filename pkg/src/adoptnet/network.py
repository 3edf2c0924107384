"""Weighted digraphs for the physical and social layers.

Both layers are row-stochastic, irreducible nonnegative matrices.  A
:class:`Network` is only ever produced by :func:`build_network`, which checks
all three properties, so downstream code can rely on them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    NegativeWeight,
    NoConvergence,
    NotStronglyConnected,
    RowSumViolation,
    ValidationError,
)

ZERO_WEIGHT = 1e-15


@dataclass(frozen=True, eq=False)
class Network:
    """Validated row-stochastic, strongly connected weight matrix."""

    n: int
    weights: np.ndarray
    row_sum_tolerance: float = 1e-9

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.n, self.weights.tobytes()))

    def neighbors(self, i):
        """Indices j with a strictly positive weight on arc (i, j)."""
        return np.flatnonzero(self.weights[i] > ZERO_WEIGHT)


def _positive_graph(weights):
    return csr_matrix((weights > ZERO_WEIGHT).astype(np.int8))


def build_network(weights, tolerance=1e-9):
    """Validate ``weights`` and wrap it in an immutable :class:`Network`.

    Raises
    ------
    ValidationError
        Matrix not square or has non-finite entries.
    NegativeWeight, RowSumViolation, NotStronglyConnected
        One of the three network invariants fails.
    """
    w = np.array(weights, dtype=float, copy=True)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
        raise ValidationError(f"weight matrix must be square and non-empty, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weight matrix has non-finite entries")
    n = w.shape[0]

    if np.any(w < 0):
        i, j = np.unravel_index(np.argmin(w), w.shape)
        raise NegativeWeight(int(i), int(j), float(w[i, j]))

    dev = np.abs(w.sum(axis=1) - 1.0)
    worst = int(np.argmax(dev))
    if dev[worst] > tolerance:
        raise RowSumViolation(worst, float(w[worst].sum()), tolerance)

    if n > 1:
        graph = _positive_graph(w)
        n_comp, _ = connected_components(graph, directed=True, connection="strong")
        if n_comp > 1:
            raise NotStronglyConnected(*_unreachable_pair(graph))

    w.setflags(write=False)
    return Network(n=n, weights=w, row_sum_tolerance=tolerance)


def _unreachable_pair(graph):
    n = graph.shape[0]
    for source in range(n):
        reached = breadth_first_order(graph, source, directed=True, return_predecessors=False)
        if len(reached) < n:
            missing = np.setdiff1d(np.arange(n), reached)
            return source, int(missing[0])
    raise AssertionError("graph is strongly connected")


def reaches(weights, targets):
    """Boolean mask of nodes that have a directed path into ``targets``.

    A node in ``targets`` trivially reaches itself.
    """
    targets = np.asarray(targets, dtype=bool)
    reverse = _positive_graph(np.asarray(weights)).T.tocsr()
    mask = targets.copy()
    for t in np.flatnonzero(targets):
        mask[breadth_first_order(reverse, t, directed=True, return_predecessors=False)] = True
    return mask


def spectral_radius(M, tol=1e-12, max_iters=10_000):
    """Spectral radius of a nonnegative square matrix.

    Power iteration from the all-ones vector, stopped by the Collatz-Wielandt
    bracket ``min(Mv/v) <= rho <= max(Mv/v)`` once its width falls below
    ``tol`` relative to the upper end.  For irreducible inputs the bracket
    closes (Perron-Frobenius).  Reducible or periodic inputs can stall; those
    are finished with a dense eigenvalue computation.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {M.shape}")
    if np.any(M < 0):
        raise ValidationError("spectral_radius expects a nonnegative matrix")
    if M.shape[0] == 1:
        return float(M[0, 0])

    v = np.ones(M.shape[0])
    best_width = np.inf
    last_improvement = 0
    for k in range(max_iters):
        w = M @ v
        if np.all(v > 0):
            ratios = w / v
            lo, hi = ratios.min(), ratios.max()
            width = hi - lo
            if width <= tol * max(hi, 1e-300):
                return float(0.5 * (lo + hi))
            if width < 0.5 * best_width:
                best_width = width
                last_improvement = k
            elif k - last_improvement > 200:
                break
        norm = w.max()
        if norm == 0.0:
            return 0.0
        v = w / norm
    return _dense_spectral_radius(M)


def _dense_spectral_radius(M):
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"power iteration stalled and eigvals failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def random_strongly_connected(n, extra_edge_density=0.0, seed=0):
    """Random strongly connected row-stochastic network.

    A directed Hamiltonian cycle over a random node order guarantees strong
    connectivity; every other arc (self-loops included) is added
    independently with probability ``extra_edge_density``.  Weights are
    uniform on (0, 1] before row normalisation.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    mask = np.zeros((n, n), dtype=bool)
    mask[order, np.roll(order, -1)] = True
    extra = rng.random((n, n)) < extra_edge_density
    mask |= extra
    w = np.where(mask, 1.0 - rng.random((n, n)), 0.0)
    w /= w.sum(axis=1, keepdims=True)
    return build_network(w)


def read_matrix_csv(path):
    """Headerless CSV, one matrix row per line."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def write_matrix_csv(path, matrix):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])

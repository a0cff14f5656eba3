"""Degree bounds for a spectral sparsifier, ranked by ascending degree.

Notation follows the usual ordering ``d_1 <= ... <= d_n`` of (weighted)
degrees.  ``l_i`` is the set of the ``n - i + 1`` highest-degree vertices and
``s_i`` the ``i`` lowest; ``Delta(G_l_i)`` and ``delta(G_s_i)`` are the max and
min degree inside the induced subgraphs.  The same subgraph quantities for the
unknown sparsifier are bounded using the per-edge weight bounds: upper weights
for the max-degree side, lower weights for the min-degree side.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..graph import WeightedGraph
from .sampling import default_sample_count, sampling_beta, weight_bounds

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoundSet:
    """Per-edge weight bounds and per-rank degree bounds.

    ``delta_plus[i]`` / ``delta_minus[i]`` bound the degree of rank ``i + 1``
    (0-based arrays); ``order[i]`` is the vertex holding that rank in ``G``.
    """

    w_plus: np.ndarray
    w_minus: np.ndarray
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    epsilon: float
    q_samples: float
    beta: float
    order: np.ndarray
    t: np.ndarray
    a_ub: float
    Delta: np.ndarray          # Delta(G_l_i)
    delta: np.ndarray          # delta(G_s_i)
    Delta_ub: np.ndarray       # upper bound on Delta(Gbar_l_i)
    delta_lb: np.ndarray       # lower bound on delta(Gbar_s_i)

    @property
    def eps1(self) -> float:
        n, m = self.order.size, self.w_plus.size
        return float(np.log(n * m))

    def vertex_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) degree bound for each vertex, indexed by vertex id."""
        lo = np.empty_like(self.delta_minus)
        hi = np.empty_like(self.delta_plus)
        lo[self.order] = self.delta_minus
        hi[self.order] = self.delta_plus
        return lo, hi


def degree_order(g: WeightedGraph) -> np.ndarray:
    return np.argsort(g.degrees(), kind="stable")


def _nested_subgraph_extremes(W: np.ndarray, order: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For ranks i = 1..n: max degree in G[l_i] and min degree in G[s_i]."""
    n = order.size
    Wo = W[np.ix_(order, order)]
    top = np.empty(n)
    bottom = np.empty(n)
    for i in range(1, n + 1):
        hi = Wo[i - 1:, i - 1:]
        top[i - 1] = hi.sum(axis=1).max()
        lo = Wo[:i, :i]
        bottom[i - 1] = lo.sum(axis=1).min()
    return top, bottom


def _weight_matrix(g: WeightedGraph, w: np.ndarray) -> np.ndarray:
    W = np.zeros((g.n, g.n))
    W[g.u, g.v] = w
    W[g.v, g.u] = w
    return W


def degree_bounds(g: WeightedGraph, epsilon: float, w_plus: np.ndarray, w_minus: np.ndarray,
                  q_samples: float = np.nan, beta: float = np.nan) -> BoundSet:
    """Degree bounds of an ``epsilon``-spectral sparsifier of ``g``.

    The raw lower/upper bounds per rank come from interlacing the Laplacian
    spectrum with the degree-based eigenvalue bounds; each is then refined by
    the quadratic-form bound ``(1 -/+ eps) d_i``.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    n = g.n
    if n < 2:
        raise ValueError("need at least two vertices")
    w_plus = np.asarray(w_plus, dtype=float)
    w_minus = np.asarray(w_minus, dtype=float)
    order = degree_order(g)
    d = g.degrees()[order]
    a = float(g.w.max())
    a_ub = float(w_plus.max())

    Delta, delta = _nested_subgraph_extremes(_weight_matrix(g, g.w), order)
    Delta_ub, _ = _nested_subgraph_extremes(_weight_matrix(g, w_plus), order)
    _, delta_lb = _nested_subgraph_extremes(_weight_matrix(g, w_minus), order)
    # single-vertex subgraphs have no edges
    Delta[-1] = Delta_ub[-1] = 0.0
    delta[0] = delta_lb[0] = 0.0

    e = epsilon
    upper = np.empty(n)
    lower = np.empty(n)
    # rank 1 (index 0)
    lower[0] = d[1] - Delta[1] * (1 - e) - a
    upper[0] = d[0] * (1 + e)
    # ranks 2..n-1 (indices 1..n-2); formulas use 1-based i = idx + 1
    for idx in range(1, n - 1):
        i = idx + 1
        lower[idx] = (d[idx + 1] - Delta[idx + 1]) * (1 - e) - i * a_ub + delta_lb[idx]
        upper[idx] = (1 + e) * (d[idx - 1] + (i - 1) * a - delta[idx - 1]) + Delta_ub[idx]
    # rank n
    lower[n - 1] = d[n - 1] * (1 - e)
    upper[n - 1] = (1 + e) * (d[n - 2] + (n - 1) * a - delta[n - 2])

    delta_minus = np.maximum(lower, (1 - e) * d)
    delta_plus = np.minimum(upper, (1 + e) * d)
    return BoundSet(
        w_plus=w_plus, w_minus=w_minus, delta_plus=delta_plus, delta_minus=delta_minus,
        epsilon=float(epsilon), q_samples=float(q_samples), beta=float(beta), order=order,
        t=w_plus - g.w, a_ub=a_ub, Delta=Delta, delta=delta, Delta_ub=Delta_ub,
        delta_lb=delta_lb,
    )


def compute_bounds(g: WeightedGraph, epsilon: float, q: float | None = None) -> BoundSet:
    """Weight bounds for every edge followed by the degree bounds."""
    if q is None:
        q = default_sample_count(g.n, epsilon)
    beta = sampling_beta(g)
    w_plus, w_minus, _ = weight_bounds(g, q, beta)
    return degree_bounds(g, epsilon, w_plus, w_minus, q_samples=q, beta=beta)


def sorted_degrees_within(bounds: BoundSet, degrees: np.ndarray, tol: float = 0.0) -> bool:
    """Do the ascending degrees of some graph respect the per-rank bounds?"""
    d = np.sort(degrees)
    return bool(np.all(d >= bounds.delta_minus - tol) and np.all(d <= bounds.delta_plus + tol))

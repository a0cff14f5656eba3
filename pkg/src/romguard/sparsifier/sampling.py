"""Resistance sampling and the per-edge concentration bound on sampled weights."""
from __future__ import annotations

import numpy as np

from ..graph import WeightedGraph, effective_resistances


def sampling_probabilities(g: WeightedGraph) -> np.ndarray:
    """``p_e = w_e R_e / (n - 1)``; sums to one by Foster's theorem."""
    p = g.w * effective_resistances(g) / (g.n - 1)
    return p / p.sum()


def sample_sparsify(g: WeightedGraph, q: int, seed: int | None = None) -> WeightedGraph:
    """Draw ``q`` edges with replacement, each pick adding ``w_e / (q p_e)``."""
    if q < 1:
        raise ValueError("need at least one sample")
    p = sampling_probabilities(g)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(q, p)
    return g.with_weights(counts * g.w / (q * p))


def sampling_beta(g: WeightedGraph, p: np.ndarray | None = None) -> float:
    """Smallest ``beta`` with ``p_uv >= beta / (n min(deg u, deg v))`` on every edge."""
    if p is None:
        p = sampling_probabilities(g)
    d = g.degrees()
    return float(g.n * np.min(p * np.minimum(d[g.u], d[g.v])))


def weight_bound_t(w_uv: float, deg_u: float, deg_v: float, n: int, m: int, q: float,
                   beta: float) -> float:
    """Deviation ``t`` with ``P(mean sampled weight - w_uv >= t) <= 1/(nm)``.

    From Bernstein's inequality with ``|X_i| <= c1 = w_uv n c2 / beta`` and
    ``c2 = min(deg u, deg v)``; ``eps1 = log(n m)``.
    """
    args = (w_uv, deg_u, deg_v, n, m, q, beta)
    if any(not np.isfinite(a) or a <= 0 for a in args):
        raise ValueError("all inputs to the weight bound must be positive")
    eps1 = np.log(n * m)
    c1 = w_uv * n * min(deg_u, deg_v) / beta
    lin = eps1 * c1 / (3.0 * q)
    return float(lin + np.sqrt(2.0 * eps1 * w_uv * c1 / q + lin * lin))


def weight_bounds(g: WeightedGraph, q: float, beta: float | None = None
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-edge ``(w_plus, w_minus, t)`` with ``w± = w ± t`` (lower clipped at 0)."""
    if beta is None:
        beta = sampling_beta(g)
    d = g.degrees()
    t = np.array([weight_bound_t(w, d[a], d[b], g.n, g.m, q, beta)
                  for a, b, w in zip(g.u, g.v, g.w)])
    return g.w + t, np.maximum(g.w - t, 0.0), t


def default_sample_count(n: int, epsilon: float) -> int:
    """``24 n log n / eps^2`` samples, the usual spectral-sparsifier budget."""
    return int(np.ceil(24.0 * n * np.log(n) / epsilon**2))

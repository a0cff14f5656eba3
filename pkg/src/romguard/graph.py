"""Weighted undirected graphs and their matrix views.

Everything is dense: the graphs handled here have at most a few hundred
vertices, and the only sparse products (the sparsified Laplacian inside the
filter) are formed by the caller with ``scipy.sparse`` when needed.
"""
from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Simple undirected graph with strictly positive edge weights.

    Edges are stored as parallel arrays sorted by ``(u, v)`` with ``u < v``.
    """

    n: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    _lap_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        v = np.asarray(self.v, dtype=np.int64)
        w = np.asarray(self.w, dtype=float)
        if not (u.shape == v.shape == w.shape) or u.ndim != 1:
            raise GraphError("edge arrays must be 1-d and of equal length")
        if self.n < 1:
            raise GraphError("graph needs at least one vertex")
        if np.any(u == v):
            raise GraphError("self-loops are not allowed")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        if lo.size and (lo.min() < 0 or hi.max() >= self.n):
            raise GraphError("vertex index out of range")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise GraphError("edge weights must be finite and strictly positive")
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1 and np.any((np.diff(lo) == 0) & (np.diff(hi) == 0)):
            raise GraphError("duplicate edges are not allowed")
        for name, arr in (("u", lo), ("v", hi), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> WeightedGraph:
        edges = list(edges)
        if not edges:
            return cls(n, np.zeros(0, int), np.zeros(0, int), np.zeros(0))
        u, v, w = zip(*edges)
        return cls(n, np.array(u), np.array(v), np.array(w, dtype=float))

    @property
    def m(self) -> int:
        return int(self.w.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def edge_index(self, a: int, b: int) -> int:
        a, b = min(a, b), max(a, b)
        hits = np.flatnonzero((self.u == a) & (self.v == b))
        if hits.size == 0:
            raise KeyError((a, b))
        return int(hits[0])

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        A[self.u, self.v] = self.w
        A[self.v, self.u] = self.w
        return A

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        np.add.at(d, self.u, self.w)
        np.add.at(d, self.v, self.w)
        return d

    def incidence(self) -> IncidenceView:
        return incidence(self)

    def laplacian(self, kind: str = "combinatorial") -> np.ndarray:
        return laplacian(self, kind).matrix

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp, _ = connected_components(self.adjacency() > 0, directed=False)
        return ncomp == 1

    def with_weights(self, w: np.ndarray, drop_zero: bool = True) -> WeightedGraph:
        """Same edge set with new weights; zero-weight edges are dropped."""
        w = np.asarray(w, dtype=float)
        if w.shape != self.w.shape:
            raise GraphError("weight vector length does not match edge count")
        keep = w > 0 if drop_zero else np.ones_like(w, dtype=bool)
        return WeightedGraph(self.n, self.u[keep], self.v[keep], w[keep])


@dataclass(frozen=True)
class LaplacianView:
    kind: str
    matrix: np.ndarray


@dataclass(frozen=True)
class IncidenceView:
    """Signed incidence ``B`` (+1 at ``u``, -1 at ``v``), unsigned ``Q`` and weights."""

    B: np.ndarray
    Q: np.ndarray
    w: np.ndarray


def incidence(g: WeightedGraph) -> IncidenceView:
    rows = np.arange(g.m)
    B = np.zeros((g.m, g.n))
    B[rows, g.u] = 1.0
    B[rows, g.v] = -1.0
    return IncidenceView(B=B, Q=np.abs(B), w=g.w.copy())


def laplacian(g: WeightedGraph, kind: str = "combinatorial") -> LaplacianView:
    """Combinatorial ``L = D - A`` or normalized ``D^-1/2 L D^-1/2``.

    Isolated vertices get a zero row in the normalized Laplacian.
    """
    if kind in g._lap_cache:
        return g._lap_cache[kind]
    A = g.adjacency()
    d = A.sum(axis=1)
    L = np.diag(d) - A
    if kind == "combinatorial":
        M = L
    elif kind == "normalized":
        s = np.zeros_like(d)
        s[d > 0] = 1.0 / np.sqrt(d[d > 0])
        M = s[:, None] * L * s[None, :]
    else:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    M = 0.5 * (M + M.T)
    M.setflags(write=False)
    view = LaplacianView(kind, M)
    g._lap_cache[kind] = view
    return view


def generate_er(n: int, p: float, seed: int | None = None, max_retries: int = 100) -> WeightedGraph:
    """Unit-weight Erdős–Rényi graph G(n, p), redrawn until connected."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0 < p <= 1:
        raise ValueError("edge probability must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        keep = rng.random(iu.size) < p
        g = WeightedGraph(n, iu[keep], iv[keep], np.ones(int(keep.sum())))
        if g.is_connected():
            return g
    raise GraphError(f"no connected G({n}, {p}) after {max_retries} draws")


def complete_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    iu, iv = np.triu_indices(n, k=1)
    return WeightedGraph(n, iu, iv, np.full(iu.size, float(weight)))


def laplacian_pinv(g: WeightedGraph) -> np.ndarray:
    """Pseudoinverse of the combinatorial Laplacian (null mode dropped)."""
    if not g.is_connected():
        raise GraphError("effective resistance needs a connected graph")
    evals, evecs = np.linalg.eigh(laplacian(g).matrix)
    # connected => exactly one zero eigenvalue, the smallest
    inv = np.zeros_like(evals)
    inv[1:] = 1.0 / evals[1:]
    return (evecs * inv) @ evecs.T


def effective_resistances(g: WeightedGraph) -> np.ndarray:
    """``R_e = (chi_u - chi_v)^T L^+ (chi_u - chi_v)`` for every edge."""
    Lp = laplacian_pinv(g)
    return Lp[g.u, g.u] + Lp[g.v, g.v] - 2.0 * Lp[g.u, g.v]


def effective_resistance(g: WeightedGraph, a: int, b: int) -> float:
    Lp = laplacian_pinv(g)
    return float(Lp[a, a] + Lp[b, b] - 2.0 * Lp[a, b])


def write_edgelist(g: WeightedGraph, path: str | Path) -> None:
    lines = [f"{g.n} {g.m}"]
    lines += [f"{a} {b} {c!r}" for a, b, c in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path: str | Path) -> WeightedGraph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise GraphError(f"{path}: empty edge list")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise GraphError(f"{path}: header says {m} edges, found {len(body)}")
    return WeightedGraph.from_edges(n, ((int(a), int(b), float(c)) for a, b, c in body))

"""Sparse graph recovery by trajectory-matching dynamic optimization.

The decision variable is a multiplier ``gamma_j >= 0`` per edge of the
original graph.  The objective is::

    1/2 sum_c || z_c(gamma) - zref_c ||^2 + alpha * sum_j gamma_j

over checkpoint states ``z_c`` of the reduced model integrated by collocation,
where ``zref`` comes from the same model on the original graph.  Because
``gamma >= 0`` the L1 norm is the plain sum, so no positive/negative split is
needed.  Collocation equalities are eliminated by forward simulation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..collocation import CollocationScheme
from ..dynamics import BrusselatorSystem
from ..graph import WeightedGraph, write_edgelist
from ..pod import PodBasis
from .barrier import BarrierError, LinearConstraints, barrier_minimize
from .bounds import BoundSet
from .shooting import ReducedModel, brusselator_model, diffusion_model, shoot

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-5
FEAS_TOL = 1e-8


class SparsifierError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparsifierOutput:
    gamma_star: np.ndarray
    w1_star: np.ndarray       # on the original edge list, pruned entries zero
    graph: WeightedGraph      # original graph
    objective: float
    alpha: float
    iterations: int
    converged: bool
    widened: int = 0
    params: dict = field(default_factory=dict)

    @property
    def edges_kept(self) -> int:
        return int(np.count_nonzero(self.w1_star))

    @property
    def sparse_graph(self) -> WeightedGraph:
        return self.graph.with_weights(self.w1_star, drop_zero=True)

    @property
    def L1(self) -> np.ndarray:
        """``B^T diag(w1*) B`` over the original incidence."""
        B = self.graph.incidence().B
        return (B.T * self.w1_star) @ B

    def manifest(self) -> dict:
        out = {
            "alpha": self.alpha,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "edges_original": self.graph.m,
            "edges_kept": self.edges_kept,
            "bounds_widened": self.widened,
        }
        out.update(self.params)
        return out

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_edgelist(self.sparse_graph, d / "sparse_graph.txt")
        np.savetxt(d / "gamma.csv", self.gamma_star[:, None], delimiter=",", fmt="%.17g")
        (d / "sparsifier_manifest.json").write_text(
            json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path, graph: WeightedGraph) -> SparsifierOutput:
        """Rebuild from ``save`` output; ``graph`` is the original graph."""
        d = Path(directory)
        man = json.loads((d / "sparsifier_manifest.json").read_text())
        gamma = np.loadtxt(d / "gamma.csv", delimiter=",", ndmin=1)
        if gamma.size != graph.m:
            raise SparsifierError("multiplier count does not match the original graph")
        w1 = graph.w * gamma
        w1[w1 <= man["prune_tol"]] = 0.0
        core = {"alpha", "objective", "iterations", "converged", "edges_original",
                "edges_kept", "bounds_widened"}
        params = {k: v for k, v in man.items() if k not in core}
        return cls(gamma, w1, graph, man["objective"], man["alpha"], man["iterations"],
                   man["converged"], man["bounds_widened"], params)


def degree_matrix(g: WeightedGraph) -> np.ndarray:
    """``Q^T diag(w)``: maps multipliers to weighted vertex degrees."""
    Q = g.incidence().Q
    return Q.T * g.w


def _widen(lo: np.ndarray, hi: np.ndarray, value: np.ndarray, rel: float = 1e-3
           ) -> tuple[np.ndarray, np.ndarray, int]:
    """Relax bounds that ``value`` violates or touches by a small relative margin."""
    margin = rel * np.maximum(np.abs(value), 1.0)
    lo_bad = value - lo < margin
    hi_bad = hi - value < margin
    lo = np.where(lo_bad, value - margin, lo)
    hi = np.where(hi_bad, value + margin, hi)
    return lo, hi, int(lo_bad.sum() + hi_bad.sum())


def _make_objective(rm: ReducedModel, scheme: CollocationScheme, z0s, targets, alpha, stride):
    target = np.concatenate([t.ravel() for t in targets])
    cache = {}

    def fun(gamma, derivs):
        warm = cache.get("nodes")
        res = shoot(rm, scheme, z0s, gamma, stride=stride, sensitivities=derivs, warm=warm)
        r = np.concatenate([c.ravel() for c in res.checkpoints]) - target
        f = 0.5 * float(r @ r) + alpha * float(np.sum(gamma))
        if not derivs:
            return f
        cache["nodes"] = res.nodes
        J = np.concatenate([s.reshape(-1, rm.m) for s in res.sensitivities])
        return f, J.T @ r + alpha, J.T @ J

    return fun


def checkpoint_objective(rm: ReducedModel, scheme: CollocationScheme, z0s, targets,
                         gamma: np.ndarray, stride: int = 1) -> float:
    """``1/2 sum ||z_c(gamma) - target_c||^2`` at the strided element endpoints."""
    res = shoot(rm, scheme, z0s, gamma, stride=stride)
    return 0.5 * sum(float(np.sum((c - t) ** 2)) for c, t in zip(res.checkpoints, targets))


def _solve(rm, scheme, z0s, g, alpha, stride, cons, widened, params, prune_tol, mu,
           inner_tol):
    ones = np.ones(g.m)
    targets = shoot(rm, scheme, z0s, ones, stride=stride).checkpoints
    fun = _make_objective(rm, scheme, z0s, targets, alpha, stride)
    try:
        res = barrier_minimize(fun, ones, cons, mu=mu, inner_tol=inner_tol)
    except BarrierError as exc:
        raise SparsifierError(str(exc)) from exc
    if not res.converged:
        log.warning("barrier method stopped before reaching the duality-gap target")
    gamma = np.maximum(res.x, 0.0)
    w1 = g.w * gamma
    w1[w1 <= prune_tol] = 0.0
    viol = cons.max_violation(res.x)
    if viol > FEAS_TOL:
        raise SparsifierError(f"solution violates its constraints by {viol:.2e}")
    return SparsifierOutput(gamma, w1, g, float(res.fun), float(alpha),
                            res.newton_iterations, res.converged, widened, params)


def dynopt_linear(
    basis: PodBasis,
    g: WeightedGraph,
    scheme: CollocationScheme,
    bounds: BoundSet,
    z0s,
    alpha: float,
    m1: int = 1,
    normalized: bool = True,
    prune_tol: float = PRUNE_TOL,
    mu: float = 10.0,
    inner_tol: float = 1e-8,
) -> SparsifierOutput:
    """Sparsify a diffusion graph under weight and degree bounds.

    ``z0s`` are the reduced initial states of the training trajectories.
    """
    rm = ReducedModel(diffusion_model(g, normalized), basis)
    lb = np.maximum(bounds.w_minus / g.w, 0.0)
    ub = bounds.w_plus / g.w
    if np.any(lb >= 1.0) or np.any(ub <= 1.0):
        raise SparsifierError("weight bounds exclude the original graph")
    M = degree_matrix(g)
    d = M @ np.ones(g.m)
    dlo, dhi = bounds.vertex_bounds()
    dlo, dhi, widened = _widen(dlo, dhi, d)
    if widened:
        log.warning("widened %d degree bounds so the original graph is strictly feasible",
                    widened)
    cons = LinearConstraints(lb, ub, np.vstack([M, -M]), np.concatenate([dhi, -dlo]))
    params = {"epsilon": bounds.epsilon, "q_samples": bounds.q_samples, "m1": m1,
              "prune_tol": prune_tol}
    return _solve(rm, scheme, z0s, g, alpha, m1, cons, widened, params, prune_tol, mu,
                  inner_tol)


def dynopt_rd(
    basis: PodBasis,
    g: WeightedGraph,
    sys: BrusselatorSystem,
    scheme: CollocationScheme,
    z0s,
    tau_L: float,
    alpha: float,
    m1: int = 1,
    prune_tol: float = PRUNE_TOL,
    mu: float = 10.0,
    inner_tol: float = 1e-8,
) -> SparsifierOutput:
    """Sparsify the coupling graph of a Brusselator network under a minimum degree."""
    rm = ReducedModel(brusselator_model(g, sys), basis)
    M = degree_matrix(g)
    d = M @ np.ones(g.m)
    if tau_L < 0:
        raise SparsifierError("minimum degree must be nonnegative")
    if tau_L >= d.min():
        raise SparsifierError(
            f"minimum degree {tau_L} is not below the smallest degree {d.min()}")
    lb = np.zeros(g.m)
    ub = np.full(g.m, np.inf)
    cons = LinearConstraints(lb, ub, -M, np.full(g.n, -float(tau_L)))
    params = {"tau_L": float(tau_L), "m1": m1, "prune_tol": prune_tol}
    return _solve(rm, scheme, z0s, g, alpha, m1, cons, 0, params, prune_tol, mu, inner_tol)

"""Small neural-ODE surrogate trained through an Euler discretization by the adjoint method.

States are rows.  The field is::

    nn(x) = sinh(((x theta1 + b1) theta2) theta3 + b3)

with ``theta1`` (d x w), ``theta2`` (w x w), ``theta3`` (w x d).
"""
from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SINH_LIMIT = 700.0
_ORDER = ("theta1", "theta2", "theta3", "b1", "b3")


class NodeError(RuntimeError):
    pass


class NodeOverflow(NodeError, ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class NodeParams:
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    b1: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        d, w = self.theta1.shape
        if (self.theta2.shape != (w, w) or self.theta3.shape != (w, d)
                or self.b1.shape != (w,) or self.b3.shape != (d,)):
            raise NodeError("inconsistent parameter shapes")

    @property
    def dim(self) -> int:
        return self.theta1.shape[0]

    @property
    def width(self) -> int:
        return self.theta1.shape[1]

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: getattr(self, k).shape for k in _ORDER}

    @property
    def size(self) -> int:
        return sum(getattr(self, k).size for k in _ORDER)

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in _ORDER])

    @classmethod
    def unflatten(cls, theta: np.ndarray, dim: int = 10, width: int = 50) -> NodeParams:
        theta = np.asarray(theta, dtype=float)
        shapes = _shapes(dim, width)
        total = sum(math.prod(s) for s in shapes.values())
        if theta.shape != (total,):
            raise NodeError(f"expected {total} parameters, got {theta.shape}")
        parts, i = {}, 0
        for k in _ORDER:
            size = math.prod(shapes[k])
            parts[k] = theta[i:i + size].reshape(shapes[k]).copy()
            i += size
        return cls(**parts)

    @classmethod
    def zeros(cls, dim: int = 10, width: int = 50) -> NodeParams:
        return cls(**{k: np.zeros(s) for k, s in _shapes(dim, width).items()})

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int = 10, width: int = 50,
             std: float = 0.01) -> NodeParams:
        return cls(**{k: std * rng.standard_normal(s) for k, s in _shapes(dim, width).items()})

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "node_params.csv", self.flatten()[:, None], delimiter=",", fmt="%.17g")
        manifest = {"order": list(_ORDER), "shapes": {k: list(v) for k, v in self.shapes.items()},
                    "size": self.size}
        (d / "node_params.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> NodeParams:
        d = Path(directory)
        man = json.loads((d / "node_params.json").read_text())
        theta = np.loadtxt(d / "node_params.csv", delimiter=",", ndmin=1)
        dim, width = man["shapes"]["theta1"]
        return cls.unflatten(theta, dim, width)


def _shapes(dim: int, width: int) -> dict[str, tuple[int, ...]]:
    return {"theta1": (dim, width), "theta2": (width, width), "theta3": (width, dim),
            "b1": (width,), "b3": (dim,)}


def _pre_activation(params: NodeParams, X: np.ndarray):
    a1 = X @ params.theta1 + params.b1
    a2 = a1 @ params.theta2
    s = a2 @ params.theta3 + params.b3
    if not np.all(np.abs(s) <= SINH_LIMIT):
        raise NodeOverflow("sinh argument out of range")
    return a1, a2, s


def node_eval(params: NodeParams, x: np.ndarray) -> np.ndarray:
    """Field value for one state or a batch of row states."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise NodeError(f"state dimension {x.shape[-1]} does not match {params.dim}")
    return np.sinh(_pre_activation(params, x)[2])


def node_forward(params: NodeParams, x: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler step ``x + dt nn(x)``."""
    return np.asarray(x, dtype=float) + dt * node_eval(params, x)


@dataclass(frozen=True)
class ObservationSet:
    """Time-sorted observations of one trajectory; the first entry is the initial state."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise NodeError("need at least two observations")
        if np.any(np.diff(t) <= 0):
            raise NodeError("observation times must be strictly increasing")
        if np.asarray(self.states).shape[0] != t.size:
            raise NodeError("times and states differ in length")


def _grid(times: np.ndarray, max_dt: float | None):
    """Euler step sizes and the grid index of each observation."""
    dts, obs_idx = [], [0]
    for dt in np.diff(times):
        m = 1 if max_dt is None else max(1, math.ceil(dt / max_dt - 1e-12))
        dts.extend([dt / m] * m)
        obs_idx.append(obs_idx[-1] + m)
    return np.array(dts), np.array(obs_idx)


def _as_sets(observations) -> list[ObservationSet]:
    if isinstance(observations, ObservationSet):
        return [observations]
    return list(observations)


def node_objective(params: NodeParams, observations: ObservationSet | Sequence[ObservationSet],
                   alpha1: float = 0.0, max_dt: float | None = None, gradient: bool = True):
    """``1/2 sum_k ||x_k - xobs_k||^2 + alpha1 ||theta||_1`` and its adjoint gradient.

    Each set is integrated from its first observation; the remaining ones are
    matched.  The L1 subgradient uses ``sign`` with ``sign(0) = 0``.
    """
    theta = params.flatten()
    J = alpha1 * float(np.abs(theta).sum())
    grads = {k: np.zeros_like(getattr(params, k)) for k in _ORDER}
    W1, W2, W3 = params.theta1, params.theta2, params.theta3
    for obs in _as_sets(observations):
        dts, idx = _grid(np.asarray(obs.times, float), max_dt)
        target = np.asarray(obs.states, float)
        xs = np.empty((dts.size + 1, params.dim))
        xs[0] = target[0]
        cache = []
        for j, dt in enumerate(dts):
            a1, a2, s = _pre_activation(params, xs[j])
            xs[j + 1] = xs[j] + dt * np.sinh(s)
            cache.append((a1, a2, s))
        resid = np.zeros_like(xs)
        resid[idx[1:]] = xs[idx[1:]] - target[1:]
        J += 0.5 * float(np.sum(resid * resid))
        if not np.isfinite(J):
            raise NodeError("objective is not finite")
        if not gradient:
            continue
        lam = resid[-1].copy()
        for j in range(dts.size - 1, -1, -1):
            a1, a2, s = cache[j]
            x = xs[j]
            g = dts[j] * lam * np.cosh(s)   # d/ds of dt * lam . sinh(s)
            grads["theta3"] += np.outer(a2, g)
            grads["b3"] += g
            da2 = W3 @ g
            grads["theta2"] += np.outer(a1, da2)
            da1 = W2 @ da2
            grads["theta1"] += np.outer(x, da1)
            grads["b1"] += da1
            lam = lam + W1 @ da1 + resid[j]
    if not gradient:
        return J
    g = np.concatenate([grads[k].ravel() for k in _ORDER]) + alpha1 * np.sign(theta)
    return J, g


def node_train(observations: ObservationSet | Sequence[ObservationSet], alpha1: float = 1e-6,
               steps: int = 300, lr: float = 1e-2, seed: int = 0, init_std: float = 0.01,
               width: int = 50, max_dt: float | None = None, params0: NodeParams | None = None
               ) -> tuple[NodeParams, list[float]]:
    """Gradient descent with backtracking; returns parameters and accepted objective values."""
    sets = _as_sets(observations)
    dim = np.asarray(sets[0].states).shape[1]
    if params0 is None:
        params0 = NodeParams.init(np.random.default_rng(seed), dim, width, init_std)
    theta = params0.flatten()
    unflat = lambda t: NodeParams.unflatten(t, dim, width)
    J, g = node_objective(unflat(theta), sets, alpha1, max_dt)
    history = [J]
    step = lr
    for _ in range(steps):
        accepted = False
        while step > 1e-16:
            cand = theta - step * g
            try:
                Jc = node_objective(unflat(cand), sets, alpha1, max_dt, gradient=False)
            except NodeError:
                Jc = math.inf
            if Jc < J:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta = cand
        J, g = node_objective(unflat(theta), sets, alpha1, max_dt)
        history.append(J)
        step *= 2.0
    return unflat(theta), history

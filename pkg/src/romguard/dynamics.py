"""Full-order vector fields on graphs and explicit integrators.

Vector fields accept either a single state of shape ``(d,)`` or a batch of
states of shape ``(N, d)``; the state is always the last axis.
"""
from __future__ import annotations

import csv
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import WeightedGraph, laplacian

VectorField = Callable[[np.ndarray, float], np.ndarray]


class IntegrationError(FloatingPointError):
    def __init__(self, step: int, msg: str = "non-finite state"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


def _check_dim(x: np.ndarray, dim: int) -> None:
    if x.shape[-1] != dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, system expects {dim}")


@dataclass(frozen=True, eq=False)
class DiffusionSystem:
    """Heat flow ``dF/dt = -Lap F`` with a fixed Laplacian-like operator."""

    lap: np.ndarray

    @classmethod
    def on_graph(cls, g: WeightedGraph, kind: str = "normalized") -> DiffusionSystem:
        return cls(np.array(laplacian(g, kind).matrix))

    @property
    def dim(self) -> int:
        return self.lap.shape[0]

    def __call__(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_dim(x, self.dim)
        return -(x @ self.lap.T)

    def jacobian(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        return -self.lap


@dataclass(frozen=True, eq=False)
class BrusselatorSystem:
    """Brusselator reaction kinetics coupled through a graph Laplacian.

    State layout is ``[x_1..x_n, y_1..y_n]``::

        dx_i = a - (b + d) x_i + c x_i^2 y_i - Dx (L x)_i
        dy_i = b x_i - c x_i^2 y_i - Dy (L y)_i
    """

    lap: np.ndarray
    a: float = 1.0
    b: float = 3.0
    c: float = 1.0
    d: float = 1.0
    Dx: float = 0.1
    Dy: float = 0.1

    def __post_init__(self):
        vals = (self.a, self.b, self.c, self.d, self.Dx, self.Dy)
        if not all(np.isfinite(vals)):
            raise ValueError("Brusselator parameters must be finite")

    @classmethod
    def on_graph(cls, g: WeightedGraph, **params) -> BrusselatorSystem:
        return cls(np.array(laplacian(g, "combinatorial").matrix), **params)

    @property
    def n(self) -> int:
        return self.lap.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n

    def fixed_point(self) -> np.ndarray:
        """Homogeneous equilibrium ``x = a/d``, ``y = b d / (c a)``."""
        xs = self.a / self.d
        ys = self.b / (self.c * xs)
        return np.concatenate([np.full(self.n, xs), np.full(self.n, ys)])

    def reaction(self, s: np.ndarray) -> np.ndarray:
        x, y = s[..., : self.n], s[..., self.n :]
        x2y = self.c * x * x * y
        return np.concatenate(
            [self.a - (self.b + self.d) * x + x2y, self.b * x - x2y], axis=-1
        )

    def __call__(self, s: np.ndarray, t: float = 0.0) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        _check_dim(s, self.dim)
        x, y = s[..., : self.n], s[..., self.n :]
        diff = np.concatenate(
            [self.Dx * (x @ self.lap.T), self.Dy * (y @ self.lap.T)], axis=-1
        )
        return self.reaction(s) - diff

    def with_laplacian(self, lap: np.ndarray) -> BrusselatorSystem:
        return BrusselatorSystem(np.asarray(lap, dtype=float), self.a, self.b, self.c,
                                 self.d, self.Dx, self.Dy)

    def jacobian(self, s: np.ndarray, t: float = 0.0) -> np.ndarray:
        n = self.n
        x, y = s[:n], s[n:]
        J = np.zeros((2 * n, 2 * n))
        J[:n, :n] = np.diag(-(self.b + self.d) + 2 * self.c * x * y) - self.Dx * self.lap
        J[:n, n:] = np.diag(self.c * x * x)
        J[n:, :n] = np.diag(self.b - 2 * self.c * x * y)
        J[n:, n:] = np.diag(-self.c * x * x) - self.Dy * self.lap
        return J


@dataclass(frozen=True)
class LotkaVolterra:
    """Predator-prey field, used to validate the collocation solver."""

    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    gamma: float = 1.0
    dim: int = 2

    def __call__(self, s: np.ndarray, t: float = 0.0) -> np.ndarray:
        x, y = s[..., 0], s[..., 1]
        return np.stack(
            [self.alpha * x - self.beta * x * y, self.delta * x * y - self.gamma * y], axis=-1
        )

    def equilibrium(self) -> np.ndarray:
        return np.array([self.gamma / self.delta, self.alpha / self.beta])


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    tag: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        X = np.asarray(self.states, dtype=float)
        if X.ndim != 2 or X.shape[0] != t.size:
            raise ValueError("states must be (len(times), dim)")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", X)

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"x{i}" for i in range(self.dim)])
            for t, x in zip(self.times, self.states):
                wr.writerow([repr(float(t))] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path: str | Path, tag: str = "") -> Trajectory:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:], tag)


def euler_step(f: VectorField, x: np.ndarray, t: float, h: float) -> np.ndarray:
    return x + h * f(x, t)


def rk4_step(f: VectorField, x: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


_STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def integrate(
    f: VectorField,
    x0: np.ndarray,
    t_span: tuple[float, float],
    h: float,
    scheme: str = "rk4",
    tag: str = "",
) -> Trajectory:
    """Fixed-step explicit integration on the uniform grid ``t0 + j h``.

    The number of steps is ``round((t1 - t0) / h)``, so the last time is within
    ``h`` of ``t1`` (exactly ``t1`` when ``h`` divides the span).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    try:
        step = _STEPPERS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}") from None
    t0, t1 = map(float, t_span)
    nsteps = max(int(round((t1 - t0) / h)), 1)
    x = np.array(x0, dtype=float)
    states = np.empty((nsteps + 1, x.size))
    states[0] = x
    times = t0 + h * np.arange(nsteps + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(nsteps):
            x = step(f, x, times[j], h)
            if not np.all(np.isfinite(x)):
                raise IntegrationError(j + 1)
            states[j + 1] = x
    return Trajectory(times, states, tag)

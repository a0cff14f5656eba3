"""Orthogonal collocation on finite elements.

Inside one element of length ``t_n`` the state is a polynomial through the
element start ``x_prev`` and ``K`` nodes at fractions ``tau_1 < ... < tau_K = 1``.
With ``N_ij = int_0^{tau_i} l_j(s) ds`` (``l_j`` the Lagrange basis on the
nodes) the node states ``Z`` satisfy::

    t_n N F(Z) = Z - 1 x_prev^T

The node families are the Lobatto points with the start point removed; the
two-node case is ``tau = (1/2, 1)`` which gives ``N = [[0.75, -0.25], [1, 0]]``.
"""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory, VectorField

_NODES = {
    2: np.array([0.5, 1.0]),
    4: np.array([0.5 - 0.5 * np.sqrt(3.0 / 7.0), 0.5, 0.5 + 0.5 * np.sqrt(3.0 / 7.0), 1.0]),
}


class CollocationError(RuntimeError):
    pass


def integration_matrix(tau: np.ndarray) -> np.ndarray:
    """``N_ij = int_0^{tau_i} l_j(s) ds`` for the Lagrange basis ``l_j`` on ``tau``."""
    tau = np.asarray(tau, dtype=float)
    K = tau.size
    N = np.empty((K, K))
    for j in range(K):
        others = np.delete(tau, j)
        coeffs = np.poly(others) / np.prod(tau[j] - others)
        antideriv = np.polyint(coeffs)
        N[:, j] = np.polyval(antideriv, tau) - np.polyval(antideriv, 0.0)
    return N


@dataclass(frozen=True, eq=False)
class CollocationScheme:
    nodes_per_element: int
    tau: np.ndarray
    N: np.ndarray
    t_n: float
    C: int

    @property
    def horizon(self) -> float:
        return self.t_n * self.C


def build_scheme(nodes_per_element: int, t_n: float, C: int = 1) -> CollocationScheme:
    if nodes_per_element not in _NODES:
        raise ValueError(f"unsupported node count {nodes_per_element}; use 2 or 4")
    if t_n <= 0 or C < 1:
        raise ValueError("element length must be positive and C >= 1")
    tau = _NODES[nodes_per_element]
    N = integration_matrix(tau)
    if nodes_per_element == 2:
        # exact representation; the quadrature above is off by one ulp
        N = np.array([[0.75, -0.25], [1.0, 0.0]])
    return CollocationScheme(nodes_per_element, tau, N, float(t_n), int(C))


def element_residual(scheme: CollocationScheme, f: VectorField, Z: np.ndarray,
                     x_prev: np.ndarray, t0: float = 0.0) -> np.ndarray:
    """``t_n N F(Z) - (Z - X_prev)`` with node states as the rows of ``Z``."""
    times = t0 + scheme.tau * scheme.t_n
    F = np.stack([f(z, t) for z, t in zip(Z, times)])
    return scheme.t_n * scheme.N @ F - (Z - x_prev[None, :])


def _fd_jacobian(f: VectorField, x: np.ndarray, t: float, fx: np.ndarray) -> np.ndarray:
    eps = 1e-7 * (1.0 + np.max(np.abs(x)))
    J = np.empty((fx.size, x.size))
    for b in range(x.size):
        xp = x.copy()
        xp[b] += eps
        J[:, b] = (f(xp, t) - fx) / eps
    return J


def solve_element(
    scheme: CollocationScheme,
    f: VectorField,
    x_prev: np.ndarray,
    t0: float = 0.0,
    jac: Callable[[np.ndarray, float], np.ndarray] | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
    Z0: np.ndarray | None = None,
) -> np.ndarray:
    """Node states of one element by damped Newton on the residual system.

    ``jac(x, t)`` is the field Jacobian; without it forward differences are used.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    K, d = scheme.nodes_per_element, x_prev.size
    times = t0 + scheme.tau * scheme.t_n
    tnN = scheme.t_n * scheme.N
    Z = np.tile(x_prev, (K, 1)) if Z0 is None else np.array(Z0, dtype=float)

    def resid(Z):
        F = np.stack([f(z, t) for z, t in zip(Z, times)])
        return tnN @ F - (Z - x_prev[None, :]), F

    G, F = resid(Z)
    gnorm = np.max(np.abs(G))
    for _ in range(max_iter):
        if gnorm < tol:
            return Z
        # d G_(i,a) / d Z_(j,b) = t_n N_ij J_j[a,b] - delta_ij delta_ab
        Js = [jac(z, t) if jac is not None else _fd_jacobian(f, z, t, F[j])
              for j, (z, t) in enumerate(zip(Z, times))]
        Jfull = np.einsum("ij,jab->iajb", tnN, np.stack(Js)).reshape(K * d, K * d)
        Jfull -= np.eye(K * d)
        try:
            dZ = np.linalg.solve(Jfull, -G.ravel()).reshape(K, d)
        except np.linalg.LinAlgError as exc:
            raise CollocationError("singular Newton matrix") from exc
        step = 1.0
        while True:
            Zn = Z + step * dZ
            with np.errstate(over="ignore", invalid="ignore"):
                Gn, Fn = resid(Zn)
            nn = np.max(np.abs(Gn))
            if np.isfinite(nn) and (nn < gnorm or nn < tol):
                break
            step *= 0.5
            if step < 1e-8:
                raise CollocationError("line search failed to reduce the residual")
        Z, G, F, gnorm = Zn, Gn, Fn, nn
    if gnorm < tol:
        return Z
    raise CollocationError(f"Newton did not converge in {max_iter} iterations "
                           f"(residual {gnorm:.2e})")


def chain_elements(
    scheme: CollocationScheme,
    f: VectorField,
    x0: np.ndarray,
    t0: float = 0.0,
    jac: Callable[[np.ndarray, float], np.ndarray] | None = None,
    tol: float = 1e-10,
) -> Trajectory:
    """Solve ``C`` consecutive elements; each element starts at the previous end node."""
    x = np.asarray(x0, dtype=float)
    times, states = [t0], [x]
    for i in range(scheme.C):
        ts = t0 + i * scheme.t_n
        Z = solve_element(scheme, f, x, ts, jac=jac, tol=tol)
        times.extend(ts + scheme.tau * scheme.t_n)
        states.extend(Z)
        x = Z[-1]
    return Trajectory(np.array(times), np.array(states), "collocation")

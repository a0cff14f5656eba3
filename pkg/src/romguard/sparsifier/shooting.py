"""Reduced dynamics with per-edge weight multipliers, solved by collocation.

The full field is ``f(x; gamma) = r(x) - sum_b c_b S L(gamma) S x_b`` where
``L(gamma) = B^T diag(w * gamma) B``, ``S`` a fixed diagonal scaling and ``x_b``
the blocks of the state (one block for diffusion, two for the Brusselator).
Projected through the POD basis the field and its Jacobians in ``z`` and in
``gamma`` are cheap closed forms, which lets the collocation residuals be
eliminated by forward simulation (single shooting) with exact sensitivities.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..collocation import CollocationError, CollocationScheme
from ..dynamics import BrusselatorSystem
from ..graph import WeightedGraph
from ..pod import PodBasis


@dataclass(frozen=True, eq=False)
class GraphOperatorModel:
    """Full-order field linear in the edge multipliers ``gamma``."""

    g: WeightedGraph
    scale: np.ndarray                 # diagonal of S
    coefs: tuple[float, ...]          # diffusion coefficient per block
    reaction: Callable | None = None  # r(x) for batch x
    reaction_jac: Callable | None = None
    reduced_reaction_jac: Callable | None = None  # (x, rho) -> rho J_r(x) rho^T

    @property
    def n(self) -> int:
        return self.g.n

    @property
    def dim(self) -> int:
        return self.n * len(self.coefs)

    def operator(self, gamma: np.ndarray | None = None) -> np.ndarray:
        """``S B^T diag(w gamma) B S`` as a dense matrix."""
        wg = self.g.w if gamma is None else self.g.w * gamma
        Bs = np.zeros((self.g.m, self.n))
        rows = np.arange(self.g.m)
        Bs[rows, self.g.u] = self.scale[self.g.u]
        Bs[rows, self.g.v] = -self.scale[self.g.v]
        return (Bs.T * wg) @ Bs

    def field(self, x: np.ndarray, gamma: np.ndarray | None = None) -> np.ndarray:
        Lg = self.operator(gamma)
        blocks = [c * (x[..., i * self.n:(i + 1) * self.n] @ Lg)
                  for i, c in enumerate(self.coefs)]
        out = -np.concatenate(blocks, axis=-1)
        if self.reaction is not None:
            out = out + self.reaction(x)
        return out


def diffusion_model(g: WeightedGraph, normalized: bool = True) -> GraphOperatorModel:
    """Diffusion whose operator at ``gamma = 1`` is the (normalized) Laplacian.

    The normalization uses the degrees of ``g`` itself, held fixed while the
    multipliers vary, so the field stays linear in ``gamma``.
    """
    d = g.degrees()
    scale = 1.0 / np.sqrt(d) if normalized else np.ones(g.n)
    return GraphOperatorModel(g, scale, (1.0,))


def brusselator_model(g: WeightedGraph, sys: BrusselatorSystem) -> GraphOperatorModel:
    n = g.n

    def jac(x):
        xx, yy = x[:n], x[n:]
        J = np.zeros((2 * n, 2 * n))
        J[:n, :n] = np.diag(-(sys.b + sys.d) + 2 * sys.c * xx * yy)
        J[:n, n:] = np.diag(sys.c * xx * xx)
        J[n:, :n] = np.diag(sys.b - 2 * sys.c * xx * yy)
        J[n:, n:] = np.diag(-sys.c * xx * xx)
        return J

    def reduced_jac(x, rho):
        xx, yy = x[:n], x[n:]
        rx, ry = rho[:, :n], rho[:, n:]
        d_xx = -(sys.b + sys.d) + 2 * sys.c * xx * yy
        d_xy = sys.c * xx * xx
        d_yx = sys.b - 2 * sys.c * xx * yy
        return (rx * d_xx) @ rx.T + (rx * d_xy) @ ry.T + (ry * d_yx) @ rx.T - (ry * d_xy) @ ry.T

    return GraphOperatorModel(g, np.ones(n), (sys.Dx, sys.Dy), sys.reaction, jac, reduced_jac)


class ReducedModel:
    """``f_a(z; gamma) = rho f(rho^T z + xbar; gamma)`` with Jacobians."""

    def __init__(self, model: GraphOperatorModel, basis: PodBasis):
        if basis.n != model.dim:
            raise ValueError("basis dimension does not match the model state")
        self.model = model
        self.basis = basis
        g, n = model.g, model.n
        rows = np.arange(g.m)
        Bs = np.zeros((g.m, n))
        Bs[rows, g.u] = model.scale[g.u]
        Bs[rows, g.v] = -model.scale[g.v]
        self.U = []   # B S rho_b^T  (m x k)
        self.u0 = []  # B S xbar_b   (m,)
        for i in range(len(model.coefs)):
            sl = slice(i * n, (i + 1) * n)
            self.U.append(Bs @ basis.rho[:, sl].T)
            self.u0.append(Bs @ basis.xbar[sl])
        self.w = g.w

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def m(self) -> int:
        return self.w.size

    def field(self, z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        wg = self.w * gamma
        out = np.zeros(self.k)
        for c, U, u0 in zip(self.model.coefs, self.U, self.u0):
            out -= c * (U.T @ (wg * (U @ z + u0)))
        if self.model.reaction is not None:
            x = self.basis.lift(z)
            out += self.basis.rho @ self.model.reaction(x)
        return out

    def jac_z(self, z: np.ndarray, gamma: np.ndarray, reaction: bool = True) -> np.ndarray:
        wg = self.w * gamma
        J = np.zeros((self.k, self.k))
        for c, U in zip(self.model.coefs, self.U):
            J -= c * ((U.T * wg) @ U)
        if reaction and self.model.reduced_reaction_jac is not None:
            J += self.model.reduced_reaction_jac(self.basis.lift(z), self.basis.rho)
        elif reaction and self.model.reaction_jac is not None:
            rho = self.basis.rho
            J += rho @ self.model.reaction_jac(self.basis.lift(z)) @ rho.T
        return J

    def field_batch(self, Z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Rows of ``Z`` are reduced states."""
        wg = self.w * gamma
        out = np.zeros_like(Z, dtype=float)
        for c, U, u0 in zip(self.model.coefs, self.U, self.u0):
            out -= c * ((Z @ U.T + u0) * wg) @ U
        if self.model.reaction is not None:
            out += self.model.reaction(self.basis.lift(Z)) @ self.basis.rho.T
        return out

    def jac_z_batch(self, Z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        lin = self.jac_z(np.zeros(self.k), gamma, reaction=False)
        out = np.repeat(lin[None], Z.shape[0], axis=0)
        if self.model.reduced_reaction_jac is not None:
            X = self.basis.lift(Z)
            for r in range(Z.shape[0]):
                out[r] += self.model.reduced_reaction_jac(X[r], self.basis.rho)
        elif self.model.reaction_jac is not None:
            rho = self.basis.rho
            for r, x in enumerate(self.basis.lift(Z)):
                out[r] += rho @ self.model.reaction_jac(x) @ rho.T
        return out

    def jac_gamma_batch(self, Z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """``(K, k, m)`` stack of ``df/dgamma`` at the rows of ``Z``."""
        out = np.zeros((Z.shape[0], self.k, self.m))
        for c, U, u0 in zip(self.model.coefs, self.U, self.u0):
            Y = Z @ U.T + u0                                  # (K, m)
            out -= c * U.T[None, :, :] * (self.w * Y)[:, None, :]
        return out

    def jac_gamma(self, z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        out = np.zeros((self.k, self.m))
        for c, U, u0 in zip(self.model.coefs, self.U, self.u0):
            y = U @ z + u0
            out -= c * (U.T * (self.w * y))
        return out


@dataclass
class ShootingResult:
    checkpoints: list          # per trajectory: (n_check, k) states
    sensitivities: list | None  # per trajectory: (n_check, k, m)
    nodes: list                # per trajectory: (C, K, k) node states


def checkpoint_elements(C: int, stride: int) -> np.ndarray:
    """0-based element indices whose end node is a checkpoint."""
    return np.arange(stride - 1, C, stride)


def _shoot_linear(rm, scheme, z0s, gamma, check, sensitivities):
    """Affine dynamics: one factorization serves every element and trajectory."""
    K, k, m = scheme.nodes_per_element, rm.k, rm.m
    tnN = scheme.t_n * scheme.N
    J = rm.jac_z(np.zeros(k), gamma)
    c = rm.field(np.zeros(k), gamma)
    Jfull = np.einsum("ij,ab->iajb", tnN, J).reshape(K * k, K * k) - np.eye(K * k)
    lu = scipy.linalg.lu_factor(Jfull, check_finite=False)
    const = np.outer(tnN.sum(axis=1), c)
    out_pts, out_sens, out_nodes = [], [], []
    for z0 in z0s:
        z_prev = np.asarray(z0, dtype=float)
        S_prev = np.zeros((k, m)) if sensitivities else None
        pts, sens, nodes = [], [], []
        for i in range(scheme.C):
            rhs = -(const + z_prev[None, :])
            Z = scipy.linalg.lu_solve(lu, rhs.ravel(), check_finite=False).reshape(K, k)
            if sensitivities:
                dF = rm.jac_gamma_batch(Z, gamma)
                rhs_s = np.einsum("ij,jam->iam", tnN, dF) + S_prev[None]
                SZ = -scipy.linalg.lu_solve(lu, rhs_s.reshape(K * k, m), check_finite=False)
                S_prev = SZ.reshape(K, k, m)[-1]
            z_prev = Z[-1]
            nodes.append(Z)
            if i in check:
                pts.append(z_prev.copy())
                if sensitivities:
                    sens.append(S_prev.copy())
        out_pts.append(np.array(pts))
        out_sens.append(np.array(sens) if sensitivities else None)
        out_nodes.append(np.array(nodes))
    return ShootingResult(out_pts, out_sens if sensitivities else None, out_nodes)


def shoot(
    rm: ReducedModel,
    scheme: CollocationScheme,
    z0s: Sequence[np.ndarray],
    gamma: np.ndarray,
    stride: int = 1,
    sensitivities: bool = False,
    warm: list | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> ShootingResult:
    """Chain collocation elements from each ``z0`` and collect checkpoint states."""
    check = set(checkpoint_elements(scheme.C, stride).tolist())
    if rm.model.reaction is None:
        return _shoot_linear(rm, scheme, z0s, gamma, check, sensitivities)
    K, k, m = scheme.nodes_per_element, rm.k, rm.m
    tnN = scheme.t_n * scheme.N
    out_pts, out_sens, out_nodes = [], [], []
    for traj_idx, z0 in enumerate(z0s):
        z_prev = np.asarray(z0, dtype=float)
        S_prev = np.zeros((k, m)) if sensitivities else None
        pts, sens, nodes = [], [], []
        for i in range(scheme.C):
            if warm is not None:
                Z = warm[traj_idx][i].copy()
            else:
                Z = np.tile(z_prev, (K, 1))
            F = rm.field_batch(Z, gamma)
            G = tnN @ F - (Z - z_prev[None, :])
            gnorm = np.max(np.abs(G))
            for it in range(max_iter + 1):
                Js = rm.jac_z_batch(Z, gamma)
                Jfull = np.einsum("ij,jab->iajb", tnN, Js).reshape(K * k, K * k)
                Jfull -= np.eye(K * k)
                if gnorm < tol * (1.0 + np.max(np.abs(Z))):
                    break
                if it == max_iter:
                    raise CollocationError(f"element {i}: Newton stalled at {gnorm:.2e}")
                dZ = np.linalg.solve(Jfull, -G.ravel()).reshape(K, k)
                step = 1.0
                while True:
                    Zn = Z + step * dZ
                    with np.errstate(over="ignore", invalid="ignore"):
                        Gn = tnN @ rm.field_batch(Zn, gamma) - (Zn - z_prev[None, :])
                    gn = np.max(np.abs(Gn))
                    if np.isfinite(gn) and gn < gnorm:
                        break
                    step *= 0.5
                    if step < 1e-8:
                        raise CollocationError(f"element {i}: line search failed")
                Z, G, gnorm = Zn, Gn, gn
            if sensitivities:
                # Jfull dZ/dgamma = -(1 (x) S_prev) - t_n N dF/dgamma
                dF = rm.jac_gamma_batch(Z, gamma)
                rhs = np.einsum("ij,jam->iam", tnN, dF) + S_prev[None]
                lu = scipy.linalg.lu_factor(Jfull, check_finite=False)
                SZ = -scipy.linalg.lu_solve(lu, rhs.reshape(K * k, m), check_finite=False)
                S_prev = SZ.reshape(K, k, m)[-1]
            z_prev = Z[-1]
            nodes.append(Z)
            if i in check:
                pts.append(z_prev.copy())
                if sensitivities:
                    sens.append(S_prev.copy())
        out_pts.append(np.array(pts))
        out_sens.append(np.array(sens) if sensitivities else None)
        out_nodes.append(np.array(nodes))
    return ShootingResult(out_pts, out_sens if sensitivities else None, out_nodes)

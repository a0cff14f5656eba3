"""Proper orthogonal decomposition of trajectory snapshots."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Trajectory, VectorField


class PodError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Projection ``rho`` (k x n, orthonormal rows), mean ``xbar`` and the full
    covariance spectrum in descending order."""

    rho: np.ndarray
    xbar: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        xbar = np.asarray(self.xbar, dtype=float)
        if rho.shape[1] != xbar.size:
            raise PodError("rho and xbar disagree on the full dimension")
        if not np.allclose(rho @ rho.T, np.eye(rho.shape[0]), atol=1e-10):
            raise PodError("rows of rho are not orthonormal")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "xbar", xbar)
        object.__setattr__(self, "eigvals", np.asarray(self.eigvals, dtype=float))

    @property
    def k(self) -> int:
        return self.rho.shape[0]

    @property
    def n(self) -> int:
        return self.rho.shape[1]

    @property
    def P(self) -> np.ndarray:
        return self.rho.T @ self.rho

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return reduce(self, x)

    def lift(self, z: np.ndarray) -> np.ndarray:
        return lift(self, z)

    def project(self, x: np.ndarray) -> np.ndarray:
        """``P (x - xbar) + xbar``: the nearest point of the affine POD subspace."""
        return self.lift(self.reduce(x))

    def save(self, path: str | Path) -> None:
        np.savez(path, rho=self.rho, xbar=self.xbar, eigvals=self.eigvals,
                 manifest=np.array(f"{self.n} {self.k}"))

    @classmethod
    def load(cls, path: str | Path) -> PodBasis:
        with np.load(path) as data:
            n, k = map(int, str(data["manifest"]).split())
            basis = cls(data["rho"], data["xbar"], data["eigvals"])
        if (basis.n, basis.k) != (n, k):
            raise PodError(f"{path}: manifest says n={n} k={k}")
        return basis


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.size == 1:
        return np.ones(1)
    dt = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def snapshot_covariance(trajs: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid-rule mean and (unnormalized) covariance integral of the snapshots."""
    ws = [trapezoid_weights(tr.times) for tr in trajs]
    total = sum(w.sum() for w in ws)
    xbar = sum(w @ tr.states for w, tr in zip(ws, trajs)) / total
    R = np.zeros((xbar.size, xbar.size))
    for w, tr in zip(ws, trajs):
        D = tr.states - xbar
        R += (D * w[:, None]).T @ D
    return xbar, 0.5 * (R + R.T)


def _gap_ok(evals: np.ndarray, k: int) -> bool:
    return evals[k - 1] - evals[k] >= 1e-12 * max(1.0, abs(evals[0]))


def largest_valid_rank(trajs: Sequence[Trajectory] | Trajectory, k: int) -> int:
    """Largest ``k' <= k`` whose eigenvalue gap makes the POD subspace well defined.

    Short trajectories of smooth dynamics are often numerically rank deficient,
    so a requested ``k`` may sit inside the zero eigenspace.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    _, R = snapshot_covariance(trajs)
    evals = np.sort(np.linalg.eigvalsh(R))[::-1]
    for kk in range(min(k, evals.size - 1), 0, -1):
        if _gap_ok(evals, kk):
            return kk
    raise PodError("snapshot covariance has no usable eigenvalue gap")


def build_pod(trajs: Sequence[Trajectory] | Trajectory, k: int) -> PodBasis:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    dims = {tr.dim for tr in trajs}
    if len(dims) != 1:
        raise PodError("snapshot trajectories have different dimensions")
    n = dims.pop()
    if not 0 < k < n:
        raise PodError(f"need 0 < k < n, got k={k}, n={n}")
    xbar, R = snapshot_covariance(trajs)
    evals, evecs = np.linalg.eigh(R)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if not _gap_ok(evals, k):
        gap = evals[k - 1] - evals[k]
        raise PodError(f"eigenvalue gap at k={k} is {gap:.3e}; subspace is not well defined")
    rho = evecs[:, :k].T
    # fix signs so the largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(rho), axis=1)
    rho = rho * np.sign(rho[np.arange(k), idx])[:, None]
    return PodBasis(rho, xbar, evals)


def reduce(b: PodBasis, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != b.n:
        raise ValueError(f"expected full state of length {b.n}, got {x.shape[-1]}")
    return (x - b.xbar) @ b.rho.T


def lift(b: PodBasis, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != b.k:
        raise ValueError(f"expected reduced state of length {b.k}, got {z.shape[-1]}")
    return z @ b.rho + b.xbar


def rom_field(b: PodBasis, f: VectorField) -> VectorField:
    """Galerkin reduced field ``f_a(z, t) = rho f(rho^T z + xbar, t)``."""

    def f_a(z, t=0.0):
        return f(lift(b, z), t) @ b.rho.T

    return f_a


def lift_trajectory(b: PodBasis, tr: Trajectory) -> Trajectory:
    return Trajectory(tr.times, lift(b, tr.states), tr.tag)


def reconstruction_error(b: PodBasis, trajs: Sequence[Trajectory]) -> float:
    """Trapezoid-weighted squared distance of the snapshots to the POD subspace."""
    total = 0.0
    for tr in trajs:
        D = tr.states - b.xbar
        resid = D - (D @ b.rho.T) @ b.rho
        total += trapezoid_weights(tr.times) @ np.sum(resid**2, axis=1)
    return float(total)


def sensitivity_index(eigvals: np.ndarray, k: int) -> float:
    """Sensitivity of the POD projection to perturbations of the data set.

    ``max_{i<=k, j<=n-k} sqrt(2) sqrt(l_i + l_{j+k}) / (l_i - l_{j+k}) * sqrt(sum l)``
    """
    lam = np.sort(np.asarray(eigvals, dtype=float))[::-1]
    lam = np.maximum(lam, 0.0)  # round-off negatives from eigh
    n = lam.size
    if not 0 < k < n:
        raise PodError(f"need 0 < k < n, got k={k}, n={n}")
    if lam[k - 1] - lam[k] <= 0:
        raise PodError("sensitivity index needs lambda_k > lambda_{k+1}")
    top, rest = lam[:k, None], lam[None, k:]
    ratio = np.sqrt(top + rest) / (top - rest)
    return float(np.sqrt(2.0) * ratio.max() * np.sqrt(lam.sum()))

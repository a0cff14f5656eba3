"""Structured surrogate-error library: triplets, clusters, and cluster transitions.

Cluster distributions are column vectors advanced by ``p_t = P^T p_{t-1}``
with ``P = D^{-1} A`` row stochastic, so they stay on the probability simplex.
"""
from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .dynamics import Trajectory
from .pod import PodBasis

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12
_P_CLIP = 1e-12


class ErrorModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TripletSet:
    """Rows ``j``: reduced state ``z_j``, full error ``e_j`` and reduced error ``ehat_j``."""

    z: np.ndarray
    e: np.ndarray
    ehat: np.ndarray
    segment: np.ndarray  # trajectory index of each row

    def __post_init__(self):
        T = self.z.shape[0]
        if self.e.shape[0] != T or self.ehat.shape[0] != T or self.segment.shape != (T,):
            raise ErrorModelError("triplet arrays have inconsistent lengths")
        if self.ehat.shape[1] != self.z.shape[1]:
            raise ErrorModelError("reduced error and reduced state differ in dimension")

    def __len__(self) -> int:
        return self.z.shape[0]

    @staticmethod
    def concat(parts: Sequence[TripletSet]) -> TripletSet:
        seg = np.concatenate([np.full(len(p), i) for i, p in enumerate(parts)])
        return TripletSet(np.vstack([p.z for p in parts]), np.vstack([p.e for p in parts]),
                          np.vstack([p.ehat for p in parts]), seg)


def build_triplets(basis: PodBasis, full: Trajectory, rom: Trajectory) -> TripletSet:
    """``e_j = x_j - (rho^T z_j + xbar)`` and ``ehat_j = z_j - rho (x_j - xbar)``.

    ``rom`` holds reduced states on the same time grid as ``full``.
    """
    if len(full) != len(rom) or not np.allclose(full.times, rom.times, rtol=0, atol=1e-12):
        raise ErrorModelError("full and reduced trajectories are not time aligned")
    x, z = full.states, rom.states
    e = x - basis.lift(z)
    ehat = z - basis.reduce(x)
    return TripletSet(z.copy(), e, ehat, np.zeros(len(full), dtype=int))


@dataclass(frozen=True, eq=False)
class ClusterModel:
    labels: np.ndarray      # 0-based cluster per triplet
    centers_z: np.ndarray   # (p, k)
    centers_e: np.ndarray   # (p, n)
    centers_ehat: np.ndarray
    segment: np.ndarray

    @property
    def p(self) -> int:
        return self.centers_z.shape[0]

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    def label_sequences(self) -> list[np.ndarray]:
        return [self.labels[self.segment == s] for s in np.unique(self.segment)]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "segment", "label"])
            for j, (s, lab) in enumerate(zip(self.segment, self.labels)):
                w.writerow([j, int(s), int(lab)])
        k, n = self.centers_z.shape[1], self.centers_e.shape[1]
        with open(d / "centers.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster"] + [f"z{i}" for i in range(k)] + [f"e{i}" for i in range(n)]
                       + [f"ehat{i}" for i in range(k)])
            for c in range(self.p):
                row = np.concatenate([self.centers_z[c], self.centers_e[c], self.centers_ehat[c]])
                w.writerow([c] + [repr(float(v)) for v in row])

    @classmethod
    def load(cls, directory: str | Path) -> ClusterModel:
        d = Path(directory)
        lab = np.loadtxt(d / "labels.csv", delimiter=",", skiprows=1, ndmin=2).astype(int)
        with open(d / "centers.csv") as fh:
            header = next(csv.reader(fh))
        k = sum(h.startswith("z") for h in header)
        n = sum(h.startswith("e") and not h.startswith("ehat") for h in header)
        C = np.loadtxt(d / "centers.csv", delimiter=",", skiprows=1, ndmin=2)
        # contiguous copies keep BLAS reductions identical to the in-memory model
        cols = (C[:, 1:1 + k], C[:, 1 + k:1 + k + n], C[:, 1 + k + n:])
        return cls(lab[:, 2].copy(), *map(np.ascontiguousarray, cols), lab[:, 1].copy())


def _centers(trip: TripletSet, labels: np.ndarray, p: int):
    counts = np.bincount(labels, minlength=p).astype(float)
    out = []
    for arr in (trip.z, trip.e, trip.ehat):
        sums = np.zeros((p, arr.shape[1]))
        np.add.at(sums, labels, arr)
        out.append(sums / counts[:, None])
    return out


def cluster(trip: TripletSet, p: int) -> ClusterModel:
    """Ward agglomerative clustering of the reduced states cut at ``p`` clusters.

    Labels are numbered by first appearance along the triplet order.
    """
    T = len(trip)
    if p < 1:
        raise ErrorModelError("cluster count must be positive")
    if T < p:
        raise ErrorModelError(f"cannot form {p} clusters from {T} triplets")
    if p == 1:
        raw = np.zeros(T, dtype=int)
    elif p == T:
        raw = np.arange(T)
    else:
        Z = linkage(trip.z, method="ward")
        raw = fcluster(Z, t=p, criterion="maxclust")
    _, first = np.unique(raw, return_index=True)
    remap = {raw[i]: r for r, i in enumerate(np.sort(first))}
    labels = np.array([remap[v] for v in raw])
    p_eff = labels.max() + 1
    if p_eff != p:
        # ties in the dendrogram can merge below the requested count
        log.warning("clustering produced %d clusters instead of %d", p_eff, p)
    cz, ce, ceh = _centers(trip, labels, p_eff)
    return ClusterModel(labels, cz, ce, ceh, trip.segment.copy())


def assign_cluster(model: ClusterModel, z0: np.ndarray) -> int:
    """Nearest center in Euclidean norm; ``argmin`` breaks ties toward the lowest index."""
    d2 = np.sum((model.centers_z - np.asarray(z0)[None, :]) ** 2, axis=1)
    return int(np.argmin(d2))


def _q_index(p: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(p)


def transition_matrix(q: np.ndarray, p: int) -> np.ndarray:
    """Row-stochastic ``D^{-1} A`` for the symmetric weights ``q`` (upper triangle incl. diagonal)."""
    iu = _q_index(p)
    A = np.zeros((p, p))
    A[iu] = q
    A = A + np.triu(A, 1).T
    return A / A.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TransitionModel:
    q: np.ndarray
    p: int

    def __post_init__(self):
        if self.q.shape != (self.p * (self.p + 1) // 2,):
            raise ErrorModelError("weight vector does not match the cluster count")
        if np.any(self.q < 0):
            raise ErrorModelError("transition weights must be nonnegative")

    @property
    def P(self) -> np.ndarray:
        return transition_matrix(self.q, self.p)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "q.csv", self.q[None, :], delimiter=",", fmt="%.17g")
        np.savetxt(d / "P.csv", self.P, delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, directory: str | Path) -> TransitionModel:
        q = np.loadtxt(Path(directory) / "q.csv", delimiter=",", ndmin=1)
        p = int(round((np.sqrt(8 * q.size + 1) - 1) / 2))
        return cls(q, p)


def propagate(model: TransitionModel, p_t: np.ndarray, P: np.ndarray | None = None) -> np.ndarray:
    p_t = np.asarray(p_t, dtype=float)
    if np.any(p_t < -1e-12) or abs(p_t.sum() - 1.0) > 1e-8:
        raise ErrorModelError("input is not a probability vector")
    if P is None:
        P = model.P
    return P.T @ p_t


def error_maps(model: ClusterModel, p_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``A_t`` (length n) and ``R_t`` (length k)."""
    return p_t @ model.centers_e, p_t @ model.centers_ehat


def transition_objective(q: np.ndarray, p: int, sequences: Sequence[np.ndarray],
                         gradient: bool = True):
    """Cross-entropy of the propagated distributions; adjoint gradient in ``q``.

    Each sequence starts from a one-hot distribution at its first label and is
    scored on every later step.
    """
    A = np.zeros((p, p))
    iu = _q_index(p)
    A[iu] = q
    A = A + np.triu(A, 1).T
    s = A.sum(axis=1)
    P = A / s[:, None]
    J = 0.0
    G = np.zeros((p, p))  # dJ/dP
    for y in sequences:
        y = np.asarray(y, dtype=int)
        T = y.size
        if T < 2:
            continue
        ps = np.zeros((T, p))
        ps[0, y[0]] = 1.0
        PT = P.T
        for t in range(1, T):
            ps[t] = PT @ ps[t - 1]
        onehot = np.zeros((T - 1, p))
        onehot[np.arange(T - 1), y[1:]] = 1.0
        pt = ps[1:]
        pc = np.clip(pt, _P_CLIP, 1.0 - _P_CLIP)
        J += float(-np.sum(onehot * np.log(pc) + (1.0 - onehot) * np.log(1.0 - pc)))
        if gradient:
            dl = -onehot / pc + (1.0 - onehot) / (1.0 - pc)
            dl = np.where((pt > _P_CLIP) & (pt < 1.0 - _P_CLIP), dl, 0.0)
            lams = np.empty_like(dl)
            lam = np.zeros(p)
            for t in range(T - 2, -1, -1):
                lam = dl[t] + P @ lam
                lams[t] = lam
            # dJ/dP_ij = sum_t p_{t-1}(i) lambda_t(j)
            G += ps[:-1].T @ lams
    if not gradient:
        return J
    # P = A / s  =>  dJ/dA_ij = (G_ij - sum_l G_il P_il) / s_i
    gA = (G - np.sum(G * P, axis=1, keepdims=True)) / s[:, None]
    gsym = gA + gA.T
    gsym[np.diag_indices(p)] = np.diag(gA)
    return J, gsym[iu]


def train_transitions(sequences: Sequence[np.ndarray] | np.ndarray, p: int, steps: int = 200,
                      lr: float = 1.0, q0: np.ndarray | None = None) -> tuple[TransitionModel, list]:
    """Projected gradient descent with backtracking on the transition cross-entropy.

    Returns the model and the objective after every accepted step.
    """
    if isinstance(sequences, np.ndarray) and sequences.ndim == 1:
        sequences = [sequences]
    sequences = [np.asarray(s, dtype=int) for s in sequences]
    if not any(s.size >= 2 for s in sequences):
        raise ErrorModelError("need a label sequence of length at least 2")
    if any(np.any((s < 0) | (s >= p)) for s in sequences):
        raise ErrorModelError("labels out of range")
    q = np.ones(p * (p + 1) // 2) if q0 is None else np.maximum(np.asarray(q0, float), Q_FLOOR)
    J, g = transition_objective(q, p, sequences)
    history = [J]
    step = lr
    for _ in range(steps):
        if not np.isfinite(J):
            raise ErrorModelError("transition objective is not finite")
        accepted = False
        while step > 1e-14:
            qn = np.maximum(q - step * g, Q_FLOOR)
            Jn = transition_objective(qn, p, sequences, gradient=False)
            if np.isfinite(Jn) and Jn < J:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        q = qn
        J, g = transition_objective(q, p, sequences)
        history.append(J)
        step *= 2.0
    return TransitionModel(q, p), history

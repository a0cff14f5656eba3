"""Bootstrap particle filter with structured model and observation error terms.

State model and observation model::

    x_{k+1} = M(x_k) + A_{k+1} v + w_{k+1},   w ~ N(0, zeta_x dt I)
    z_k     = rho (x_k - xbar) + R_k beta + mu_k,   mu ~ N(0, zeta_y I)

``A`` and ``R`` are diagonal mixtures of cluster error centers driven by the
cluster distribution.  ``v`` and ``beta`` are refreshed whenever the spread of
the predicted ensemble exceeds a threshold, using an explicit step of a
reference model (the sparse graph) from the current estimate.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Philox

from .dynamics import Trajectory, VectorField
from .errormodel import ClusterModel, TransitionModel, assign_cluster, error_maps
from .pod import PodBasis

log = logging.getLogger(__name__)

BatchMap = Callable[[np.ndarray], np.ndarray]
# exp() underflows to zero below this log value
_LOG_UNDERFLOW = -745.0


class FilterDivergence(RuntimeError):
    def __init__(self, step: int, msg: str = "all particle weights underflowed"):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 15000
    zeta_x: float = 0.01
    zeta_y: float = 1e-7
    tau_u: float = 1.0
    seed: int = 0
    resampling: str = "systematic"
    noise_dt: float = 1.0      # process-noise variance per step is zeta_x * noise_dt
    tikhonov: float = 1e-10
    max_recoveries: int = 1

    def __post_init__(self):
        if self.n_particles < 100:
            raise ValueError("need at least 100 particles")
        if not (self.zeta_x > 0 and self.zeta_y > 0 and self.noise_dt > 0):
            raise ValueError("noise variances must be positive")
        if self.resampling != "systematic":
            raise ValueError("only systematic resampling is supported")
        if self.tikhonov <= 0:
            raise ValueError("regularization must be positive")


@dataclass
class FilterState:
    particles: np.ndarray
    weights: np.ndarray
    v: np.ndarray
    beta: np.ndarray
    a_diag: np.ndarray
    r_diag: np.ndarray
    cluster_dist: np.ndarray
    step: int = 0


@dataclass
class FilterResult:
    estimate: Trajectory
    updates: int
    update_steps: list
    recoveries: int
    ess: np.ndarray
    weight_sums: np.ndarray
    state: FilterState = field(repr=False)
    spreads: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def manifest(self, cfg: FilterConfig) -> dict:
        return {"config": asdict(cfg), "updates": self.updates, "recoveries": self.recoveries,
                "steps": int(len(self.estimate) - 1)}

    def save(self, directory: str | Path, cfg: FilterConfig, extra: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.estimate.to_csv(d / "estimate.csv")
        man = self.manifest(cfg)
        if extra:
            man.update(extra)
        (d / "filter_manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def forward_model(basis: PodBasis, f: VectorField, x: np.ndarray, h: float, t: float = 0.0
                  ) -> np.ndarray:
    """``M(x) = x + h P f(x, t)`` with ``P = rho^T rho``; ``x`` may be a batch of rows."""
    fx = f(x, t)
    return x + h * (fx @ basis.rho.T) @ basis.rho


def projected_step(basis: PodBasis, f: VectorField, h: float) -> BatchMap:
    return lambda X: forward_model(basis, f, X, h)


def regularized_diag_solve(diag: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Minimizer of ``||diag * s - rhs||^2 + lam ||s||^2``."""
    return diag * rhs / (diag * diag + lam)


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(weights * weights))


def systematic_resample(weights: np.ndarray, u: float) -> np.ndarray:
    """Indices drawn with one uniform offset ``u`` in [0, 1) over N strata."""
    N = weights.size
    positions = (u + np.arange(N)) / N
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def particle_normals(seed: int, step: int, start: int, count: int, dim: int) -> np.ndarray:
    """Standard normals for particles ``start .. start+count-1`` at ``step``.

    Each particle owns a fixed block of a counter-based stream keyed by
    ``(seed, step)``, so any subset can be regenerated independently of how the
    ensemble is partitioned.
    """
    pairs = (dim + 1) // 2
    raw_per = 4 * ((2 * pairs + 3) // 4)
    bg = Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, step])
    bg.advance(start * raw_per // 4)
    raw = bg.random_raw(count * raw_per).reshape(count, raw_per)[:, :2 * pairs]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    th = 2.0 * np.pi * u[:, 1::2]
    out = np.empty((count, 2 * pairs))
    out[:, 0::2] = r * np.cos(th)
    out[:, 1::2] = r * np.sin(th)
    return out[:, :dim]


def _resample_uniform(seed: int, step: int) -> float:
    # reserved stream well away from particle blocks
    return float(np.random.Generator(Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, step + (1 << 62)]))
                 .random())


def _onehot(i: int, p: int) -> np.ndarray:
    e = np.zeros(p)
    e[i] = 1.0
    return e


def filter_run(
    cfg: FilterConfig,
    basis: PodBasis,
    model: BatchMap,
    reference_step: BatchMap,
    clusters: ClusterModel,
    transitions: TransitionModel,
    x0: np.ndarray,
    observations: np.ndarray,
    times: np.ndarray | None = None,
) -> FilterResult:
    """Run the filter over ``observations[1:]`` starting from ``x0``.

    ``model`` is the surrogate step ``M`` and ``reference_step`` the explicit
    step of the reference (sparse-graph) dynamics; both map a batch of states
    to the next step.  ``observations[k]`` is the reduced observation at step
    ``k``.  The initial ``v`` and ``beta`` are fitted to the reference step from
    ``x0`` and the first observation.
    """
    obs = np.asarray(observations, dtype=float)
    K = obs.shape[0] - 1
    n, N = basis.n, cfg.n_particles
    if times is None:
        times = np.arange(K + 1, dtype=float)
    sd_x = np.sqrt(cfg.zeta_x * cfg.noise_dt)
    lam = cfg.tikhonov
    rho, xbar = basis.rho, basis.xbar
    P = transitions.P
    p_clusters = clusters.p
    if transitions.p != p_clusters:
        raise ValueError("transition model and cluster model disagree on the cluster count")

    x0 = np.asarray(x0, dtype=float)
    X = x0[None, :] + sd_x * particle_normals(cfg.seed, 0, 0, N, n)
    W = np.full(N, 1.0 / N)
    dist = P.T @ _onehot(assign_cluster(clusters, basis.reduce(x0)), p_clusters)
    a_diag, r_diag = error_maps(clusters, dist)
    x0b = x0[None, :]
    x1 = reference_step(x0b)[0]
    v = regularized_diag_solve(a_diag, x1 - model(x0b)[0], lam)
    beta = regularized_diag_solve(r_diag, obs[1] - basis.reduce(x1), lam) if K else \
        np.zeros(basis.k)

    estimates = [x0.copy()]
    x_hat = x0.copy()
    updates, update_steps, recoveries = 0, [], 0
    ess_hist, wsum_hist, spread_hist = [], [], []
    for k in range(1, K + 1):
        if k > 1:
            dist = P.T @ dist
            a_diag, r_diag = error_maps(clusters, dist)
        X = model(X) + a_diag * v + sd_x * particle_normals(cfg.seed, k, 0, N, n)
        mean = W @ X
        spread = float(W @ np.sum((X - mean) ** 2, axis=1))
        spread_hist.append(spread)
        forced = False
        while True:
            # the initial v and beta already cover the first step
            if k > 1 and (spread > cfg.tau_u or forced):
                # re-anchor on the latest estimate, then step the distribution once more
                anchor = _onehot(assign_cluster(clusters, basis.reduce(x_hat)), p_clusters)
                dist = P.T @ anchor
                a_new, r_diag = error_maps(clusters, dist)
                xb = x_hat[None, :]
                v_new = regularized_diag_solve(
                    a_new, (reference_step(xb) - model(xb))[0], lam)
                X = X + (a_new * v_new - a_diag * v)
                a_diag, v = a_new, v_new
                # both solves use the latest estimate and the observation it assimilated;
                # matching the current observation would cancel the innovation.  beta is
                # fitted with the map it is weighted with, so near-zero entries of the
                # previous map cannot amplify it.
                beta = regularized_diag_solve(r_diag, obs[k - 1] - basis.reduce(x_hat), lam)
                updates += 1
                update_steps.append(k)
            resid = obs[k][None, :] - (X - xbar) @ rho.T - r_diag * beta
            loglik = -0.5 * np.sum(resid * resid, axis=1) / cfg.zeta_y
            logw = np.log(np.maximum(W, 1e-300)) + loglik
            if logw.max() < _LOG_UNDERFLOW:
                if recoveries >= cfg.max_recoveries:
                    raise FilterDivergence(k)
                log.warning("particle weights underflowed at step %d; forcing a refresh", k)
                recoveries += 1
                W = np.full(N, 1.0 / N)
                forced = True
                continue
            break
        logw -= logw.max()
        W = np.exp(logw)
        W /= W.sum()
        wsum_hist.append(W.sum())
        x_hat = W @ X
        estimates.append(x_hat.copy())
        ess = effective_sample_size(W)
        ess_hist.append(ess)
        if ess < N / 2:
            idx = systematic_resample(W, _resample_uniform(cfg.seed, k))
            X = X[idx]
            W = np.full(N, 1.0 / N)
    state = FilterState(X, W, v, beta, a_diag, r_diag, dist, K)
    est = Trajectory(np.asarray(times, dtype=float), np.array(estimates), "filter")
    return FilterResult(est, updates, update_steps, recoveries, np.array(ess_hist),
                        np.array(wsum_hist), state, np.array(spread_hist))


def rmse(estimate: Trajectory | np.ndarray, truth: Trajectory | np.ndarray) -> float:
    """Root mean square over all components and time steps."""
    a = estimate.states if isinstance(estimate, Trajectory) else np.asarray(estimate)
    b = truth.states if isinstance(truth, Trajectory) else np.asarray(truth)
    if a.shape != b.shape:
        raise ValueError(f"trajectories are misaligned: {a.shape} vs {b.shape}")
    if isinstance(estimate, Trajectory) and isinstance(truth, Trajectory):
        if not np.allclose(estimate.times, truth.times, rtol=0, atol=1e-9):
            raise ValueError("trajectories have different time grids")
    return float(np.sqrt(np.mean((a - b) ** 2)))

"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line with the measured values
and then asserts the criterion at its stated tolerance.  Criteria 1-4 run the
full-scale experiments and are marked slow (about 30 minutes together on one
core); ``pytest -m "not slow"`` skips them.
"""
from __future__ import annotations

import functools
import math
from dataclasses import replace

import numpy as np
import pytest

from romguard.assimilation import FilterConfig, filter_run
from romguard.collocation import build_scheme, chain_elements
from romguard.dynamics import LotkaVolterra, Trajectory, integrate
from romguard.errormodel import ClusterModel, TransitionModel, transition_objective
from romguard.experiments import (
    ExperimentConfig,
    StageError,
    _scheme,
    error_library,
    evaluate,
    fit_pod,
    fit_transitions,
    initial_conditions,
    make_graph,
    make_system,
    perturbed_initial_condition,
    run_experiment,
    simulate,
    sparsifier_details,
    sparsify,
    surrogate_rollout,
)
from romguard.graph import complete_graph, generate_er
from romguard.node import NodeParams, ObservationSet, node_objective
from romguard.pod import PodBasis, build_pod, reconstruction_error, sensitivity_index
from romguard.sparsifier.bounds import compute_bounds, sorted_degrees_within
from romguard.sparsifier.dynopt import checkpoint_objective
from romguard.sparsifier.sampling import (
    default_sample_count,
    sample_sparsify,
    sampling_beta,
    sampling_probabilities,
    weight_bounds,
)
from romguard.sparsifier.shooting import ReducedModel, diffusion_model, shoot

SEEDS = range(5)
SIGMAS = (0.05, 0.1, 0.2)


def report(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# shared full-scale runs

@functools.cache
def linear_runs():
    """Per seed: the sparsifier (independent of sigma) and one report per sigma.

    Stages draw from separate random streams, so reusing everything upstream
    of the error library reproduces ``run_experiment`` exactly.
    """
    out = {}
    for seed in SEEDS:
        cfg0 = ExperimentConfig.defaults("linear-rom", seed=seed)
        g = make_graph(cfg0)
        system = make_system(cfg0, g)
        x0s = initial_conditions(cfg0, system.dim)
        basis = fit_pod(cfg0, simulate(cfg0, system, x0s))
        sp = sparsify(cfg0, g, system, basis, x0s)
        reps = {}
        for sigma in SIGMAS:
            cfg = replace(cfg0, sigma=sigma)
            try:
                _, cm = error_library(cfg, basis, system, x0s,
                                      surrogate_rollout(cfg, basis, system))
                tm, _ = fit_transitions(cfg, cm)
                reps[sigma], _ = evaluate(cfg, g, system, x0s, basis, cm, tm, sp, None,
                                          sparsifier_details(cfg, g, sp))
            except StageError as exc:
                reps[sigma] = exc
        out[seed] = dict(cfg=cfg0, g=g, x0s=x0s, basis=basis, sp=sp, reports=reps)
    return out


def _ratio(rep) -> float:
    if isinstance(rep, StageError):
        return math.inf
    return rep.framework_rmse / rep.surrogate_rmse


@pytest.mark.slow
def test_criterion_1_linear_diffusion(capsys):
    runs = linear_runs()
    parts, ok = [], True
    for sigma in SIGMAS:
        ratios = [_ratio(runs[s]["reports"][sigma]) for s in SEEDS]
        wins = sum(r < 0.5 for r in ratios)
        ok &= wins >= 4
        parts.append(f"sigma={sigma}: {wins}/5 ratios=[{', '.join(f'{r:.3f}' for r in ratios)}]")
    report(capsys, 1, ok, "framework/ROM RMSE < 0.5; " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_2_brusselator(capsys):
    rows, wins = [], 0
    for seed in SEEDS:
        cfg = ExperimentConfig.defaults("brusselator-rom", seed=seed)
        try:
            rep, _ = run_experiment(cfg)
            win = rep.framework_rmse < rep.surrogate_rmse
            rows.append(f"s{seed} {rep.framework_rmse:.4f} vs {rep.surrogate_rmse:.4f}")
        except StageError as exc:
            win = False
            rows.append(f"s{seed} {exc.stage} failed ({exc.cause})")
        wins += win
    ok = wins >= 4
    report(capsys, 2, ok, f"framework < ROM in {wins}/5; " + "; ".join(rows))
    assert ok


@pytest.mark.slow
def test_criterion_3_neural_ode(capsys):
    rows, wins = [], 0
    for seed in SEEDS:
        cfg = ExperimentConfig.defaults("linear-node", seed=seed)
        try:
            rep, _ = run_experiment(cfg)
            win = rep.framework_rmse < min(rep.surrogate_rmse, rep.rom_rmse)
            rows.append(f"s{seed} fw {rep.framework_rmse:.4f} node {rep.surrogate_rmse:.4f} "
                        f"rom {rep.rom_rmse:.4f}")
        except StageError as exc:
            win = False
            rows.append(f"s{seed} {exc.stage} failed ({exc.cause})")
        wins += win
    ok = wins >= 4
    report(capsys, 3, ok, f"framework < NODE and < ROM in {wins}/5; " + "; ".join(rows))
    assert ok


@pytest.mark.slow
def test_criterion_4_sparsifier_efficacy(capsys):
    rows, ok = [], True
    for seed, run in linear_runs().items():
        cfg, g, sp, basis = run["cfg"], run["g"], run["sp"], run["basis"]
        dense = cfg.alpha * g.m
        frac = sp.edges_kept / g.m
        good = frac <= 0.5 and sp.objective <= 1.5 * dense
        ok &= good
        # diagnostic only: the same objective from a perturbed, unseen initial state
        rm = ReducedModel(diffusion_model(g), basis)
        z0 = [basis.reduce(perturbed_initial_condition(replace(cfg, sigma=0.1), run["x0s"]))]
        scheme = _scheme(cfg)
        target = shoot(rm, scheme, z0, np.ones(g.m), stride=cfg.stride).checkpoints
        held = checkpoint_objective(rm, scheme, z0, target, sp.gamma_star, cfg.stride) \
            + cfg.alpha * sp.gamma_star.sum()
        rows.append(f"s{seed} {sp.edges_kept}/{g.m} J={sp.objective:.3e} "
                    f"(1.5x dense {1.5 * dense:.3e}) held-out J={held:.3e}")
    report(capsys, 4, ok, "; ".join(rows))
    assert ok


def test_criterion_5_collocation(capsys):
    N = build_scheme(2, 0.1).N
    exact = np.array_equal(N, np.array([[0.75, -0.25], [1.0, 0.0]]))
    lv = LotkaVolterra()
    x0 = np.array([1.5, 0.7])
    scheme = build_scheme(4, 0.1, 50)
    col = chain_elements(scheme, lv, x0)
    ref = integrate(lv, x0, (0.0, 5.0), 1e-5)
    ends = col.states[scheme.nodes_per_element::scheme.nodes_per_element]
    idx = np.round(col.times[scheme.nodes_per_element::scheme.nodes_per_element] / 1e-5)
    err = float(np.max(np.abs(ends - ref.states[idx.astype(int)])))
    ok = exact and err < 1e-3
    report(capsys, 5, ok, f"2-node N exact={exact}; LV sup error {err:.2e} (< 1e-3)")
    assert ok


def test_criterion_6_pod_optimality(capsys):
    rng = np.random.default_rng(6)
    worst, smin = 0.0, math.inf
    for _ in range(10):
        n, T = int(rng.integers(4, 12)), int(rng.integers(5, 20))
        trajs = [Trajectory(np.cumsum(rng.uniform(0.1, 1.0, T)), rng.standard_normal((T, n)))
                 for _ in range(int(rng.integers(1, 4)))]
        k = int(rng.integers(1, min(n, 2 * T - 1)))
        b = build_pod(trajs, k)
        tail = b.eigvals[k:].sum()
        worst = max(worst, abs(reconstruction_error(b, trajs) - tail) / tail)
        for kk in range(1, n):
            if b.eigvals[kk - 1] > b.eigvals[kk]:
                smin = min(smin, sensitivity_index(b.eigvals, kk))
    ok = worst < 1e-6 and smin >= math.sqrt(2)
    report(capsys, 6, ok, f"max relative reconstruction gap {worst:.1e}; min S_k {smin:.3f}")
    assert ok


def test_criterion_7_bernstein_tail(capsys):
    rows, ok = [], True
    for name, g in (("K3", complete_graph(3)), ("G(8,0.5)", generate_er(8, 0.5, seed=7))):
        q = default_sample_count(g.n, 0.5)
        p = sampling_probabilities(g)
        _, _, t = weight_bounds(g, q, sampling_beta(g, p))
        counts = np.random.default_rng(7).multinomial(q, p, size=10_000)
        sampled = counts * g.w / (q * p)
        freq = float((np.abs(sampled - g.w) >= t).mean(axis=0).max())
        bound = 1.0 / (g.n * g.m)
        ok &= freq <= bound
        rows.append(f"{name}: max tail freq {freq:.4f} <= {bound:.4f}")
    report(capsys, 7, ok, "; ".join(rows))
    assert ok


def test_criterion_8_degree_bounds(capsys):
    hits = 0
    for s in range(200):
        rng = np.random.default_rng(s)
        n = int(rng.integers(5, 16))
        g = generate_er(n, 0.6, seed=s)
        q = math.ceil(24 * n * math.log(n) / 0.5**2)
        b = compute_bounds(g, 0.5, q)
        hits += sorted_degrees_within(b, sample_sparsify(g, q, seed=10**6 + s).degrees())
    ok = hits / 200 >= 0.95
    report(capsys, 8, ok, f"degree bounds held in {hits}/200 runs")
    assert ok


def test_criterion_9_gradient_oracles(capsys):
    rng = np.random.default_rng(9)
    p = 6
    seqs = [rng.integers(0, p, 40) for _ in range(2)]
    q = rng.uniform(0.2, 2.0, p * (p + 1) // 2)
    _, g = transition_objective(q, p, seqs)
    worst_q = 0.0
    for i in rng.choice(q.size, 20, replace=False):
        e = np.zeros_like(q)
        e[i] = 1e-6
        fd = (transition_objective(q + e, p, seqs, False)
              - transition_objective(q - e, p, seqs, False)) / 2e-6
        worst_q = max(worst_q, abs(g[i] - fd) / abs(fd))

    cfg = ExperimentConfig.defaults("linear-node")
    system = make_system(cfg, make_graph(cfg))
    tr = simulate(cfg, system, initial_conditions(cfg, system.dim))[0]
    idx = np.concatenate([[0], np.sort(rng.choice(np.arange(1, len(tr)), 30, replace=False))])
    obs = ObservationSet(tr.times[idx], tr.states[idx])
    params = NodeParams.init(rng, std=0.2)
    _, gn = node_objective(params, obs, alpha1=0.0, max_dt=cfg.h)
    theta = params.flatten()
    worst_n = 0.0
    for i in rng.choice(theta.size, 20, replace=False):
        e = np.zeros_like(theta)
        e[i] = 1e-5
        jp = node_objective(NodeParams.unflatten(theta + e), obs, max_dt=cfg.h, gradient=False)
        jm = node_objective(NodeParams.unflatten(theta - e), obs, max_dt=cfg.h, gradient=False)
        fd = (jp - jm) / 2e-5
        worst_n = max(worst_n, abs(gn[i] - fd) / abs(fd))
    ok = worst_q < 1e-5 and worst_n < 1e-4
    report(capsys, 9, ok, f"transition adjoint rel err {worst_q:.1e} (< 1e-5); "
                          f"neural ODE adjoint rel err {worst_n:.1e} (< 1e-4)")
    assert ok


# criterion 10: an independent bootstrap filter for the zero-error case

A_TOY = np.array([[0.95, 0.1], [-0.1, 0.95]])


def minimal_bootstrap_pf(zs, x0, zeta_x, zeta_y, N, seed):
    """Textbook bootstrap filter, multinomial resampling every step."""
    rng = np.random.default_rng(seed)
    X = x0 + math.sqrt(zeta_x) * rng.standard_normal((N, 2))
    means, sds = [x0], [np.zeros(2)]
    for z in zs[1:]:
        X = X @ A_TOY.T + math.sqrt(zeta_x) * rng.standard_normal((N, 2))
        logw = -0.5 * np.sum((z - X) ** 2, axis=1) / zeta_y
        w = np.exp(logw - logw.max())
        w /= w.sum()
        m = w @ X
        means.append(m)
        sds.append(np.sqrt(w @ (X - m) ** 2))
        X = X[rng.choice(N, N, p=w)]
    return np.array(means), np.array(sds)


def test_criterion_10_filter_core(capsys):
    zeta_x, zeta_y = 0.01, 0.05
    rng = np.random.default_rng(10)
    x = np.array([1.0, 0.0])
    zs = [x]
    for _ in range(40):
        x = A_TOY @ x + math.sqrt(zeta_x) * rng.standard_normal(2)
        zs.append(x + math.sqrt(zeta_y) * rng.standard_normal(2))
    zs = np.array(zs)
    basis = PodBasis(np.eye(2), np.zeros(2), np.ones(2))
    cm = ClusterModel(np.zeros(2, dtype=int), np.array([[0.0, 0.0], [1.0, 1.0]]),
                      np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2, dtype=int))
    tm = TransitionModel(np.ones(3), 2)
    step = lambda X: X @ A_TOY.T
    fcfg = FilterConfig(n_particles=20000, zeta_x=zeta_x, zeta_y=zeta_y, tau_u=0.0, seed=3)
    res = filter_run(fcfg, basis, step, step, cm, tm, zs[0], zs)
    ref_m, ref_sd = minimal_bootstrap_pf(zs, zs[0], zeta_x, zeta_y, 20000, 11)
    dev = float(np.max(np.abs(res.estimate.states[1:] - ref_m[1:]) / ref_sd[1:]))
    simplex = bool(np.allclose(res.weight_sums, 1.0, atol=1e-12))

    cfg = ExperimentConfig.defaults("linear-node", particles=5000)
    r1, a1 = run_experiment(cfg)
    r2, a2 = run_experiment(cfg)
    same = r1.to_json() == r2.to_json() and \
        a1.framework.states.tobytes() == a2.framework.states.tobytes()
    ok = simplex and dev < 3.0 and same
    report(capsys, 10, ok, f"weights on simplex={simplex}; max |PF difference| {dev:.2f} "
                           f"posterior sd (< 3); byte-identical rerun={same}")
    assert ok

import numpy as np
import pytest
from scipy.optimize import minimize

from romguard.collocation import build_scheme
from romguard.dynamics import BrusselatorSystem, DiffusionSystem, integrate
from romguard.graph import WeightedGraph, complete_graph, generate_er
from romguard.pod import build_pod, rom_field
from romguard.sparsifier.barrier import (
    BarrierError,
    LinearConstraints,
    barrier_minimize,
)
from romguard.sparsifier.bounds import (
    compute_bounds,
    degree_bounds,
    degree_order,
    sorted_degrees_within,
)
from romguard.sparsifier.dynopt import (
    SparsifierError,
    SparsifierOutput,
    checkpoint_objective,
    degree_matrix,
    dynopt_linear,
    dynopt_rd,
)
from romguard.sparsifier.sampling import (
    default_sample_count,
    sample_sparsify,
    sampling_beta,
    sampling_probabilities,
    weight_bound_t,
    weight_bounds,
)
from romguard.sparsifier.shooting import (
    ReducedModel,
    brusselator_model,
    checkpoint_elements,
    diffusion_model,
    shoot,
)

# sampling

def test_probabilities_sum_to_one_and_uniform_on_complete_graph():
    p = sampling_probabilities(complete_graph(6))
    np.testing.assert_allclose(p, 1.0 / 15)
    g = generate_er(10, 0.5, seed=2)
    assert sampling_probabilities(g).sum() == pytest.approx(1.0)


def test_sampled_weights_are_unbiased():
    g = generate_er(8, 0.6, seed=3)
    q = 200
    mean = np.mean([sample_sparsify(g, q, seed=s).laplacian() for s in range(3000)], axis=0)
    np.testing.assert_allclose(mean, g.laplacian(), atol=0.08)


def test_sample_sparsify_seeded():
    g = generate_er(8, 0.6, seed=3)
    a, b = sample_sparsify(g, 50, seed=9), sample_sparsify(g, 50, seed=9)
    np.testing.assert_array_equal(a.w, b.w)
    with pytest.raises(ValueError):
        sample_sparsify(g, 0)


def test_beta_definition():
    g = generate_er(9, 0.5, seed=4)
    p, d = sampling_probabilities(g), g.degrees()
    beta = sampling_beta(g)
    assert np.all(p >= beta / (g.n * np.minimum(d[g.u], d[g.v])) - 1e-15)


def test_weight_bound_closed_form():
    w, du, dv, n, m, q, beta = 1.0, 2.0, 3.0, 3, 3, 100.0, 1.0
    e1, c1 = np.log(9.0), 1.0 * 3 * 2 / 1.0
    expect = e1 * c1 / (3 * q) + np.sqrt(2 * e1 * w * c1 / q + (e1 * c1 / (3 * q)) ** 2)
    assert weight_bound_t(w, du, dv, n, m, q, beta) == pytest.approx(expect)
    with pytest.raises(ValueError):
        weight_bound_t(w, du, dv, n, m, -1.0, beta)


def test_weight_bounds_bracket_weights():
    g = generate_er(10, 0.5, seed=5)
    wp, wm, t = weight_bounds(g, 500)
    assert np.all(wm <= g.w) and np.all(g.w < wp) and np.all(t > 0)


def test_default_sample_count():
    assert default_sample_count(10, 0.5) == int(np.ceil(24 * 10 * np.log(10) / 0.25))


# bounds

def test_degree_order_ascending():
    g = WeightedGraph.from_edges(4, [(0, 1, 3.0), (1, 2, 1.0), (2, 3, 0.5)])
    d = g.degrees()
    assert np.all(np.diff(d[degree_order(g)]) >= 0)


def test_bounds_contain_original_degrees_after_refinement():
    g = generate_er(12, 0.5, seed=6)
    b = compute_bounds(g, 0.5)
    d = np.sort(g.degrees())
    assert np.all(b.delta_minus <= b.delta_plus)
    assert np.all(b.delta_minus >= 0.5 * d - 1e-12)
    assert np.all(b.delta_plus <= 1.5 * d + 1e-12)
    lo, hi = b.vertex_bounds()
    np.testing.assert_array_equal(lo[b.order], b.delta_minus)
    np.testing.assert_array_equal(hi[b.order], b.delta_plus)
    assert np.all(lo <= hi)


def test_degree_bounds_input_validation():
    g = complete_graph(3)
    with pytest.raises(ValueError):
        degree_bounds(g, 1.5, g.w, g.w)


def test_sorted_degrees_within():
    g = complete_graph(5)
    b = compute_bounds(g, 0.5)
    assert sorted_degrees_within(b, g.degrees())
    assert not sorted_degrees_within(b, 10 * g.degrees())


# barrier

def test_barrier_matches_slsqp_on_constrained_quadratic():
    rng = np.random.default_rng(0)
    Q = rng.standard_normal((5, 5))
    H = Q @ Q.T + np.eye(5)
    c = rng.standard_normal(5) * 3
    A = rng.standard_normal((2, 5))
    bvec = np.array([0.5, 0.5])
    cons = LinearConstraints(np.zeros(5), np.full(5, 2.0), A, bvec)

    def fun(x, derivs):
        f = 0.5 * x @ H @ x + c @ x
        return (f, H @ x + c, H) if derivs else f

    x0 = np.full(5, 0.01)
    assert cons.strictly_feasible(x0)
    res = barrier_minimize(fun, x0, cons, gap_tol=1e-10)
    ref = minimize(lambda x: fun(x, False), x0, jac=lambda x: H @ x + c, method="SLSQP",
                   bounds=[(0, 2)] * 5,
                   constraints=[{"type": "ineq", "fun": lambda x: bvec - A @ x}],
                   options={"ftol": 1e-14, "maxiter": 500})
    assert res.converged
    np.testing.assert_allclose(res.x, ref.x, atol=1e-5)
    assert cons.max_violation(res.x) == 0.0


def test_barrier_infeasible_start():
    cons = LinearConstraints(np.zeros(2), np.ones(2), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(BarrierError):
        barrier_minimize(lambda x, d: (0.0, np.zeros(2), np.zeros((2, 2))), np.full(2, 2.0),
                         cons)


# shooting

def _diffusion_setup(n=8, seed=1, k=3):
    g = generate_er(n, 0.6, seed=seed)
    sys = DiffusionSystem.on_graph(g)
    rng = np.random.default_rng(seed)
    x0s = [rng.uniform(0, 1, n) for _ in range(2)]
    trajs = [integrate(sys, x0, (0, 0.3), 1e-3) for x0 in x0s]
    basis = build_pod(trajs, k)
    return g, sys, basis, [basis.reduce(x) for x in x0s]


def test_reduced_model_at_unit_gamma_is_galerkin_rom():
    g, sys, basis, z0s = _diffusion_setup()
    rm = ReducedModel(diffusion_model(g), basis)
    z = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(rm.field(z, np.ones(g.m)), rom_field(basis, sys)(z), atol=1e-12)


def test_shooting_checkpoints_match_rk4_rom():
    g, sys, basis, z0s = _diffusion_setup()
    rm = ReducedModel(diffusion_model(g), basis)
    scheme = build_scheme(4, 0.3 / 20, 20)
    res = shoot(rm, scheme, z0s, np.ones(g.m), stride=5)
    ref = integrate(rom_field(basis, sys), z0s[0], (0, 0.3), 1e-4).states
    idx = [int(round((c + 1) * 0.015 / 1e-4)) for c in checkpoint_elements(20, 5)]
    np.testing.assert_allclose(res.checkpoints[0], ref[idx], atol=1e-9)


@pytest.mark.parametrize("kind", ["diffusion", "brusselator"])
def test_shooting_sensitivities_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    g = generate_er(5, 0.7, seed=3)
    if kind == "diffusion":
        sys = DiffusionSystem.on_graph(g)
        model = diffusion_model(g)
        x0 = rng.uniform(0, 1, 5)
    else:
        sys = BrusselatorSystem.on_graph(g)
        model = brusselator_model(g, sys)
        x0 = rng.uniform(0.5, 1.5, 10)
    tr = integrate(sys, x0, (0, 0.5), 1e-2)
    basis = build_pod(tr, 3)
    rm = ReducedModel(model, basis)
    scheme = build_scheme(4, 0.05, 10)
    gamma = rng.uniform(0.5, 1.5, g.m)
    z0s = [basis.reduce(x0)]
    S = shoot(rm, scheme, z0s, gamma, stride=2, sensitivities=True).sensitivities[0]
    eps = 1e-6
    for e in range(g.m):
        dg = np.zeros(g.m)
        dg[e] = eps
        fd = (shoot(rm, scheme, z0s, gamma + dg, stride=2).checkpoints[0]
              - shoot(rm, scheme, z0s, gamma - dg, stride=2).checkpoints[0]) / (2 * eps)
        np.testing.assert_allclose(S[:, :, e], fd, atol=1e-7)


def test_checkpoint_elements():
    np.testing.assert_array_equal(checkpoint_elements(10, 3), [2, 5, 8])
    np.testing.assert_array_equal(checkpoint_elements(4, 1), [0, 1, 2, 3])


# dynamic optimization

def test_degree_matrix_maps_unit_multipliers_to_degrees():
    g = generate_er(7, 0.6, seed=8)
    np.testing.assert_allclose(degree_matrix(g) @ np.ones(g.m), g.degrees())


def test_dynopt_linear_feasible_and_shrinks_multipliers():
    g, sys, basis, z0s = _diffusion_setup(n=10, seed=4)
    scheme = build_scheme(4, 0.3 / 10, 10)
    bounds = compute_bounds(g, 0.5)
    out = dynopt_linear(basis, g, scheme, bounds, z0s, alpha=1e-3)
    assert out.gamma_star.sum() < g.m
    lb = np.maximum(bounds.w_minus / g.w, 0.0)
    assert np.all(out.gamma_star >= lb - 1e-12)
    assert np.all(out.gamma_star <= bounds.w_plus / g.w + 1e-12)
    # objective at the optimum is no worse than at gamma = 1
    targets = shoot(ReducedModel(diffusion_model(g), basis), scheme, z0s, np.ones(g.m)).checkpoints
    J1 = 1e-3 * g.m
    Jstar = checkpoint_objective(ReducedModel(diffusion_model(g), basis), scheme, z0s, targets,
                                 out.gamma_star) + 1e-3 * out.gamma_star.sum()
    assert Jstar <= J1 + 1e-9
    assert out.objective == pytest.approx(Jstar, rel=1e-6, abs=1e-12)


def test_dynopt_rd_respects_minimum_degree():
    rng = np.random.default_rng(2)
    g = generate_er(6, 0.7, seed=2)
    sys = BrusselatorSystem.on_graph(g)
    x0 = rng.uniform(0.5, 1.5, 12)
    basis = build_pod(integrate(sys, x0, (0, 0.5), 1e-2), 4)
    scheme = build_scheme(4, 0.05, 10)
    tau_L = 0.1 * g.degrees().min()
    out = dynopt_rd(basis, g, sys, scheme, [basis.reduce(x0)], tau_L, alpha=1e-3)
    assert np.all(degree_matrix(g) @ out.gamma_star >= tau_L - 1e-9)
    with pytest.raises(SparsifierError):
        dynopt_rd(basis, g, sys, scheme, [basis.reduce(x0)], g.degrees().min(), alpha=1e-3)


def test_sparsifier_output_round_trip(tmp_path):
    g = generate_er(6, 0.7, seed=2)
    gamma = np.linspace(0, 1.2, g.m)
    out = SparsifierOutput(gamma, np.where(g.w * gamma > 1e-5, g.w * gamma, 0.0), g, 0.5, 1e-4,
                           7, True, 0, {"prune_tol": 1e-5, "m1": 1})
    out.save(tmp_path)
    back = SparsifierOutput.load(tmp_path, g)
    np.testing.assert_array_equal(back.w1_star, out.w1_star)
    np.testing.assert_array_equal(back.L1, out.L1)
    assert back.params == out.params
    assert (tmp_path / "sparse_graph.txt").exists()

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from romguard.dynamics import (
    BrusselatorSystem,
    DiffusionSystem,
    IntegrationError,
    LotkaVolterra,
    Trajectory,
    euler_step,
    integrate,
    rk4_step,
)
from romguard.graph import complete_graph, generate_er


def test_diffusion_rk4_matches_matrix_exponential(rng):
    g = generate_er(12, 0.5, seed=1)
    sys = DiffusionSystem.on_graph(g)
    x0 = rng.uniform(0, 1, 12)
    tr = integrate(sys, x0, (0.0, 0.5), 1e-3)
    np.testing.assert_allclose(tr.states[-1], expm(-0.5 * sys.lap) @ x0, atol=1e-10)


def test_combinatorial_diffusion_conserves_mass(rng):
    sys = DiffusionSystem.on_graph(complete_graph(6), "combinatorial")
    tr = integrate(sys, rng.uniform(0, 1, 6), (0.0, 1.0), 1e-2)
    np.testing.assert_allclose(tr.states.sum(axis=1), tr.states[0].sum(), rtol=1e-12)


def test_brusselator_matches_solve_ivp(rng):
    g = generate_er(6, 0.6, seed=2)
    sys = BrusselatorSystem.on_graph(g)
    x0 = rng.uniform(0.5, 1.5, 12)
    tr = integrate(sys, x0, (0.0, 1.0), 1e-3)
    ref = solve_ivp(lambda t, y: sys(y, t), (0, 1), x0, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(tr.states[-1], ref.y[:, -1], atol=1e-8)


def test_brusselator_fixed_point_is_stationary():
    sys = BrusselatorSystem.on_graph(complete_graph(4), a=1.0, b=1.5)
    np.testing.assert_allclose(sys(sys.fixed_point()), 0.0, atol=1e-14)


def test_brusselator_jacobian_matches_finite_differences(rng):
    sys = BrusselatorSystem.on_graph(generate_er(5, 0.7, seed=4))
    x = rng.uniform(0.5, 1.5, 10)
    J = sys.jacobian(x)
    eps = 1e-6
    fd = np.column_stack([(sys(x + eps * e) - sys(x - eps * e)) / (2 * eps) for e in np.eye(10)])
    np.testing.assert_allclose(J, fd, atol=1e-8)


def test_batched_field_matches_rowwise(rng):
    sys = BrusselatorSystem.on_graph(complete_graph(3))
    X = rng.uniform(0, 1, (4, 6))
    np.testing.assert_allclose(sys(X), np.stack([sys(x) for x in X]))


def test_rk4_is_fourth_order():
    f = lambda x, t: -x
    errs = [abs(integrate(f, np.ones(1), (0, 1), h).states[-1, 0] - np.exp(-1))
            for h in (0.1, 0.05)]
    assert 14 < errs[0] / errs[1] < 18


def test_euler_step_definition():
    f = lambda x, t: 2 * x
    assert euler_step(f, np.array([1.0]), 0.0, 0.1)[0] == pytest.approx(1.2)
    assert rk4_step(f, np.array([1.0]), 0.0, 0.1)[0] == pytest.approx(
        1 + 0.2 + 0.02 + 0.2**3 / 6 + 0.2**4 / 24)


def test_lotka_volterra_equilibrium():
    lv = LotkaVolterra(1.0, 0.5, 0.2, 0.6)
    np.testing.assert_allclose(lv(lv.equilibrium()), 0.0, atol=1e-15)


def test_blowup_raises_with_step():
    with pytest.raises(IntegrationError) as err:
        integrate(lambda x, t: x * x, np.array([1.0]), (0, 10), 0.5, scheme="euler")
    assert err.value.step > 0


def test_integrate_validation():
    f = lambda x, t: x
    with pytest.raises(ValueError):
        integrate(f, np.ones(1), (0, 1), -0.1)
    with pytest.raises(ValueError):
        integrate(f, np.ones(1), (0, 1), 0.1, scheme="rk45")
    with pytest.raises(ValueError):
        DiffusionSystem.on_graph(complete_graph(3))(np.ones(4))


def test_trajectory_csv_round_trip(tmp_path, rng):
    tr = Trajectory(np.linspace(0, 1, 5), rng.standard_normal((5, 3)))
    tr.to_csv(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.times, tr.times)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)))

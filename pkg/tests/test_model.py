import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eboc.bayes import ConjugateFamily
from eboc.model import (
    AffineDynamics,
    ControlPolytope,
    ControlProblem,
    InfeasibleControlError,
    ParameterError,
    ProblemConfig,
    PwlConvexCost,
    PwlTerm,
    build_inventory,
    inventory_state_box,
    kappa,
    sinusoid_params,
    stage_cost,
    step,
)


@pytest.fixture(scope="module")
def inv1():
    return build_inventory(1, 1.0, 2.0, 3.0, 0.6, demand_mean=10.0)


@pytest.fixture(scope="module")
def inv5():
    c, h, b = sinusoid_params(5)
    return build_inventory(5, c, h, b, 0.9, demand_mean=10 + 0.5 * np.arange(1, 6))


def test_inventory_step(inv1):
    assert step(inv1, [3.0], [2.0], [4.0]).tolist() == [1.0]


def test_identity_dynamics():
    dyn = AffineDynamics.linear_in_xi(np.eye(2), np.eye(2), np.zeros(2), np.zeros((2, 2)))
    cost = PwlConvexCost((PwlTerm(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1)),))
    prob = ControlProblem(dyn, cost, ControlPolytope(2), 0.5, 1.0)
    assert step(prob, [1.5, -2.0], [0.0, 0.0], [7.0, 3.0]).tolist() == [1.5, -2.0]


def test_five_product_step_is_componentwise(inv5):
    x, u, d = np.array([1.0, -2, 3, 0, 5]), np.array([2.0, 4, 0, 1, 0]), np.array([4.0, 1, 2, 2, 6])
    np.testing.assert_array_equal(step(inv5, x, u, d), x + u - d)


def test_stage_cost_hand_example(inv1):
    assert stage_cost(inv1, [0.0], [5.0], [3.0]) == 9.0


def test_stage_cost_at_kink(inv1):
    assert stage_cost(inv1, [1.0], [2.0], [3.0]) == 2.0


def test_five_product_cost_is_sum_of_products(inv5):
    c, h, b = sinusoid_params(5)
    assert c[1] == pytest.approx(1 + 0.5 * np.sin(1))
    x, u, d = np.array([1.0, -2, 3, 0, 5]), np.array([2.0, 4, 0, 1, 0]), np.array([4.0, 1, 2, 2, 6])
    want = 0.0
    for i in range(5):
        p = build_inventory(1, c[i], h[i], b[i], 0.9)
        want += stage_cost(p, [x[i]], [u[i]], [d[i]])
    assert stage_cost(inv5, x, u, d) == pytest.approx(want, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(0, 30), st.floats(0, 40))
def test_cost_formula(x, u, d):
    p = build_inventory(1, 1.0, 2.0, 3.0, 0.6)
    y = x + u
    assert stage_cost(p, [x], [u], [d]) == pytest.approx(u + max(3 * (d - y), 2 * (y - d)), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0, 1))
def test_cost_is_convex_in_state_and_control(z, t):
    p = build_inventory(1, 1.0, 2.0, 3.0, 0.6)
    xi = [[4.0]]
    f = lambda x, u: float(p.cost.evaluate([x], [u], xi)[0])
    x0, u0, x1, u1 = z
    mid = f(t * x0 + (1 - t) * x1, t * u0 + (1 - t) * u1)
    assert mid <= t * f(x0, u0) + (1 - t) * f(x1, u1) + 1e-9


def test_negative_order_is_infeasible(inv1):
    with pytest.raises(InfeasibleControlError, match="lower bound"):
        step(inv1, [0.0], [-1.0], [1.0])


def test_joint_constraint_reported():
    dyn = AffineDynamics.linear_in_xi([[1.0]], [[1.0]], [0.0], [[-1.0]])
    cost = PwlConvexCost((PwlTerm(np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), np.zeros(1)),))
    ctl = ControlPolytope(1, lo=[0.0], Dx=[[1.0]], Du=[[1.0]], f=[5.0])  # x + u <= 5
    prob = ControlProblem(dyn, cost, ctl, 0.5, 1.0)
    assert step(prob, [2.0], [3.0], [0.0]).tolist() == [5.0]
    with pytest.raises(InfeasibleControlError, match="joint row 0"):
        step(prob, [2.0], [4.0], [0.0])


def test_empty_control_set_rejected():
    with pytest.raises(ParameterError):
        ControlPolytope(1, G=[[1.0], [-1.0]], h=[-1.0, -1.0])


def test_parameter_checks():
    with pytest.raises(ParameterError):
        build_inventory(1, 1.0, 2.0, 0.5, 0.6)
    with pytest.raises(ParameterError):
        build_inventory(1, 1.0, 2.0, 3.0, 1.0)
    with pytest.raises(ParameterError):
        PwlConvexCost(())


@pytest.mark.parametrize("gamma,want", [(0.6, 0.52), (0.9, 0.58)])
def test_kappa(gamma, want):
    assert kappa(1.0, 2.0, 3.0, gamma) == pytest.approx(want, abs=1e-12)


def test_kappa_limit():
    assert kappa(1.0, 2.0, 3.0, 1 - 1e-12) == pytest.approx(3 / 5, abs=1e-9)


def test_calibrated_cost_bound_positive(inv1):
    assert inv1.cost_bound > 0 and inv1.u_max == 200.0


def test_state_box():
    lo, hi = inventory_state_box([7.0], [10.0])
    assert lo.tolist() == [-43.0] and hi.tolist() == [27.0]


def test_problem_config_instances():
    cfg = ProblemConfig.from_dict({"dims": 1, "c": 1, "h": 2, "b": 3, "gamma": 0.6})
    p = cfg.build()
    assert (p.n, p.m, p.gamma) == (1, 1, 0.6)
    cfg5 = ProblemConfig.from_dict({"dims": 5, "sinusoidal": True, "gamma": 0.9, "theta_true": [10] * 5,
                                    "prior": {"alpha": 2, "beta": 3}})
    assert cfg5.c == tuple(sinusoid_params(5)[0])
    pri = cfg5.prior()
    assert len(pri) == 5 and pri[0].alpha == 2.0 and pri[0].family is ConjugateFamily.GAMMA_EXPONENTIAL


def test_problem_config_rejects_bad_input():
    with pytest.raises(ParameterError):
        ProblemConfig.from_dict({"dims": 2, "c": [1, 2, 3]})
    with pytest.raises(ParameterError):
        ProblemConfig.from_dict({"colour": "red"})
    with pytest.raises(ParameterError):
        ProblemConfig.from_dict({"family": "Normal"})

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from instances import opposing_pair, random_instance, scalar_floors
from resilia import AffineMap, BallConstraint, Objective, ProblemSpec, SaddleState, \
    ViolationCost, brute_force_oracle, build_scenario_set, run_arrow_hurwicz, \
    solve_mixed_enumeration, solve_resilient_joint
from resilia.resilient import arrow_hurwicz_step, cost_value, default_steps, grad_h_inverse, \
    positive_projection, slack_fixed_point_error, solve_pre_fixed_slack
from resilia.robust import solve_chance_enumeration

UNIT = ViolationCost.quadratic(np.eye(1))
PAIR = ViolationCost.quadratic(np.eye(2))


def three_sheep():
    pts = np.array([[0.8, 0.0], [-0.4, 0.6], [-0.4, -0.6]])
    scn = build_scenario_set(pts, density=[0.5, 0.3, 0.2])
    ball = BallConstraint(np.eye(2), AffineMap(np.zeros(2), np.eye(2)), 0.81, name="coverage")
    return ProblemSpec(Objective.distance_to([3.0, 0.5]), [ball], scn, np.zeros(2))


# -- costs ------------------------------------------------------------------

def test_quadratic_cost_value():
    assert cost_value(PAIR, [1.0, 1.0]) == 2.0


@pytest.mark.parametrize("s, expected", [([-1.0, -1.0], -3.0), ([0.5, -1.0], 0.0),
                                         ([0.0, 0.0], 0.0)])
def test_heaviside_cost_value(s, expected):
    assert cost_value(ViolationCost.heaviside(3.0), s) == expected


def test_linear_cost_value():
    assert cost_value(ViolationCost.linear([1.0, 2.0]), [3.0, -1.0]) == 1.0


def test_costs_vanish_at_zero():
    for h in (PAIR, ViolationCost.linear([1.0, 2.0]), ViolationCost.heaviside(4.0)):
        assert cost_value(h, np.zeros(2)) == 0.0


def test_cost_dimension_mismatch():
    with pytest.raises(ValueError):
        cost_value(PAIR, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("Gamma, y, s", [
    (np.eye(2), [1.0, 0.0], [0.5, 0.0]),
    (np.diag([2.0, 4.0]), [4.0, 4.0], [1.0, 0.5]),
    (np.diag([2.0, 4.0]), [0.0, 0.0], [0.0, 0.0]),
])
def test_grad_inverse(Gamma, y, s):
    h = ViolationCost.quadratic(Gamma)
    np.testing.assert_allclose(grad_h_inverse(h, y), s)
    np.testing.assert_allclose(h.grad(grad_h_inverse(h, y)), y)


def test_grad_inverse_rejects_flat_costs():
    with pytest.raises(ValueError):
        grad_h_inverse(ViolationCost.linear([1.0]), [1.0])
    with pytest.raises(ValueError):
        ViolationCost.quadratic(np.diag([1.0, 0.0]))


# -- joint solve ------------------------------------------------------------

def test_joint_on_fixture(line_problem):
    sol = solve_resilient_joint(line_problem, UNIT)
    assert sol.report.converged
    np.testing.assert_allclose([sol.z[0], sol.s[0, 0], sol.lam[0, 0]], [0.5, 0.5, 1.0],
                               atol=1e-9)
    assert sol.report.primal_value == pytest.approx(0.5, abs=1e-12)


def test_joint_on_opposing_pair(opposing):
    sol = solve_resilient_joint(opposing, PAIR)
    np.testing.assert_allclose(sol.z, [0.0], atol=1e-9)
    np.testing.assert_allclose(sol.s[:, 0], [1.0, 1.0], atol=1e-9)


def test_joint_without_binding_constraints():
    ps = scalar_floors([-3.0, -1.0])
    sol = solve_resilient_joint(ps, UNIT)
    np.testing.assert_allclose(sol.z, [0.0], atol=1e-9)
    np.testing.assert_allclose(sol.s, 0.0, atol=1e-9)


def test_fixed_slack_on_fixture(line_problem):
    sol = solve_pre_fixed_slack(line_problem, 0.5)
    np.testing.assert_allclose(sol.z, [0.5], atol=1e-10)
    assert sol.report.primal_value == pytest.approx(0.25, abs=1e-12)


def test_zero_slack_is_worst_case():
    from resilia import solve_worst_case
    ps = scalar_floors([1.0, 2.0])
    np.testing.assert_allclose(solve_pre_fixed_slack(ps, 0.0).z, solve_worst_case(ps).z)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relaxation_never_increases_value(seed):
    rng = np.random.default_rng(seed)
    ps = random_instance(rng)
    s = rng.uniform(0, 0.5, size=(ps.m, ps.n_scenarios))
    bigger = s + rng.uniform(0, 0.5, size=s.shape) * (rng.random(s.shape) < 0.5)
    tight = solve_pre_fixed_slack(ps, s).report.primal_value
    loose = solve_pre_fixed_slack(ps, bigger).report.primal_value
    assert loose <= tight + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_slack_fixed_point_diagonal_cost(seed):
    rng = np.random.default_rng(seed)
    ps = random_instance(rng)
    h = ViolationCost.quadratic(np.diag(rng.uniform(0.2, 5.0, ps.m)))
    sol = solve_resilient_joint(ps, h)
    assert sol.report.converged
    assert np.all(sol.s >= 0)
    assert slack_fixed_point_error(ps, h, sol) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_slack_fixed_point_coupled_cost_sign_free(seed):
    # with off-diagonal Gamma the sign constraint on s can bind; drop it
    rng = np.random.default_rng(seed)
    ps = random_instance(rng)
    G = rng.normal(size=(ps.m, ps.m))
    h = ViolationCost.quadratic(G @ G.T + 0.3 * np.eye(ps.m))
    sol = solve_resilient_joint(ps, h, nonneg=False)
    assert sol.report.converged
    assert slack_fixed_point_error(ps, h, sol) <= 1e-6


def test_fixed_point_uses_density_not_weight():
    ps = three_sheep()
    h = ViolationCost.quadratic(np.array([[2.0]]))
    sol = solve_resilient_joint(ps, h)
    f = ps.scenarios.density
    np.testing.assert_allclose(sol.s[0], sol.lam[0] / f / 4.0, atol=1e-8)


# -- saddle dynamics --------------------------------------------------------

def test_positive_projection_cases():
    np.testing.assert_array_equal(positive_projection([1.0, 0.0, 0.0], [-3.0, -3.0, 2.0]),
                                  [-3.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        positive_projection([-1.0], [1.0])


def test_step_keeps_kkt_point(line_problem):
    state = SaddleState(np.array([0.5]), np.array([[1.0]]), np.array([[0.5]]), 0.1, 0.1)
    nxt = arrow_hurwicz_step(line_problem, UNIT, state)
    np.testing.assert_allclose(nxt.z, state.z, atol=1e-15)
    np.testing.assert_allclose(nxt.lam, state.lam, atol=1e-15)
    assert nxt.iteration == 1


def test_single_step_from_zero(line_problem):
    state = SaddleState(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)), 0.1, 0.1)
    nxt = arrow_hurwicz_step(line_problem, UNIT, state)
    assert nxt.z[0] == 0.0
    assert nxt.lam[0, 0] == pytest.approx(0.1, abs=1e-15)


def test_step_with_inactive_duals():
    ps = scalar_floors([-3.0])
    state = SaddleState(np.array([1.0]), np.zeros((1, 1)), np.zeros((1, 1)), 0.1, 0.1)
    nxt = arrow_hurwicz_step(ps, UNIT, state)
    assert nxt.lam[0, 0] == 0.0
    assert abs(nxt.z[0]) < 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_steps_keep_duals_nonnegative(seed):
    rng = np.random.default_rng(seed)
    ps = random_instance(rng)
    h = ViolationCost.quadratic(np.eye(ps.m))
    ep, ed = default_steps(ps, h)
    state = SaddleState(rng.normal(size=ps.dim), rng.uniform(0, 0.2, size=(ps.m, ps.n_scenarios)),
                        np.zeros((ps.m, ps.n_scenarios)), ep, ed)
    for _ in range(20):
        with np.errstate(over="ignore", invalid="ignore"):
            state = arrow_hurwicz_step(ps, h, state)
        if not np.all(np.isfinite(state.lam)):
            break  # raw steps may overshoot on stiff balls; runs roll these back
        assert np.all(state.lam >= 0)


def test_saddle_converges_on_fixture(line_problem):
    state, rep = run_arrow_hurwicz(line_problem, UNIT)
    assert rep.status == "converged"
    np.testing.assert_allclose([state.z[0], state.lam[0, 0], state.s[0, 0]], [0.5, 1.0, 0.5],
                               atol=1e-6)


def test_saddle_infinite_tolerance_returns_init(line_problem):
    init = SaddleState(np.array([0.3]), np.array([[0.2]]), np.array([[0.1]]), 0.1, 0.1)
    state, rep = run_arrow_hurwicz(line_problem, UNIT, init=init, tol=np.inf)
    assert rep.iterations == 0
    np.testing.assert_array_equal(state.z, init.z)
    np.testing.assert_array_equal(state.lam, init.lam)


def test_saddle_step_cap_status(line_problem):
    _, rep = run_arrow_hurwicz(line_problem, UNIT, max_iter=3, tol=0.0)
    assert rep.status == "max-iterations" and rep.iterations == 3


def _agree(ps, h, tol=1e-5):
    joint = solve_resilient_joint(ps, h)
    state, rep = run_arrow_hurwicz(ps, h)
    assert joint.report.converged and rep.status == "converged"
    np.testing.assert_allclose(state.z, joint.z, atol=tol)
    np.testing.assert_allclose(state.lam, joint.lam, atol=tol)
    np.testing.assert_allclose(state.s, joint.s, atol=tol)


def test_saddle_matches_joint_on_shepherd():
    _agree(three_sheep(), ViolationCost.quadratic(np.array([[2.0]])))


def test_saddle_matches_joint_on_opposing_pair(opposing):
    _agree(opposing, PAIR)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_saddle_matches_joint_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    ps = random_instance(rng, max_dim=3, max_cons=2, max_scn=3)
    _agree(ps, ViolationCost.quadratic(np.diag(rng.uniform(0.5, 2.0, ps.m))))


# -- brute force ------------------------------------------------------------

def test_oracle_on_fixture(line_problem):
    z, s, value = brute_force_oracle(line_problem, UNIT, [(0, 1, 1001), (0, 1, 1001)])
    assert value == pytest.approx(0.5, abs=1e-3)
    assert z[0] == pytest.approx(0.5, abs=2e-3)


def test_oracle_zero_slack_when_feasible():
    ps = scalar_floors([-1.0])
    z, s, _ = brute_force_oracle(ps, UNIT, [(-1, 1, 201), (0, 1, 101)])
    assert s[0, 0] == 0.0 and z[0] == pytest.approx(0.0, abs=1e-12)


def test_oracle_on_opposing_pair(opposing):
    z, s, value = brute_force_oracle(opposing, PAIR, [(-1, 1, 101), (0, 2, 101), (0, 2, 101)])
    assert abs(z[0]) <= 0.02 and value == pytest.approx(2.0, abs=0.05)


def test_oracle_rejects_large_grids():
    ps = random_instance(np.random.default_rng(0), max_dim=6)
    ps = ps.with_constraints(ps.constraints[:1])
    h = UNIT
    with pytest.raises(ValueError):
        brute_force_oracle(ps, h, [(0, 1, 2)] * 7)


# -- all-or-nothing enumeration --------------------------------------------

def test_enumeration_without_reward():
    ps = scalar_floors([1.0, 3.0], weights=[0.6, 0.4])
    res = solve_mixed_enumeration(ps, [], [0], 0.0)
    assert res.subset == () and res.achieved_delta == pytest.approx(1.0)
    np.testing.assert_allclose(res.z, [0.0], atol=1e-9)


def test_enumeration_large_reward_satisfies_all():
    ps = scalar_floors([1.0, 3.0], weights=[0.6, 0.4])
    res = solve_mixed_enumeration(ps, [], [0], 1e6)
    assert res.subset == (0, 1) and res.achieved_delta == 0.0


def test_enumeration_drops_expensive_scenario():
    # enforcing xi = 3 adds 8 to J but only earns 10 * 0.4
    ps = scalar_floors([1.0, 3.0], weights=[0.6, 0.4])
    res = solve_mixed_enumeration(ps, [], [0], 10.0)
    assert res.subset == (0,)
    assert res.achieved_delta == pytest.approx(0.4)
    np.testing.assert_allclose(res.z, [1.0], atol=1e-9)
    direct = solve_chance_enumeration(ps, res.achieved_delta)
    assert ps.objective.value(res.z) == pytest.approx(direct.value, abs=1e-6)
    # hard-row slacks are the signed constraint values
    np.testing.assert_allclose(res.s[0], [0.0, 2.0], atol=1e-9)


def test_enumeration_scenario_cap():
    ps = scalar_floors(np.arange(17.0))
    with pytest.raises(ValueError):
        solve_mixed_enumeration(ps, [], [0], 1.0)


def test_enumeration_with_soft_rows(opposing):
    res = solve_mixed_enumeration(opposing, [0], [1], 100.0,
                                  soft_cost=ViolationCost.quadratic(np.eye(1)))
    # the hard floor z >= 1 is worth keeping; the soft ceiling absorbs the conflict
    assert res.subset == (0,)
    assert res.z[0] >= 1.0 - 1e-9

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseflock.control import ControlSignal, RunningCost, control_l1_cost
from sparseflock.dynamics import TimeGrid
from sparseflock.kernels import Kernel
from sparseflock.measures import Configuration
from sparseflock.optimizer import (
    OptimalControlProblem,
    OptimizerParams,
    brute_force_solve,
    prox_l1_ball,
    smooth_cost,
    smooth_gradient,
    solve,
    sparsity_fraction,
)

from oracles import quadratic_tracking_gradient


def small_problem(
    rng=None,
    m=1,
    n=1,
    d=1,
    n_cells=2,
    radius=1.0,
    n_steps=16,
    horizon=1.0,
    weight=1.0,
    kernel=None,
    cost=None,
    opts=None,
):
    rng = rng or np.random.default_rng(0)
    kernel = kernel or Kernel.cucker_smale(d, strength=0.7, scale=1.0, exponent=0.45)
    cost = cost or RunningCost("velocity_consensus", weight=weight)
    c0 = Configuration(
        rng.normal(size=(m, d)),
        rng.normal(size=(m, d)),
        rng.normal(size=(n, d)),
        rng.normal(size=(n, d)),
    )
    template = ControlSignal.zero(n_cells, m, d, horizon, radius)
    grid = TimeGrid(horizon, n_steps, template.breakpoints())
    return OptimalControlProblem(
        c0, kernel, cost, grid, n_cells, radius, opts or OptimizerParams()
    )


def finite_difference_gradient(problem, u, step=1e-5):
    vals = u.cell_values
    grad = np.zeros_like(vals)
    it = np.nditer(vals, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = vals.copy()
        minus = vals.copy()
        plus[idx] += step
        minus[idx] -= step
        sp = smooth_cost(problem, problem.signal(plus))
        sm = smooth_cost(problem, problem.signal(minus))
        grad[idx] = (sp - sm) / (2.0 * step)
    return grad


# -- prox ---------------------------------------------------------------------


def test_prox_shrinks_radially():
    v = np.array([0.0, 2.0])
    out = prox_l1_ball(v, threshold=0.5, radius=1e9)
    assert np.allclose(out, [0.0, 1.5], rtol=1e-15)


def test_prox_kills_small_vectors():
    out = prox_l1_ball(np.array([0.3, -0.2]), threshold=0.5, radius=1.0)
    assert np.array_equal(out, np.zeros(2))


def test_prox_pure_projection():
    out = prox_l1_ball(np.array([3.0, 4.0]), threshold=0.0, radius=1.0)
    assert np.allclose(out, [0.6, 0.8], rtol=1e-15)


@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=3),
    st.floats(0, 2),
    st.floats(0.1, 3),
)
def test_prox_properties(vec, threshold, radius):
    v = np.array(vec)
    out = prox_l1_ball(v, threshold, radius)
    # admissible, shorter than input, and collinear with it
    assert np.linalg.norm(out) <= radius + 1e-12
    assert np.linalg.norm(out) <= np.linalg.norm(v) + 1e-12
    cross = np.linalg.norm(v) * out - np.linalg.norm(out) * v
    assert np.linalg.norm(cross) <= 1e-9 * max(1.0, np.linalg.norm(v)) ** 2


# -- gradient ------------------------------------------------------------------


def test_gradient_zero_when_cost_weight_zero(rng):
    p = small_problem(rng, weight=0.0)
    u = p.signal(rng.normal(size=(2, 1, 1)) * 0.1)
    grad, value, _ = smooth_gradient(p, u)
    assert value == 0.0
    assert np.array_equal(grad, np.zeros_like(grad))


def test_gradient_matches_scalar_calculus():
    # single leader, no followers, zero kernel, track w*: S(c) is an explicit
    # quadrature in the single cell value c
    target_w = 1.3
    w0 = -0.4
    horizon = 1.0
    n_steps = 24
    c0 = Configuration(np.array([[0.0]]), np.array([[w0]]), np.zeros((0, 1)), np.zeros((0, 1)))
    cost = RunningCost(
        "leader_tracking", weight=1.0, target_y=np.array([[0.0]]), target_w=np.array([[target_w]])
    )
    grid = TimeGrid(horizon, n_steps)
    p = OptimalControlProblem(c0, Kernel.zero(1), cost, grid, 1, 10.0)
    c_val = 0.37
    u = p.signal(np.full((1, 1, 1), c_val))
    grad, _, _ = smooth_gradient(p, u)
    # leader_tracking also tracks y; integrate d/dc of |y(t)|^2 term: y(t) = t^2 c/2
    ts = np.linspace(0.0, horizon, n_steps + 1)
    wts = np.full(n_steps + 1, horizon / n_steps)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    expected_w = quadratic_tracking_gradient(w0, target_w, horizon, n_steps)(c_val)
    expected_y = math.fsum(
        wts[j] * 2.0 * (0.0 + w0 * ts[j] + 0.5 * c_val * ts[j] ** 2 - 0.0) * 0.5 * ts[j] ** 2
        for j in range(n_steps + 1)
    )
    assert math.isclose(grad[0, 0, 0], expected_w + expected_y, rel_tol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    n = int(rng.integers(1, 6))
    d = int(rng.integers(1, 3))
    n_cells = int(rng.integers(1, 4))
    family = rng.choice(["velocity_consensus", "leader_tracking"])
    if family == "leader_tracking":
        cost = RunningCost(
            "leader_tracking",
            weight=float(rng.uniform(0.5, 2.0)),
            target_y=rng.normal(size=(m, d)),
            target_w=rng.normal(size=(m, d)),
        )
    else:
        cost = RunningCost("velocity_consensus", weight=float(rng.uniform(0.5, 2.0)))
    p = small_problem(rng, m=m, n=n, d=d, n_cells=n_cells, n_steps=12, cost=cost)
    u = p.signal(rng.normal(size=(n_cells, m, d)) * 0.3)
    grad, _, _ = smooth_gradient(p, u)
    fd = finite_difference_gradient(p, u)
    scale = max(1e-12, float(np.max(np.abs(grad))))
    assert np.max(np.abs(grad - fd)) / scale < 1e-6


def test_gradient_measure_target_a_e(rng):
    # transport-plan gradient at a generic point agrees with differences
    from sparseflock.measures import EmpiricalMeasure

    target = EmpiricalMeasure.uniform(rng.normal(size=(3, 2)) + 2.0)
    cost = RunningCost("measure_target", weight=1.0, target_measure=target)
    p = small_problem(rng, m=1, n=3, d=1, n_cells=1, n_steps=8, cost=cost)
    u = p.signal(rng.normal(size=(1, 1, 1)) * 0.2)
    grad, _, _ = smooth_gradient(p, u)
    fd = finite_difference_gradient(p, u, step=1e-6)
    scale = max(1e-12, float(np.max(np.abs(grad))))
    assert np.max(np.abs(grad - fd)) / scale < 1e-4


# -- solve ---------------------------------------------------------------------


def test_solve_pure_l1_returns_zero_control(rng):
    from sparseflock.control import project_admissible

    p = small_problem(rng, weight=0.0)
    u0 = project_admissible(p.signal(rng.normal(size=(2, 1, 1)) * 0.5))
    report = solve(p, u0)
    assert report.converged
    assert np.array_equal(report.control.cell_values, np.zeros((2, 1, 1)))
    assert report.cost == 0.0
    assert report.sparsity_fraction == 1.0


def test_solve_monotone_history(rng):
    p = small_problem(rng, m=1, n=4, d=2, n_cells=3, weight=5.0, n_steps=24)
    report = solve(p)
    assert all(b <= a + 1e-12 for a, b in zip(report.history, report.history[1:]))
    assert report.control.is_admissible(tol=1e-12)


def test_solve_iterates_stay_admissible(rng):
    p = small_problem(rng, m=2, n=3, d=2, n_cells=2, weight=50.0, radius=0.3)
    report = solve(p)
    norms = np.linalg.norm(report.control.cell_values, axis=2)
    assert np.all(norms <= 0.3 * (1 + 1e-12))


def test_doubling_weight_never_lowers_control_effort(rng):
    efforts = []
    for weight in (1.0, 2.0, 4.0, 8.0):
        p = small_problem(
            rng=np.random.default_rng(5), m=1, n=4, d=1, n_cells=2, weight=weight,
            cost=RunningCost(
                "leader_tracking", weight=weight,
                target_y=np.array([[2.0]]), target_w=np.array([[0.0]]),
            ),
        )
        efforts.append(control_l1_cost(solve(p).control))
    for a, b in zip(efforts, efforts[1:]):
        assert b >= a - 1e-10


# -- brute force ----------------------------------------------------------------


def tiny_problem(weight, seed=0, n_cells=2, levels_budget_guard=True):
    rng = np.random.default_rng(seed)
    cost = RunningCost(
        "leader_tracking", weight=weight,
        target_y=np.array([[1.5]]), target_w=np.array([[0.0]]),
    )
    return small_problem(rng, m=1, n=1, d=1, n_cells=n_cells, n_steps=8, cost=cost)


def test_brute_force_trivial_lattice():
    p = tiny_problem(weight=0.0)
    report = brute_force_solve(p, levels_per_axis=3)
    assert report.cost == 0.0
    assert np.array_equal(report.control.cell_values, np.zeros((2, 1, 1)))


def test_brute_force_budget_guard():
    p = small_problem(np.random.default_rng(0), m=2, d=2, n_cells=4)
    with pytest.raises(ValueError):
        brute_force_solve(p, levels_per_axis=9)  # 9^16 candidates


def test_brute_force_refinement_never_worse():
    p = tiny_problem(weight=3.0)
    j3 = brute_force_solve(p, levels_per_axis=3).cost
    j9 = brute_force_solve(p, levels_per_axis=9).cost
    assert j9 <= j3 + 1e-12


def test_solve_beats_or_matches_lattice():
    for seed in range(4):
        p = tiny_problem(weight=4.0, seed=seed)
        lattice = brute_force_solve(p, levels_per_axis=5)
        continuous = solve(p)
        assert continuous.cost <= lattice.cost + 1e-6 * (1 + abs(lattice.cost))


def test_sparsity_mechanism_exact_zeros():
    # gradient magnitude below the prox threshold at a cell -> exact zero cell
    p = tiny_problem(weight=0.35)
    report = solve(p)
    zero_cells = np.all(report.control.cell_values == 0.0, axis=2)
    assert sparsity_fraction(report.control) == float(np.mean(zero_cells))
    some_iterate_zero = report.sparsity_fraction > 0.0
    # weight chosen near the activation threshold: at least one exact zero
    assert some_iterate_zero

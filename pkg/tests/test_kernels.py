import numpy as np
import pytest

from sparseflock.kernels import (
    GrowthBoundError,
    Kernel,
    convolve_empirical,
    estimate_growth_constant,
    eval_kernel,
    lipschitz_bound,
)
from sparseflock.measures import EmpiricalMeasure

from oracles import cucker_smale_pair, naive_convolution, repulsion_attraction_pair


def test_cucker_smale_beta_zero_is_pure_velocity():
    k = Kernel.cucker_smale(2, strength=1.0, scale=1.0, exponent=0.0, sign=-1.0)
    out = eval_kernel(k, np.array([3.0, 4.0]), np.array([1.0, 0.0]))
    assert np.array_equal(out, np.array([-1.0, 0.0]))


def test_repulsion_attraction_balances_at_unit_distance():
    k = Kernel.repulsion_attraction(2, sigma_r=1.0, sigma_a=1.0, regularizer=1e-6)
    out = eval_kernel(k, np.array([1.0, 0.0]), np.array([5.0, -2.0]))
    assert np.allclose(out, 0.0, atol=1e-15)


@pytest.mark.parametrize(
    "kernel",
    [
        Kernel.cucker_smale(2),
        Kernel.repulsion_attraction(2),
        Kernel.custom_table(2, np.array([0.1, 1.0, 2.0]), np.array([1.0, 0.5, 0.0])),
        Kernel.zero(2),
    ],
)
def test_origin_maps_to_zero(kernel):
    out = eval_kernel(kernel, np.zeros(2), np.zeros(2))
    assert np.array_equal(out, np.zeros(2))


def test_eval_rejects_bad_input():
    k = Kernel.cucker_smale(2)
    with pytest.raises(ValueError):
        eval_kernel(k, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        eval_kernel(k, np.array([np.nan, 0.0]), np.zeros(2))


def test_cucker_smale_matches_independent_formula(rng):
    k = Kernel.cucker_smale(3, strength=1.7, scale=0.8, exponent=0.45, sign=-1.0)
    for _ in range(20):
        dx, dv = rng.normal(size=3), rng.normal(size=3)
        expected = cucker_smale_pair(dx, dv, 1.7, 0.8, 0.45, -1.0)
        assert np.allclose(eval_kernel(k, dx, dv), expected, rtol=1e-14)


def test_cucker_smale_linear_in_velocity(rng):
    k = Kernel.cucker_smale(2, exponent=0.45)
    for _ in range(20):
        dx, dv = rng.normal(size=2), rng.normal(size=2)
        alpha = float(rng.normal())
        lhs = eval_kernel(k, dx, alpha * dv)
        rhs = alpha * eval_kernel(k, dx, dv)
        assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-15)


def test_repulsion_attraction_matches_independent_formula(rng):
    k = Kernel.repulsion_attraction(2, sigma_r=0.3, sigma_a=1.1, regularizer=1e-3)
    for _ in range(20):
        dx, dv = rng.normal(size=2), rng.normal(size=2)
        expected = repulsion_attraction_pair(dx, dv, 0.3, 1.1, 1e-3)
        assert np.allclose(eval_kernel(k, dx, dv), expected, rtol=1e-13)


def test_custom_table_interpolates_and_clamps():
    k = Kernel.custom_table(1, np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    # midpoint interpolation: f(1.5) = 3 -> H = 3 * dx
    out = eval_kernel(k, np.array([1.5]), np.array([0.0]))
    assert np.allclose(out, [4.5], rtol=1e-14)
    # clamped beyond the last knot: f(5) = 4
    out = eval_kernel(k, np.array([5.0]), np.array([0.0]))
    assert np.allclose(out, [20.0], rtol=1e-14)


# -- condition (H) ----------------------------------------------------------


def test_zero_kernel_growth_estimate_is_zero():
    assert estimate_growth_constant(Kernel.zero(2), 5.0, 100, 0) == 0.0


def test_growth_estimate_approaches_declared_on_large_velocities():
    k = Kernel.cucker_smale(1, strength=2.0, exponent=0.0)
    box = np.array([[-1.0, -1e4], [1.0, 1e4]])  # positions small, velocities huge
    est = estimate_growth_constant(k, box, 2000, 3)
    assert est <= 2.0
    assert est > 1.9


def test_growth_estimate_finite_with_active_cap():
    k = Kernel.repulsion_attraction(2, sigma_r=100.0, sigma_a=1.0, regularizer=1e-6)
    est = estimate_growth_constant(k, 2.0, 500, 1)
    assert np.isfinite(est)
    assert est <= k.growth_constant


def test_understated_growth_constant_is_reported_with_witness():
    k = Kernel.cucker_smale(1, strength=2.0, exponent=0.0, growth_constant=0.5)
    with pytest.raises(GrowthBoundError) as err:
        estimate_growth_constant(k, np.array([[-0.1, -100.0], [0.1, 100.0]]), 500, 0)
    assert err.value.estimate > 0.5
    assert err.value.witness.shape == (2,)


@pytest.mark.parametrize(
    "kernel",
    [
        Kernel.cucker_smale(2, strength=1.3, scale=0.7, exponent=0.45),
        Kernel.cucker_smale(2, exponent=0.0),
        Kernel.repulsion_attraction(2, sigma_r=2.0, sigma_a=0.5),
        Kernel.custom_table(2, np.array([0.5, 1.0, 3.0]), np.array([2.0, -1.0, 0.0])),
        Kernel.zero(2),
    ],
)
def test_condition_h_on_seeded_box(kernel):
    # 1e3 seeded samples in [-R, R]^{2d}: |H| <= C (1 + |xi|) never violated
    est = estimate_growth_constant(kernel, 8.0, 1000, 42)
    assert est <= kernel.growth_constant


# -- convolution ------------------------------------------------------------


def test_convolution_single_atom_at_query_is_zero():
    k = Kernel.cucker_smale(2)
    mu = EmpiricalMeasure.uniform(np.array([[1.0, 2.0, 3.0, 4.0]]))
    out = convolve_empirical(k, mu, np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.array_equal(out, np.zeros(2))


def test_convolution_two_atom_hand_sum():
    k = Kernel.cucker_smale(1, strength=1.0, exponent=0.0, sign=-1.0)
    mu = EmpiricalMeasure.uniform(np.array([[0.0, 1.0], [0.0, 3.0]]))
    out = convolve_empirical(k, mu, np.array([0.0, 0.0]))
    assert np.allclose(out, [2.0], rtol=0, atol=0)


def test_convolution_against_naive_oracle(rng):
    k = Kernel.cucker_smale(2, strength=1.2, scale=0.9, exponent=0.45, sign=-1.0)
    atoms = rng.normal(size=(17, 4))
    mu = EmpiricalMeasure.uniform(atoms)
    query = rng.normal(size=4)
    expected = naive_convolution(
        lambda dx, dv: cucker_smale_pair(dx, dv, 1.2, 0.9, 0.45, -1.0),
        atoms,
        mu.weights,
        query,
    )
    got = convolve_empirical(k, mu, query)
    assert np.allclose(got, expected, rtol=1e-13, atol=1e-15)


def test_convolution_atom_bound(rng):
    # |H * mu (xi)| <= C (1 + |xi| + first moment)
    k = Kernel.cucker_smale(2, strength=1.5, exponent=0.45)
    for _ in range(10):
        atoms = rng.normal(size=(9, 4)) * 2.0
        mu = EmpiricalMeasure.uniform(atoms)
        q = rng.normal(size=4) * 3.0
        bound = k.growth_constant * (1.0 + np.linalg.norm(q) + mu.first_moment())
        assert np.linalg.norm(convolve_empirical(k, mu, q)) <= bound + 1e-12


def test_convolution_permutation_invariant_bitwise(rng):
    k = Kernel.repulsion_attraction(2, sigma_r=0.4, sigma_a=0.9)
    atoms = rng.normal(size=(23, 4))
    mu = EmpiricalMeasure.uniform(atoms)
    query = rng.normal(size=4)
    base = convolve_empirical(k, mu, query)
    for _ in range(5):
        perm = rng.permutation(23)
        shuffled = EmpiricalMeasure.uniform(atoms[perm])
        assert np.array_equal(convolve_empirical(k, shuffled, query), base)


def test_convolution_linear_in_measure(rng):
    k = Kernel.cucker_smale(2, exponent=0.45)
    a = rng.normal(size=(8, 4))
    b = rng.normal(size=(8, 4))
    query = rng.normal(size=4)
    union = EmpiricalMeasure.uniform(np.vstack([a, b]))
    mean = 0.5 * (
        convolve_empirical(k, EmpiricalMeasure.uniform(a), query)
        + convolve_empirical(k, EmpiricalMeasure.uniform(b), query)
    )
    assert np.allclose(convolve_empirical(k, union, query), mean, rtol=1e-13, atol=1e-15)


def test_convolution_rejects_empty_measure():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((0, 4)), np.zeros(0))


def test_lipschitz_bound_dominates_sampled_differences(rng):
    k = Kernel.cucker_smale(2, strength=1.5, exponent=0.45)
    bound = lipschitz_bound(k, radius=3.0)
    for _ in range(200):
        p, q = rng.uniform(-3, 3, size=4), rng.uniform(-3, 3, size=4)
        num = np.linalg.norm(eval_kernel(k, p[:2], p[2:]) - eval_kernel(k, q[:2], q[2:]))
        den = np.linalg.norm(p - q)
        if den > 1e-9:
            assert num <= bound * den * (1 + 1e-9)

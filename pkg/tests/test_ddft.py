"""Tests for the mean-field density-functional machinery."""

import numpy as np
import pytest

from specelem.dae import StepperConfig
from specelem.ddft import (
    DynamicsOperators,
    SpeciesParams,
    build_interaction_convolutions,
    free_energy,
    interaction_gradient_kernels,
    interaction_kernel,
    normalize_initial_condition,
    picard_equilibrium,
    simulate_dynamics,
)
from specelem.domain import CompositeDomain
from specelem.elements import QuadElement
from specelem.errors import NumericError
from specelem.steady import error_measure


def box(x1a, x2a, x1b, x2b, n1, n2):
    corners = np.array([[x1a, x2a], [x1a, x2b], [x1b, x2b], [x1b, x2a]], dtype=float)
    return QuadElement(corners=corners, n1=n1, n2=n2)


def unit_domain(n=8):
    return CompositeDomain([box(0, 0, 1, 1, n, n)])


def two_box_domain(n=8):
    return CompositeDomain([box(0, 0, 1, 1, n, n), box(1, 0, 2, 1, n, n)])


def make_params(dom, kappa, sigma, c_mass, v_vals=None, v_grad=None):
    ns = len(c_mass)
    m = dom.num_points
    if v_vals is None:
        v_vals = np.zeros((ns, m))
        v_grad = np.zeros((ns, 2 * m))
    return SpeciesParams(
        kappa=np.array(kappa, dtype=float),
        sigma=np.array(sigma, dtype=float),
        v_ext=v_vals,
        v_ext_grad=v_grad,
        c_mass=np.array(c_mass, dtype=float),
    )


def gravity_params(dom, c, c_mass=(1.0,), kappa=((0.0,),), sigma=((1.0,),)):
    """Single-species or diagonal setup with V = c * x2."""
    ns = len(c_mass)
    m = dom.num_points
    x2 = dom.pts_cart[:, 1]
    v = np.tile(c * x2, (ns, 1))
    g = np.tile(dom.vector_from_cartesian(np.zeros(m), np.full(m, c)), (ns, 1))
    return make_params(dom, kappa, sigma, c_mass, v, g)


class TestKernels:
    def test_zero_strength(self):
        dom = unit_domain(4)
        params = make_params(dom, [[0.0]], [[1.0]], [1.0])
        kern = interaction_kernel(params, 0, 0)
        assert np.all(kern.fn(np.linspace(0, 3, 7)) == 0)

    def test_value_at_origin_is_strength(self):
        dom = unit_domain(4)
        params = make_params(dom, [[-2.5]], [[0.7]], [1.0])
        assert interaction_kernel(params, 0, 0).fn(0.0) == pytest.approx(-2.5)

    def test_gradient_at_sigma_displacement(self):
        dom = unit_domain(4)
        kappa, sigma = 1.8, 0.6
        params = make_params(dom, [[kappa]], [[sigma]], [1.0])
        k1, _ = interaction_gradient_kernels(params, 0, 0)
        got = k1.fn(np.array([sigma]), np.array([0.0]))[0]
        assert got == pytest.approx(-2.0 * kappa * np.exp(-1.0) / sigma)

    def test_gradient_matches_finite_differences(self):
        dom = unit_domain(4)
        params = make_params(dom, [[-0.9]], [[1.3]], [1.0])
        value = interaction_kernel(params, 0, 0)
        k1, k2 = interaction_gradient_kernels(params, 0, 0)
        h = 1e-6
        for d in ((0.3, -0.8), (1.1, 0.2)):
            d1, d2 = np.array([d[0]]), np.array([d[1]])
            fd1 = (value.evaluate(d1 + h, d2) - value.evaluate(d1 - h, d2)) / (2 * h)
            assert k1.fn(d1, d2)[0] == pytest.approx(fd1[0], abs=1e-8)
            fd2 = (value.evaluate(d1, d2 + h) - value.evaluate(d1, d2 - h)) / (2 * h)
            assert k2.fn(d1, d2)[0] == pytest.approx(fd2[0], abs=1e-8)


class TestFreeEnergy:
    def test_uniform_ideal_gas_on_unit_area(self):
        dom = unit_domain(8)
        params = make_params(dom, [[0.0]], [[1.0]], [1.0])
        convs = build_interaction_convolutions(dom, params)
        rho = np.ones((1, dom.num_points))
        assert free_energy(dom, params, rho, convs) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_potential_shift(self):
        dom = unit_domain(8)
        m = dom.num_points
        rho = np.full((1, m), 2.0)
        base = make_params(dom, [[0.0]], [[1.0]], [2.0])
        shift = make_params(
            dom, [[0.0]], [[1.0]], [2.0],
            v_vals=np.full((1, m), 1.7), v_grad=np.zeros((1, 2 * m)),
        )
        convs = build_interaction_convolutions(dom, base)
        f0 = free_energy(dom, base, rho, convs)
        f1 = free_energy(dom, shift, rho, convs)
        mass = dom.int_row @ rho[0]
        assert f1 - f0 == pytest.approx(1.7 * mass, rel=1e-12)

    def test_interaction_term_symmetric_under_species_swap(self):
        dom = unit_domain(6)
        m = dom.num_points
        params = make_params(dom, [[0.5, 0.2], [0.2, 0.5]], [[1.0, 0.8], [0.8, 1.0]], [1.0, 1.0])
        convs = build_interaction_convolutions(dom, params)
        rng = np.random.default_rng(5)
        r1 = 1.0 + 0.1 * rng.random(m)
        r2 = 1.0 + 0.1 * rng.random(m)
        f12 = free_energy(dom, params, np.array([r1, r2]), convs)
        f21 = free_energy(dom, params, np.array([r2, r1]), convs)
        assert f12 == pytest.approx(f21, rel=1e-12)

    def test_rejects_nonpositive_density(self):
        dom = unit_domain(4)
        params = make_params(dom, [[0.0]], [[1.0]], [1.0])
        convs = build_interaction_convolutions(dom, params)
        rho = np.ones((1, dom.num_points))
        rho[0, 3] = 0.0
        with pytest.raises(ValueError):
            free_energy(dom, params, rho, convs)


class TestFlux:
    def test_uniform_density_no_forces(self):
        dom = unit_domain(6)
        params = make_params(dom, [[0.0]], [[1.0]], [1.0])
        ops = DynamicsOperators(dom, params)
        rhos = np.ones((1, dom.num_points))
        assert np.max(np.abs(ops.flux(0, rhos))) <= 1e-12

    def test_boltzmann_profile_zero_flux(self):
        dom = unit_domain(12)
        params = gravity_params(dom, 0.4)
        ops = DynamicsOperators(dom, params)
        rho = np.exp(-params.v_ext[0])
        rho = (params.c_mass[0] / (dom.int_row @ rho)) * rho
        fl = ops.flux(0, rho[None, :])
        assert np.max(np.abs(fl)) <= 1e-9

    def test_composition_against_term_by_term_oracle(self):
        dom = unit_domain(9)
        m = dom.num_points
        x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
        v = 0.3 * x1 + 0.1 * x2**2
        vg = dom.vector_from_cartesian(np.full(m, 0.3), 0.2 * x2)
        params = make_params(dom, [[0.8]], [[0.5]], [1.0], v[None, :], vg[None, :])
        ops = DynamicsOperators(dom, params)
        rho = np.exp(-((x1 - 0.5) ** 2) - (x2 - 0.4) ** 2)
        got = ops.flux(0, rho[None, :])
        conv = build_interaction_convolutions(dom, params)[0][0]
        rho2 = np.concatenate([rho, rho])
        expect = -(dom.grad @ rho + rho2 * vg + rho2 * (dom.grad @ (conv @ rho)))
        assert np.max(np.abs(got - expect)) <= 1e-12


class TestDynamicsRhs:
    def test_reduces_to_heat_equation(self):
        dom = two_box_domain(7)
        m = dom.num_points
        params = make_params(dom, [[0.0]], [[1.0]], [1.0])
        ops = DynamicsOperators(dom, params)
        x1 = dom.pts_cart[:, 0]
        rho = 1.0 + 0.2 * np.exp(-((x1 - 1.0) ** 2))
        got = ops.rhs(0.0, rho)
        flux = -(dom.grad @ rho)
        expect = -(dom.div @ flux)
        expect = dom.apply_intersection_bcs(expect, rho, flux)
        expect[dom.bound] = ops.normal_op @ flux
        assert np.array_equal(got, expect)

    def test_jacobian_matches_finite_differences(self):
        dom = two_box_domain(5)
        m = dom.num_points
        x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
        v1 = 0.2 * x2
        v2 = 0.1 * x1
        vg1 = dom.vector_from_cartesian(np.zeros(m), np.full(m, 0.2))
        vg2 = dom.vector_from_cartesian(np.full(m, 0.1), np.zeros(m))
        params = make_params(
            dom,
            [[-0.4, 0.2], [0.2, 0.3]],
            [[0.5, 0.7], [0.7, 1.0]],
            [1.0, 2.0],
            np.array([v1, v2]),
            np.array([vg1, vg2]),
        )
        ops = DynamicsOperators(dom, params)
        rng = np.random.default_rng(11)
        state = 1.0 + 0.3 * rng.random(2 * m)
        jac = ops.jacobian(0.0, state)
        base = ops.rhs(0.0, state)
        h = 1e-7
        cols = rng.choice(2 * m, size=25, replace=False)
        for k in cols:
            pert = state.copy()
            pert[k] += h
            fd = (ops.rhs(0.0, pert) - base) / h
            assert np.max(np.abs(jac[:, k] - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))

    def test_mass_flux_balance_at_boundary_rows(self):
        # when all condition rows vanish, total interior mass production is zero
        dom = unit_domain(14)
        params = gravity_params(dom, 0.2)
        convs = build_interaction_convolutions(dom, params)
        rhos, _ = picard_equilibrium(dom, params, np.ones((1, dom.num_points)), 0.8, 1e-12, convs=convs)
        ops = DynamicsOperators(dom, params, convs=convs)
        rhs = ops.rhs(0.0, rhos.ravel())
        interior = np.setdiff1d(np.arange(dom.num_points), dom.algebraic_nodes())
        assert abs(np.sum(dom.int_row[interior] * rhs[interior])) <= 1e-9

    def test_equilibrium_is_near_stationary(self):
        dom = unit_domain(16)
        params = gravity_params(dom, 0.3, kappa=((0.4,),), sigma=((0.6,),))
        convs = build_interaction_convolutions(dom, params)
        rhos, _ = picard_equilibrium(
            dom, params, np.ones((1, dom.num_points)), 0.6, 1e-12, convs=convs
        )
        ops = DynamicsOperators(dom, params, convs=convs)
        rhs = ops.rhs(0.0, rhos.ravel())
        assert np.max(np.abs(rhs)) <= 1e-6


class TestPicard:
    def test_uniform_fixed_point_immediate(self):
        dom = two_box_domain(6)
        params = make_params(dom, [[0.0]], [[1.0]], [3.0])
        area = dom.int_row.sum()
        rho_ig = np.full((1, dom.num_points), 3.0 / area)
        rhos, log = picard_equilibrium(dom, params, rho_ig, 0.5, 1e-8)
        assert len(log) <= 2
        assert np.max(np.abs(rhos - 3.0 / area)) <= 1e-12

    def test_boltzmann_oracle(self):
        dom = unit_domain(12)
        params = gravity_params(dom, 0.1)
        rhos, log = picard_equilibrium(dom, params, np.ones((1, dom.num_points)), 0.5, 1e-10)
        exact = np.exp(-0.1 * dom.pts_cart[:, 1])
        exact = exact / (dom.int_row @ exact)
        assert error_measure(rhos[0], exact, dom) <= 1e-8

    def test_mass_enforced_each_iteration(self):
        dom = unit_domain(8)
        params = gravity_params(dom, 0.5, c_mass=(2.5,), kappa=((0.3,),), sigma=((0.4,),))
        rhos, _ = picard_equilibrium(dom, params, np.ones((1, dom.num_points)), 0.5, 1e-9)
        assert dom.int_row @ rhos[0] == pytest.approx(2.5, rel=1e-12)

    def test_free_energy_logged_and_decreasing_tail(self):
        dom = unit_domain(10)
        params = gravity_params(dom, 0.2, kappa=((0.5,),), sigma=((0.5,),))
        _, log = picard_equilibrium(dom, params, np.ones((1, dom.num_points)), 0.5, 1e-10)
        energies = [row[2] for row in log]
        assert len(energies) >= 3
        assert energies[-1] <= energies[len(energies) // 2] + 1e-12

    def test_overflow_guard(self):
        dom = unit_domain(6)
        m = dom.num_points
        params = make_params(
            dom, [[0.0]], [[1.0]], [1.0],
            v_vals=np.full((1, m), -800.0), v_grad=np.zeros((1, 2 * m)),
        )
        with pytest.raises(NumericError, match="overflow"):
            picard_equilibrium(dom, params, np.ones((1, m)), 0.5, 1e-8)


class TestSimulateDynamics:
    def test_mass_normalization_exact(self):
        dom = two_box_domain(6)
        params = make_params(dom, [[0.0]], [[1.0]], [20.0])
        rho0 = normalize_initial_condition(dom, params, (dom.pts_cart[:, 0] + 5.0)[None, :])
        assert dom.int_row @ rho0[0] == pytest.approx(20.0, rel=1e-14)

    def test_diffusion_relaxes_to_uniform(self):
        dom = unit_domain(10)
        params = make_params(dom, [[0.0]], [[1.0]], [2.0])
        f_ic = (1.0 + dom.pts_cart[:, 0])[None, :]
        result = simulate_dynamics(
            dom, params, f_ic, (0.0, 4.0), stepper=StepperConfig(rtol=1e-8, atol=1e-8)
        )
        final = result.states[-1, 0]
        assert np.max(np.abs(final - 2.0)) <= 1e-6
        drift = np.abs(result.masses[:, 0] - 2.0) / 2.0
        assert np.max(drift) <= 1e-6

    def test_mass_conserved_and_energy_decays_with_interactions(self):
        dom = two_box_domain(12)
        params = gravity_params(dom, 0.3, c_mass=(2.0,), kappa=((0.4,),), sigma=((0.8,),))
        f_ic = (1.0 + 0.5 * dom.pts_cart[:, 0])[None, :]
        times = np.linspace(0.0, 1.5, 7)
        result = simulate_dynamics(dom, params, f_ic, (0.0, 1.5), output_times=times)
        drift = np.abs(result.masses[:, 0] - 2.0) / 2.0
        assert np.max(drift) <= 1e-6
        diffs = np.diff(result.free_energies)
        assert np.all(diffs <= 1e-7)

    def test_long_time_state_matches_picard(self):
        dom = two_box_domain(14)
        params = gravity_params(dom, 0.25, c_mass=(1.5,), kappa=((0.3,),), sigma=((0.6,),))
        convs = build_interaction_convolutions(dom, params)
        result = simulate_dynamics(dom, params, np.ones((1, dom.num_points)) + 0.2 * dom.pts_cart[:, 0][None, :], (0.0, 12.0), convs=convs)
        ops = result.operators
        rate = ops.rhs(12.0, result.states[-1].ravel())
        assert np.max(np.abs(rate)) <= 1e-8
        eq, _ = picard_equilibrium(dom, params, np.ones((1, dom.num_points)), 0.5, 1e-10, convs=convs)
        err = error_measure(result.states[-1, 0], eq[0], dom)
        assert err <= 1e-4

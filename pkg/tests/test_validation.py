"""Tests for error measures, the Poisson solve, and the validation harness."""

import numpy as np
import pytest

from specelem.domain import CompositeDomain
from specelem.elements import QuadElement
from specelem.steady import (
    error_measure,
    error_measure_abs,
    error_measure_linf,
    solve_poisson,
)
from specelem import validation as va


def unit_box_domain(n=8):
    corners = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=float)
    return CompositeDomain([QuadElement(corners=corners, n1=n, n2=n)])


class TestHardcodedDerivatives:
    """The closed forms were derived symbolically offline; cross-check by FD."""

    def test_first_derivatives_at_random_points(self):
        rng = np.random.default_rng(42)
        pts = rng.uniform(0.1, 2.5, size=(20, 2))
        h = 1e-6
        for x, y in pts:
            fd1 = (va.f_smooth(x + h, y) - va.f_smooth(x - h, y)) / (2 * h)
            fd2 = (va.f_smooth(x, y + h) - va.f_smooth(x, y - h)) / (2 * h)
            assert fd1 == pytest.approx(va.f_smooth_dx1(x, y), abs=1e-9)
            assert fd2 == pytest.approx(va.f_smooth_dx2(x, y), abs=1e-9)

    def test_laplacian_at_random_points(self):
        rng = np.random.default_rng(43)
        pts = rng.uniform(0.1, 2.5, size=(20, 2))
        h = 1e-4
        for x, y in pts:
            fd = (
                va.f_smooth(x + h, y)
                + va.f_smooth(x - h, y)
                + va.f_smooth(x, y + h)
                + va.f_smooth(x, y - h)
                - 4 * va.f_smooth(x, y)
            ) / h**2
            assert fd == pytest.approx(va.f_smooth_lap(x, y), abs=1e-6)

    def test_poisson_pair_consistent(self):
        rng = np.random.default_rng(44)
        pts = rng.uniform(-1.0, 2.0, size=(20, 2))
        h = 1e-4
        for x, y in pts:
            fd = (
                va.poisson_exact(x + h, y)
                + va.poisson_exact(x - h, y)
                + va.poisson_exact(x, y + h)
                + va.poisson_exact(x, y - h)
                - 4 * va.poisson_exact(x, y)
            ) / h**2
            assert fd == pytest.approx(va.poisson_rhs(x, y), abs=1e-6)


class TestErrorMeasures:
    def test_zero_for_equal_fields(self):
        dom = unit_box_domain()
        f = dom.pts_cart[:, 0]
        assert error_measure(f, f, dom) == 0.0

    def test_regularizer_path(self):
        dom = unit_box_domain()
        m = dom.num_points
        c = 0.5
        got = error_measure(np.full(m, c), np.zeros(m), dom)
        assert got == pytest.approx(c / 1e-10, rel=1e-12)

    def test_numerator_homogeneity(self):
        dom = unit_box_domain()
        rng = np.random.default_rng(1)
        f_ex = rng.standard_normal(dom.num_points)
        delta = rng.standard_normal(dom.num_points)
        e1 = error_measure(f_ex + delta, f_ex, dom)
        e2 = error_measure(f_ex + 2 * delta, f_ex, dom)
        assert e2 == pytest.approx(2 * e1, rel=1e-12)

    def test_linf_and_abs_variants(self):
        assert error_measure_linf(np.array([1.0, 2.5]), np.array([1.0, 2.0])) == (
            pytest.approx(0.5 / (2.0 + 1e-10))
        )
        assert error_measure_abs(3.5, 3.0) == pytest.approx(0.5 / (3.0 + 1e-10))


class TestPoisson:
    def test_constant_dirichlet_data(self):
        dom = unit_box_domain()
        m = dom.num_points
        got = solve_poisson(dom, np.zeros(m), np.full(len(dom.bound), 4.2))
        assert np.max(np.abs(got - 4.2)) <= 1e-11

    def test_linear_harmonic(self):
        dom = va.build_case("b", 12)
        x1 = dom.pts_cart[:, 0]
        got = solve_poisson(dom, np.zeros(dom.num_points), x1[dom.bound])
        assert np.max(np.abs(got - x1)) <= 1e-10

    def test_interface_continuity(self):
        dom = va.build_quad_wedge(14)
        x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
        exact = va.poisson_exact(x1, x2)
        got = solve_poisson(dom, va.poisson_rhs(x1, x2), exact[dom.bound])
        spec = dom.intersections[0]
        assert np.max(np.abs(got[spec.nodes_i] - got[spec.nodes_j])) <= 1e-10

    def test_discrete_maximum_sanity(self):
        dom = va.build_case("d", 16)
        m = dom.num_points
        g = dom.pts_cart[dom.bound, 0] - 0.3 * dom.pts_cart[dom.bound, 1]
        rho = solve_poisson(dom, np.zeros(m), g)
        assert np.min(rho) >= np.min(g) - 1e-8
        assert np.max(rho) <= np.max(g) + 1e-8


class TestValidationSuite:
    def test_every_operator_decays(self):
        sweep = (6, 10, 14, 18)
        rows = va.run_validation_suite(cases=("a", "e"), sweep=sweep)
        by_key = {}
        for case, op, n, err, _ in rows:
            by_key.setdefault((case, op), []).append((n, err))
        for key, vals in by_key.items():
            errs = np.array([max(v[1], 1e-16) for v in sorted(vals)])
            ns = np.array([v[0] for v in sorted(vals)])
            slope = np.polyfit(ns, np.log10(errs), 1)[0]
            assert slope < 0, f"{key}: no decay ({errs})"

    def test_budget_split_three_ways_converges_slower(self):
        # splitting a direction's budget across three elements loses accuracy
        # relative to splitting both directions once, at equal total cost
        rows_c = va.run_validation_suite(cases=("c",), sweep=(24,), operators=("lap",))
        rows_d = va.run_validation_suite(cases=("d",), sweep=(24,), operators=("lap",))
        assert rows_c[0][3] > rows_d[0][3]

    def test_interp_exact_hit_on_grid(self):
        dom = va.build_case("a", 10)
        mat = dom.global_interpolation(dom.pts_cart)
        f = va.f_smooth(dom.pts_cart[:, 0], dom.pts_cart[:, 1])
        assert np.max(np.abs(mat @ f - f)) <= 1e-12

    def test_integration_against_brute_force(self):
        # second, independent route for the Gaussian integral reference
        dom = va.build_case("h", 20)
        gx, gw = np.polynomial.legendre.leggauss(200)
        r = 0.5 * (va.WEDGE["r_out"] - va.WEDGE["r_in"]) * (gx + 1) + va.WEDGE["r_in"]
        wr = 0.5 * (va.WEDGE["r_out"] - va.WEDGE["r_in"]) * gw
        dth = va.WEDGE["th2"] - va.WEDGE["th1"]
        brute = float(wr @ (np.exp(-(r**2)) * r)) * dth
        assert va.exact_gauss_integral("h") == pytest.approx(brute, rel=1e-13)

    def test_poisson_timing_rows_complete(self):
        rows = va.run_poisson_timing(sweep=(8, 12))
        variants = {r[0] for r in rows}
        assert variants == {"equal", "half_dir1", "half_dir2"}
        assert all(r[3] >= 0 and r[4] >= 0 for r in rows)

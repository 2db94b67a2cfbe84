"""Operator validation harness: reference discretizations and error sweeps.

A box and a wedge domain are discretized eight different ways (cases a-h).
Each case is checked for every operator against closed-form or factorized
1D-quadrature references, with the total per-direction point budget held
fixed and split evenly across elements, so the cases are comparable at
equal cost.

Closed-form derivatives of the smooth test field were derived symbolically
offline and are cross-checked against finite differences in the test suite.
"""

from __future__ import annotations

import time

import numpy as np

from .convolution import Kernel, convolution_matrix
from .domain import CompositeDomain
from .elements import QuadElement, WedgeElement
from .steady import (
    error_measure,
    error_measure_abs,
    error_measure_linf,
    solve_poisson,
)

BOX = (0.0, 2.0, 0.0, 2.0)
WEDGE = dict(r_in=1.0, r_out=3.0, th1=0.0, th2=0.5 * np.pi, origin=(0.0, 0.0))

BOX_CASES = ("a", "b", "c", "d")
WEDGE_CASES = ("e", "f", "g", "h")
ALL_CASES = BOX_CASES + WEDGE_CASES
OPERATORS = ("lap", "div", "grad", "interp", "int", "conv")

DEFAULT_SWEEP = tuple(range(6, 51, 4))


# -- test fields -------------------------------------------------------------


def f_smooth(x1, x2):
    u = x1 * x2
    return np.exp(-((u - 1.0) ** 2) / 20.0) * np.sin(u / 4.0)


def f_smooth_dx1(x1, x2):
    u = x1 * x2
    return x2 * ((2.0 - 2.0 * u) * np.sin(u / 4.0) + 5.0 * np.cos(u / 4.0)) * np.exp(
        -((u - 1.0) ** 2) / 20.0
    ) / 20.0


def f_smooth_dx2(x1, x2):
    return f_smooth_dx1(x2, x1)


def f_smooth_lap(x1, x2):
    u = x1 * x2
    return (
        (x1**2 + x2**2)
        * (
            (20.0 - 20.0 * u) * np.cos(u / 4.0)
            + (4.0 * (u - 1.0) ** 2 - 65.0) * np.sin(u / 4.0)
        )
        * np.exp(-((u - 1.0) ** 2) / 20.0)
        / 400.0
    )


def f_gauss(x1, x2):
    return np.exp(-(x1**2) - x2**2)


def kernel_cartesian() -> Kernel:
    return Kernel(form="displacement", fn=lambda d1, d2: np.exp((d1**2 - d2**2) / 10.0))


def density_cartesian(z1, z2):
    return z1**2 + z1 * z2


def kernel_polar() -> Kernel:
    return Kernel(form="displacement", fn=lambda d1, d2: np.exp(d1 + d2))


def density_polar(z1, z2):
    return np.exp(-(z1**2) - z2**2 + z1 + z2)


def poisson_exact(x1, x2):
    return np.exp(-0.5 * (x1 - 0.5) ** 2 - 0.5 * (x2 - 0.5) ** 2)


def poisson_rhs(x1, x2):
    return ((x1**2 - x1 - 0.75) + (x2**2 - x2 - 0.75)) * poisson_exact(x1, x2)


# -- discretizations ----------------------------------------------------------


def split_budget(total: int, parts: int):
    """Distribute a per-direction point budget as evenly as possible."""
    base = total // parts
    rem = total % parts
    return [base + (1 if k < rem else 0) for k in range(parts)]


def _box_elem(x1a, x1b, x2a, x2b, n1, n2):
    corners = np.array([[x1a, x2a], [x1a, x2b], [x1b, x2b], [x1b, x2a]], dtype=float)
    return QuadElement(corners=corners, n1=n1, n2=n2)


def _wedge_elem(r_a, r_b, th_a, th_b, n1, n2):
    return WedgeElement(
        r_in=r_a, r_out=r_b, th1=th_a, th2=th_b, origin=WEDGE["origin"], n1=n1, n2=n2
    )


def build_case(case: str, n_sigma: int) -> CompositeDomain:
    x1a, x1b, x2a, x2b = BOX
    xm = 0.5 * (x1a + x1b)
    ym = 0.5 * (x2a + x2b)
    r_in, r_out = WEDGE["r_in"], WEDGE["r_out"]
    th1, th2 = WEDGE["th1"], WEDGE["th2"]
    n = n_sigma
    if case == "a":
        return CompositeDomain([_box_elem(x1a, x1b, x2a, x2b, n, n)])
    if case == "b":
        p = split_budget(n, 2)
        return CompositeDomain(
            [
                _box_elem(x1a, xm, x2a, x2b, p[0], n),
                _box_elem(xm, x1b, x2a, x2b, p[1], n),
            ]
        )
    if case == "c":
        p = split_budget(n, 3)
        x_0 = x1a + (x1b - x1a) / 3.0
        x_1 = x1a + 2.0 * (x1b - x1a) / 3.0
        return CompositeDomain(
            [
                _box_elem(x1a, x_0, x2a, x2b, p[0], n),
                _box_elem(x_0, x_1, x2a, x2b, p[1], n),
                _box_elem(x_1, x1b, x2a, x2b, p[2], n),
            ]
        )
    if case == "d":
        p = split_budget(n, 2)
        q = split_budget(n, 2)
        return CompositeDomain(
            [
                _box_elem(x1a, xm, x2a, ym, p[0], q[0]),
                _box_elem(xm, x1b, x2a, ym, p[1], q[0]),
                _box_elem(x1a, xm, ym, x2b, p[0], q[1]),
                _box_elem(xm, x1b, ym, x2b, p[1], q[1]),
            ]
        )
    if case == "e":
        return CompositeDomain([_wedge_elem(r_in, r_out, th1, th2, n, n)])
    if case == "f":
        p = split_budget(n, 2)
        rm = 0.5 * (r_in + r_out)
        return CompositeDomain(
            [
                _wedge_elem(r_in, rm, th1, th2, p[0], n),
                _wedge_elem(rm, r_out, th1, th2, p[1], n),
            ]
        )
    if case == "g":
        p = split_budget(n, 2)
        thm = 0.5 * (th1 + th2)
        return CompositeDomain(
            [
                _wedge_elem(r_in, r_out, th1, thm, n, p[0]),
                _wedge_elem(r_in, r_out, thm, th2, n, p[1]),
            ]
        )
    if case == "h":
        p = split_budget(n, 3)
        t_0 = th1 + (th2 - th1) / 3.0
        t_1 = th1 + 2.0 * (th2 - th1) / 3.0
        return CompositeDomain(
            [
                _wedge_elem(r_in, r_out, th1, t_0, n, p[0]),
                _wedge_elem(r_in, r_out, t_0, t_1, n, p[1]),
                _wedge_elem(r_in, r_out, t_1, th2, n, p[2]),
            ]
        )
    raise ValueError(f"unknown validation case {case!r}")


def build_quad_wedge(n: int, n2: int = None) -> CompositeDomain:
    """Two-element fixture: a box capped by a half-annulus wedge."""
    n2 = n2 or n
    quad = _box_elem(0.0, 3.0, 0.0, 3.0, n, n2)
    wedge = WedgeElement(
        r_in=1.0, r_out=4.0, th1=0.0, th2=np.pi, origin=(4.0, 3.0), n1=n, n2=n2
    )
    return CompositeDomain([quad, wedge])


def case_uniform_targets(case: str, k: int = 50) -> np.ndarray:
    """In-domain uniform evaluation grid for interpolation checks."""
    inset = 1e-9
    if case in BOX_CASES:
        x1a, x1b, x2a, x2b = BOX
        xs = np.linspace(x1a + inset, x1b - inset, k)
        ys = np.linspace(x2a + inset, x2b - inset, k)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])
    r_in, r_out = WEDGE["r_in"], WEDGE["r_out"]
    th1, th2 = WEDGE["th1"], WEDGE["th2"]
    xs = np.linspace(-r_out, r_out, 2 * k)
    ys = np.linspace(-r_out, r_out, 2 * k)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    keep = (
        (r >= r_in + 1e-6)
        & (r <= r_out - 1e-6)
        & (th >= th1 + 1e-6)
        & (th <= th2 - 1e-6)
    )
    return pts[keep]


# -- reference values ---------------------------------------------------------


def exact_gauss_integral(case: str) -> float:
    from scipy.special import erf

    if case in BOX_CASES:
        x1a, x1b, x2a, x2b = BOX
        ix = 0.5 * np.sqrt(np.pi) * (erf(x1b) - erf(x1a))
        iy = 0.5 * np.sqrt(np.pi) * (erf(x2b) - erf(x2a))
        return float(ix * iy)
    r_in, r_out = WEDGE["r_in"], WEDGE["r_out"]
    dth = WEDGE["th2"] - WEDGE["th1"]
    return float(dth * 0.5 * (np.exp(-(r_in**2)) - np.exp(-(r_out**2))))


_GL_CACHE = {}


def _gl_rule(a: float, b: float, n: int = 400):
    key = (a, b, n)
    if key not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[key] = (0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w)
    return _GL_CACHE[key]


def exact_convolution(case: str, pts: np.ndarray) -> np.ndarray:
    """Reference convolution field at the given Cartesian points.

    Box: the kernel and density factorize per coordinate, so the 2D integral
    is a product of 1D integrals evaluated by high-order Gauss quadrature.
    Wedge: exp(d1 + d2) against the polar density collapses to a closed form.
    """
    y1, y2 = pts[:, 0], pts[:, 1]
    if case in BOX_CASES:
        x1a, x1b, x2a, x2b = BOX
        z1, w1 = _gl_rule(x1a, x1b)
        z2, w2 = _gl_rule(x2a, x2b)
        e1 = np.exp((y1[:, None] - z1[None, :]) ** 2 / 10.0)
        e2 = np.exp(-((y2[:, None] - z2[None, :]) ** 2) / 10.0)
        a_part = e1 @ (w1 * z1**2)
        c_part = e1 @ (w1 * z1)
        b_part = e2 @ w2
        d_part = e2 @ (w2 * z2)
        return a_part * b_part + c_part * d_part
    r_in, r_out = WEDGE["r_in"], WEDGE["r_out"]
    dth = WEDGE["th2"] - WEDGE["th1"]
    const = dth * 0.5 * (np.exp(-(r_in**2)) - np.exp(-(r_out**2)))
    return np.exp(y1 + y2) * const


# -- sweeps -------------------------------------------------------------------


def operator_errors(case: str, n_sigma: int, operators=OPERATORS, targets=None):
    """Errors of the requested operators on one discretization.

    Returns a list of (operator, error, wall_ms) tuples.
    """
    dom = build_case(case, n_sigma)
    x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
    g_vals = f_smooth(x1, x2)
    rows = []
    for op in operators:
        start = time.perf_counter()
        if op == "lap":
            err = error_measure(dom.lap @ g_vals, f_smooth_lap(x1, x2), dom)
        elif op == "grad":
            exact = dom.vector_from_cartesian(f_smooth_dx1(x1, x2), f_smooth_dx2(x1, x2))
            err = error_measure(dom.grad @ g_vals, exact, dom)
        elif op == "div":
            field = dom.vector_from_cartesian(g_vals, g_vals)
            exact = f_smooth_dx1(x1, x2) + f_smooth_dx2(x1, x2)
            err = error_measure(dom.div @ field, exact, dom)
        elif op == "interp":
            tgt = targets if targets is not None else case_uniform_targets(case)
            mat = dom.global_interpolation(tgt)
            err = error_measure_linf(mat @ g_vals, f_smooth(tgt[:, 0], tgt[:, 1]))
        elif op == "int":
            got = float(dom.int_row @ f_gauss(x1, x2))
            err = error_measure_abs(got, exact_gauss_integral(case))
        elif op == "conv":
            kern = kernel_cartesian() if case in BOX_CASES else kernel_polar()
            dens = density_cartesian if case in BOX_CASES else density_polar
            conv = convolution_matrix(dom, kern, cache=False)
            got = conv @ dens(x1, x2)
            err = error_measure(got, exact_convolution(case, dom.pts_cart), dom)
        else:
            raise ValueError(f"unknown operator {op!r}")
        wall_ms = 1000.0 * (time.perf_counter() - start)
        rows.append((op, float(err), wall_ms))
    return rows


def run_validation_suite(cases=ALL_CASES, sweep=DEFAULT_SWEEP, operators=OPERATORS):
    """Rows (case, operator, n_sigma, error, wall_ms) over the whole sweep."""
    rows = []
    for case in cases:
        targets = case_uniform_targets(case) if "interp" in operators else None
        for n_sigma in sweep:
            for op, err, ms in operator_errors(case, n_sigma, operators, targets):
                rows.append((case, op, n_sigma, err, ms))
    return rows


def poisson_case_error(case: str, n_sigma: int):
    """Poisson solve error on one case; returns (error, wall_ms) or None.

    Splits that leave an element without interior nodes in some direction
    make the bordered system singular and are skipped (returns None).
    """
    if case == "fig1":
        dom = build_quad_wedge(n_sigma)
    else:
        dom = build_case(case, n_sigma)
        if any(e.n1 < 3 or e.n2 < 3 for e in dom.elements):
            return None
    x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
    exact = poisson_exact(x1, x2)
    start = time.perf_counter()
    got = solve_poisson(dom, poisson_rhs(x1, x2), exact[dom.bound])
    wall_ms = 1000.0 * (time.perf_counter() - start)
    return error_measure(got, exact, dom), wall_ms


def run_poisson_suite(cases=ALL_CASES + ("fig1",), sweep=DEFAULT_SWEEP):
    rows = []
    for case in cases:
        for n_sigma in sweep:
            result = poisson_case_error(case, n_sigma)
            if result is None:
                continue
            rows.append((case, "poisson", n_sigma, float(result[0]), result[1]))
    return rows


def run_poisson_timing(sweep=(8, 12, 16, 20, 24)):
    """Accuracy-vs-time rows for three point-distribution variants.

    Variants on the quad+wedge fixture: equal points per direction, half the
    points in the first direction, half in the second direction.
    """
    rows = []
    for n in sweep:
        for variant, (n1, n2) in {
            "equal": (n, n),
            "half_dir1": (max(3, n // 2), n),
            "half_dir2": (n, max(3, n // 2)),
        }.items():
            dom = build_quad_wedge(n1, n2)
            x1, x2 = dom.pts_cart[:, 0], dom.pts_cart[:, 1]
            exact = poisson_exact(x1, x2)
            start = time.perf_counter()
            got = solve_poisson(dom, poisson_rhs(x1, x2), exact[dom.bound])
            wall_ms = 1000.0 * (time.perf_counter() - start)
            rows.append((variant, "poisson", n, float(error_measure(got, exact, dom)), wall_ms))
    return rows

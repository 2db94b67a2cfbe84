"""Error measures and the Dirichlet Poisson solve on composite domains."""

from __future__ import annotations

import numpy as np

from .errors import NumericError

REGULARIZER = 1e-10


def error_measure(f_num: np.ndarray, f_ex: np.ndarray, dom) -> float:
    """Relative L2 error with a small regularizer in the denominator.

    Norms are taken with the domain integration row; vector fields
    (length 2M) contribute both component blocks pointwise.
    """
    diff = np.asarray(f_num) - np.asarray(f_ex)
    m = dom.num_points
    if diff.shape[0] == 2 * m:
        num = np.sqrt(dom.int_row @ (diff[:m] ** 2 + diff[m:] ** 2))
        fe = np.asarray(f_ex)
        den = np.sqrt(dom.int_row @ (fe[:m] ** 2 + fe[m:] ** 2))
    else:
        num = np.sqrt(dom.int_row @ diff**2)
        den = np.sqrt(dom.int_row @ np.asarray(f_ex) ** 2)
    return float(num / (den + REGULARIZER))


def error_measure_linf(f_num: np.ndarray, f_ex: np.ndarray) -> float:
    """Relative max-norm variant, used on non-Chebyshev evaluation grids."""
    num = np.max(np.abs(np.asarray(f_num) - np.asarray(f_ex)))
    den = np.max(np.abs(f_ex))
    return float(num / (den + REGULARIZER))


def error_measure_abs(value_num: float, value_ex: float) -> float:
    """Scalar variant for integral results."""
    return abs(value_num - value_ex) / (abs(value_ex) + REGULARIZER)


def poisson_matrix(dom) -> np.ndarray:
    """Laplacian with boundary-bordered Dirichlet rows and interface matching.

    Interface conditions: value continuity on the lower-element side and
    normal-derivative matching on the other (the steady problems carry no
    advective flux, so the flux reduces to the gradient).
    """
    a = dom.lap.copy()
    for spec in dom.intersections:
        sel_i = dom.flux_selector(spec, "i")
        sel_j = dom.flux_selector(spec, "j")
        if spec.condition == "match":
            a[spec.nodes_i, :] = 0.0
            a[spec.nodes_i, spec.nodes_i] = 1.0
            a[spec.nodes_i, spec.nodes_j] = -1.0
            a[spec.nodes_j, :] = (sel_i + sel_j) @ dom.grad
        else:  # wall: zero normal derivative on both sides
            a[spec.nodes_i, :] = sel_i @ dom.grad
            a[spec.nodes_j, :] = sel_j @ dom.grad
    a[dom.bound, :] = 0.0
    a[dom.bound, dom.bound] = 1.0
    return a


def solve_poisson(dom, f: np.ndarray, g_bound: np.ndarray) -> np.ndarray:
    """Solve lap(rho) = f with rho = g on the domain boundary."""
    a = poisson_matrix(dom)
    b = np.array(f, dtype=float)
    for spec in dom.intersections:
        b[spec.nodes_i] = 0.0
        b[spec.nodes_j] = 0.0
    b[dom.bound] = g_bound
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Poisson system is singular") from exc

"""One-dimensional Chebyshev-Lobatto kernels and their 2D tensor-product lifting.

All operators act on nodal values at Chebyshev-Lobatto points of [-1, 1],
ordered descending (node 0 is +1, node n-1 is -1). Two-dimensional grids use
the lexicographic convention fixed repo-wide by :func:`tensor2d`: the first
coordinate varies slowest, i.e. the global index of grid node (i1, i2) is
``i1 * n2 + i2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NodeSet1D:
    """Chebyshev-Lobatto nodes on [-1, 1] with barycentric weights.

    nodes are strictly decreasing with nodes[0] = 1 and nodes[-1] = -1;
    bary_weights alternate in sign with halved endpoint weights. Any common
    scaling of the weights leaves barycentric interpolation unchanged.
    """

    n: int
    nodes: np.ndarray
    bary_weights: np.ndarray


def cheb_lobatto_nodes(n: int) -> NodeSet1D:
    """Gauss-Lobatto-Chebyshev points cos(pi*k/(n-1)), k = 0..n-1.

    Uses the sine form for exact symmetry about 0 in floating point.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got n={n}")
    k = np.arange(n)
    nodes = np.sin(np.pi * (n - 1 - 2 * k) / (2 * (n - 1)))
    weights = np.where(k % 2 == 0, 1.0, -1.0)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return NodeSet1D(n=n, nodes=nodes, bary_weights=weights)


def diff_matrix(ns: NodeSet1D, order: int = 1) -> np.ndarray:
    """Collocation differentiation matrix of the given order (1 or 2).

    Built from the barycentric weights with the negative-sum trick on the
    diagonal; the second-order matrix uses the dedicated recursion rather
    than squaring the first-order one.
    """
    if order not in (1, 2):
        raise ValueError(f"unsupported differentiation order {order}")
    x = ns.nodes
    w = ns.bary_weights
    n = ns.n
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    wratio = w[None, :] / w[:, None]
    d1 = wratio / dx
    np.fill_diagonal(d1, 0.0)
    np.fill_diagonal(d1, -d1.sum(axis=1))
    if order == 1:
        return d1
    diag1 = np.diag(d1)
    d2 = 2.0 / dx * (wratio * diag1[:, None] - d1)
    np.fill_diagonal(d2, 0.0)
    np.fill_diagonal(d2, -d2.sum(axis=1))
    return d2


def clenshaw_curtis_weights(ns: NodeSet1D) -> np.ndarray:
    """Quadrature weights matched to the Lobatto nodes, integrating over [-1, 1].

    Exact for polynomials of degree <= n-1 (degree <= n when n is odd).
    """
    n = ns.n
    big_n = n - 1
    theta = np.pi * np.arange(n) / big_n
    w = np.zeros(n)
    v = np.ones(big_n - 1) if big_n > 1 else np.zeros(0)
    inner = theta[1:big_n]
    if big_n % 2 == 0:
        w[0] = w[big_n] = 1.0 / (big_n**2 - 1)
        for k in range(1, big_n // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
        v -= np.cos(big_n * inner) / (big_n**2 - 1)
    else:
        w[0] = w[big_n] = 1.0 / big_n**2
        for k in range(1, (big_n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
    if big_n > 1:
        w[1:big_n] = 2.0 * v / big_n
    return w


def interp_matrix_1d(source: NodeSet1D, targets: np.ndarray) -> np.ndarray:
    """Barycentric interpolation matrix from source nodes to arbitrary targets.

    Rows evaluate the degree-(n-1) interpolant; a target coinciding with a
    source node yields a unit row, so no division by zero can occur. Targets
    outside [-1, 1] are evaluated as extrapolation.
    """
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    diff = t[:, None] - source.nodes[None, :]
    hit_rows, hit_cols = np.nonzero(np.abs(diff) < 1e-14)
    np.putmask(diff, np.abs(diff) < 1e-14, 1.0)
    terms = source.bary_weights[None, :] / diff
    mat = terms / terms.sum(axis=1)[:, None]
    mat[hit_rows, :] = 0.0
    mat[hit_rows, hit_cols] = 1.0
    return mat


def tensor2d(op_x1: np.ndarray, op_x2: np.ndarray) -> np.ndarray:
    """Kronecker lift of two 1D operators onto the lexicographic 2D grid.

    op_x1 acts along the slow (first) coordinate, op_x2 along the fast
    (second) one: with f[i1 * n2 + i2] = f(x1[i1], x2[i2]),
    (tensor2d(A, B) @ f)[i1 * n2 + i2] = sum_{j1 j2} A[i1,j1] B[i2,j2] f[j1*n2+j2].
    """
    return np.kron(op_x1, op_x2)


def grid2d(ns1: NodeSet1D, ns2: NodeSet1D) -> np.ndarray:
    """(n1*n2, 2) array of computational grid points in lexicographic order."""
    g1 = np.repeat(ns1.nodes, ns2.n)
    g2 = np.tile(ns2.nodes, ns1.n)
    return np.column_stack([g1, g2])

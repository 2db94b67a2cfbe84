"""Dense convolution matrices for non-local integral terms.

The matrix entry at (m, n) weights the integrand value at node n by the
quadrature weight and the kernel evaluated at the Cartesian displacement
from node n to node m, so Conv @ rho approximates the convolution of rho
with the kernel at every node. Displacements are always computed between
Cartesian point images, regardless of element coordinate systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

DISPLACEMENT = "displacement"
RADIAL = "radial"


@dataclass(frozen=True, eq=False)
class Kernel:
    """Convolution weight function.

    form "displacement": fn(d1, d2) takes the two displacement components;
    form "radial": fn(r) takes the Euclidean displacement length.
    """

    form: str
    fn: object

    def evaluate(self, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
        if self.form == RADIAL:
            return self.fn(np.hypot(d1, d2))
        return self.fn(d1, d2)


def convolution_matrix(dom, kernel: Kernel, cache: bool = True) -> np.ndarray:
    """(M, M) matrix applying the kernel-weighted integral over the domain.

    The matrix depends only on the domain and kernel, so repeated requests
    for the same pair return the cached array unless cache=False.
    """
    store = getattr(dom, "_conv_cache", None)
    if store is None:
        store = {}
        dom._conv_cache = store
    key = (id(kernel.fn), kernel.form)
    if cache and key in store:
        return store[key]
    x = dom.pts_cart[:, 0]
    y = dom.pts_cart[:, 1]
    d1 = x[:, None] - x[None, :]
    d2 = y[:, None] - y[None, :]
    vals = kernel.evaluate(d1, d2)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise NumericError(
            "kernel evaluated non-finite at displacement "
            f"({d1[bad[0], bad[1]]}, {d2[bad[0], bad[1]]})"
        )
    conv = vals * dom.int_row[None, :]
    if cache:
        store[key] = conv
    return conv


def convolution_matrix_pair(dom, kernel_d1: Kernel, kernel_d2: Kernel) -> np.ndarray:
    """(2M, M) stacked convolution against a kernel gradient pair.

    The two blocks are the displacement-form convolutions with the kernel's
    partial derivatives; applying the result to a density yields the
    Cartesian components of the interaction force field.
    """
    top = convolution_matrix(dom, kernel_d1)
    bottom = convolution_matrix(dom, kernel_d2)
    return np.vstack([top, bottom])

"""Quadrilateral and annular-wedge elements: maps, grids, faces, operators.

Computational space is [-1, 1]^2 with the lexicographic node ordering of
:mod:`specelem.chebyshev` (first coordinate slowest, nodes descending). A
quadrilateral maps computational space bilinearly onto its four corners; a
wedge maps it affinely onto [r_in, r_out] x [th1, th2] in polar coordinates
about its origin. Vector quantities on a wedge are stored in (radial,
angular) components; on a quadrilateral in Cartesian (x1, x2) components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .chebyshev import (
    NodeSet1D,
    cheb_lobatto_nodes,
    clenshaw_curtis_weights,
    diff_matrix,
    grid2d,
    interp_matrix_1d,
    tensor2d,
)
from .errors import GeometryError, NumericError

CARTESIAN = "cartesian"
POLAR = "polar"

QUAD_FACES = ("left", "right", "bottom", "top")
WEDGE_FACES = ("r_in", "r_out", "th_min", "th_max")

# membership tolerance in computational coordinates, relative to domain scale
MEMBER_TOL = 1e-10


def _shoelace(corners: np.ndarray) -> float:
    x, y = corners[:, 0], corners[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True, eq=False)
class ElementGrid:
    """Nodal data of one discretized element."""

    coord_system: str
    phys_points: np.ndarray  # (N, 2) element-native coordinates
    cart_points: np.ndarray  # (N, 2) Cartesian coordinates
    face_indices: dict  # face name -> ordered local node indices
    face_normals: dict  # face name -> (len, 2) outward unit normals, Cartesian


@dataclass(frozen=True, eq=False)
class ElementOperators:
    """Differential and integral operators on one element's nodal vectors."""

    coord_system: str
    grad: np.ndarray  # (2N, N), component blocks stacked
    div: np.ndarray  # (N, 2N)
    lap: np.ndarray  # (N, N)
    int_row: np.ndarray  # (N,)


class _ElementBase:
    """Shared grid/face plumbing; subclasses provide maps and operators."""

    n1: int
    n2: int

    def _check_counts(self):
        if self.n1 < 2 or self.n2 < 2:
            raise GeometryError(f"node counts must be >= 2, got ({self.n1}, {self.n2})")

    @cached_property
    def nodes1(self) -> NodeSet1D:
        return cheb_lobatto_nodes(self.n1)

    @cached_property
    def nodes2(self) -> NodeSet1D:
        return cheb_lobatto_nodes(self.n2)

    @property
    def num_points(self) -> int:
        return self.n1 * self.n2

    @cached_property
    def comp_points(self) -> np.ndarray:
        return grid2d(self.nodes1, self.nodes2)

    def face_index_lists(self) -> dict:
        """Ordered local indices of the four computational faces."""
        n1, n2 = self.n1, self.n2
        i2 = np.arange(n2)
        i1 = np.arange(n1)
        side_hi = i2  # first comp coordinate = +1
        side_lo = (n1 - 1) * n2 + i2
        side_t_hi = i1 * n2  # second comp coordinate = +1
        side_t_lo = i1 * n2 + (n2 - 1)
        names = self._face_names_by_comp_side()
        return {
            names["s+"]: side_hi,
            names["s-"]: side_lo,
            names["t+"]: side_t_hi,
            names["t-"]: side_t_lo,
        }

    def interp_row(self, comp_point: np.ndarray) -> np.ndarray:
        """Row vector evaluating the 2D interpolant at one computational point."""
        r1 = interp_matrix_1d(self.nodes1, np.array([comp_point[0]]))[0]
        r2 = interp_matrix_1d(self.nodes2, np.array([comp_point[1]]))[0]
        return np.outer(r1, r2).ravel()

    @cached_property
    def grid(self) -> ElementGrid:
        comp = self.comp_points
        phys = self.map_to_physical(comp)
        cart = self.to_cartesian(phys)
        faces = self.face_index_lists()
        normals = {name: self._face_normals(name, faces[name]) for name in faces}
        return ElementGrid(
            coord_system=self.coord_system,
            phys_points=phys,
            cart_points=cart,
            face_indices=faces,
            face_normals=normals,
        )


@dataclass(frozen=True, eq=False)
class QuadElement(_ElementBase):
    """Convex quadrilateral given by its four corners.

    Corners are accepted as a simple cycle around the quad starting at the
    corner mapped to computational (-1, -1); clockwise-cycled input (the
    (min,min),(min,max),(max,max),(max,min) box convention) is kept as-is and
    counter-clockwise input is canonicalized by reversing the cycle, which
    swaps the roles of the two computational directions.
    """

    corners: np.ndarray
    n1: int
    n2: int
    coord_system: str = field(default=CARTESIAN, init=False)

    def __post_init__(self):
        self._check_counts()
        corners = np.asarray(self.corners, dtype=float).reshape(4, 2).copy()
        if _shoelace(corners) > 0:
            corners = corners[[0, 3, 2, 1]]
        # convexity / non-self-intersection: all turns of the cycle same-handed
        turns = []
        for k in range(4):
            a = corners[(k + 1) % 4] - corners[k]
            b = corners[(k + 2) % 4] - corners[(k + 1) % 4]
            turns.append(a[0] * b[1] - a[1] * b[0])
        turns = np.asarray(turns)
        scale = np.max(np.abs(corners - corners.mean(axis=0)))
        if scale <= 0 or np.any(turns >= -1e-12 * scale**2):
            raise GeometryError("corners do not form a convex, non-degenerate quadrilateral")
        corners.flags.writeable = False
        object.__setattr__(self, "corners", corners)

    def _face_names_by_comp_side(self) -> dict:
        return {"s+": "right", "s-": "left", "t+": "top", "t-": "bottom"}

    @cached_property
    def _bilinear_coeffs(self):
        a, b, c, d = self.corners
        const = 0.25 * (a + b + c + d)
        ls = 0.25 * (-a - b + c + d)
        lt = 0.25 * (-a + b + c - d)
        lst = 0.25 * (a - b + c - d)
        return const, ls, lt, lst

    def map_to_physical(self, comp_points: np.ndarray) -> np.ndarray:
        const, ls, lt, lst = self._bilinear_coeffs
        s = comp_points[:, 0:1]
        t = comp_points[:, 1:2]
        return const + s * ls + t * lt + (s * t) * lst

    def to_cartesian(self, phys_points: np.ndarray) -> np.ndarray:
        return phys_points

    def jacobian(self, comp_points: np.ndarray):
        """Pointwise map Jacobian entries (dx1/ds, dx1/dt, dx2/ds, dx2/dt)."""
        _, ls, lt, lst = self._bilinear_coeffs
        s = comp_points[:, 0]
        t = comp_points[:, 1]
        x1s = ls[0] + t * lst[0]
        x1t = lt[0] + s * lst[0]
        x2s = ls[1] + t * lst[1]
        x2t = lt[1] + s * lst[1]
        return x1s, x1t, x2s, x2t

    def inverse_map(self, cart_points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Newton inversion of the bilinear map, vectorized over points.

        Returns computational coordinates; points somewhat outside [-1, 1]^2
        are still inverted (membership is the caller's check). Iterates are
        clamped to a box around the element, so callers should bounding-box
        filter far-away points first (see :meth:`locate`).
        """
        pts = np.atleast_2d(cart_points)
        const, ls, lt, lst = self._bilinear_coeffs
        scale = np.max(np.abs(self.corners)) + 1.0
        s = np.zeros(len(pts))
        t = np.zeros(len(pts))
        for _ in range(50):
            res = (
                const[None, :]
                + s[:, None] * ls
                + t[:, None] * lt
                + (s * t)[:, None] * lst
                - pts
            )
            if np.max(np.abs(res)) <= tol * scale:
                break
            x1s, x1t, x2s, x2t = self.jacobian(np.column_stack([s, t]))
            det = x1s * x2t - x1t * x2s
            s -= (x2t * res[:, 0] - x1t * res[:, 1]) / det
            t -= (-x2s * res[:, 0] + x1s * res[:, 1]) / det
            s = np.clip(s, -5.0, 5.0)
            t = np.clip(t, -5.0, 5.0)
        else:
            raise NumericError("bilinear map inversion did not converge in 50 iterations")
        return np.column_stack([s, t])

    def contains_comp(self, comp_points: np.ndarray) -> np.ndarray:
        return np.all(np.abs(comp_points) <= 1.0 + MEMBER_TOL, axis=1)

    def locate(self, cart_points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Computational coordinates of points, NaN rows for points outside."""
        pts = np.atleast_2d(cart_points)
        out = np.full_like(pts, np.nan, dtype=float)
        lo = self.corners.min(axis=0)
        hi = self.corners.max(axis=0)
        margin = 1e-9 * (np.max(hi - lo) + 1.0)
        near = np.all((pts >= lo - margin) & (pts <= hi + margin), axis=1)
        if np.any(near):
            comp = self.inverse_map(pts[near], tol=tol)
            inside = self.contains_comp(comp)
            idx = np.flatnonzero(near)[inside]
            out[idx] = comp[inside]
        return out

    def _face_normals(self, name: str, indices: np.ndarray) -> np.ndarray:
        comp = self.comp_points[indices]
        x1s, x1t, x2s, x2t = self.jacobian(comp)
        if name == "right":
            raw = np.column_stack([x2t, -x1t])
        elif name == "left":
            raw = np.column_stack([-x2t, x1t])
        elif name == "top":
            raw = np.column_stack([-x2s, x1s])
        else:  # bottom
            raw = np.column_stack([x2s, -x1s])
        return raw / np.linalg.norm(raw, axis=1)[:, None]

    @cached_property
    def operators(self) -> ElementOperators:
        n = self.num_points
        d1 = diff_matrix(self.nodes1)
        d2 = diff_matrix(self.nodes2)
        ds = tensor2d(d1, np.eye(self.n2))
        dt = tensor2d(np.eye(self.n1), d2)
        comp = self.comp_points
        x1s, x1t, x2s, x2t = self.jacobian(comp)
        det = x1s * x2t - x1t * x2s
        if np.any(det <= 0):
            raise GeometryError("bilinear map has non-positive Jacobian on the grid")
        dx1 = (x2t / det)[:, None] * ds + (-x2s / det)[:, None] * dt
        dx2 = (-x1t / det)[:, None] * ds + (x1s / det)[:, None] * dt
        grad = np.vstack([dx1, dx2])
        div = np.hstack([dx1, dx2])
        _, _, _, lst = self._bilinear_coeffs
        if np.max(np.abs(lst)) <= 1e-14 * np.max(np.abs(self.corners)):
            # affine map: constant metric, use the dedicated second-order matrices
            dss = tensor2d(diff_matrix(self.nodes1, 2), np.eye(self.n2))
            dtt = tensor2d(np.eye(self.n1), diff_matrix(self.nodes2, 2))
            dst = tensor2d(d1, d2)
            sx1, tx1 = x2t[0] / det[0], -x2s[0] / det[0]
            sx2, tx2 = -x1t[0] / det[0], x1s[0] / det[0]
            lap = (
                (sx1**2 + sx2**2) * dss
                + (tx1**2 + tx2**2) * dtt
                + 2.0 * (sx1 * tx1 + sx2 * tx2) * dst
            )
        else:
            lap = dx1 @ dx1 + dx2 @ dx2
        w = tensor2d(
            clenshaw_curtis_weights(self.nodes1)[None, :],
            clenshaw_curtis_weights(self.nodes2)[None, :],
        )[0]
        int_row = w * det
        assert grad.shape == (2 * n, n)
        return ElementOperators(CARTESIAN, grad, div, lap, int_row)


@dataclass(frozen=True, eq=False)
class WedgeElement(_ElementBase):
    """Section of an annulus in polar coordinates about an origin.

    The first computational direction is radial (n1 nodes), the second
    angular (n2 nodes). r_in must be positive: the polar coordinate
    singularity at r = 0 is not supported.
    """

    r_in: float
    r_out: float
    th1: float
    th2: float
    origin: tuple
    n1: int
    n2: int
    coord_system: str = field(default=POLAR, init=False)

    def __post_init__(self):
        self._check_counts()
        if self.r_in <= 0:
            raise GeometryError("wedge needs r_in > 0 (full discs are unsupported)")
        if self.r_out <= self.r_in:
            raise GeometryError("wedge needs r_out > r_in")
        if not (self.th1 < self.th2 <= self.th1 + 2 * np.pi):
            raise GeometryError("wedge needs th1 < th2 <= th1 + 2*pi")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def _face_names_by_comp_side(self) -> dict:
        return {"s+": "r_out", "s-": "r_in", "t+": "th_max", "t-": "th_min"}

    def map_to_physical(self, comp_points: np.ndarray) -> np.ndarray:
        r = self.r_in + 0.5 * (comp_points[:, 0] + 1.0) * (self.r_out - self.r_in)
        th = self.th1 + 0.5 * (comp_points[:, 1] + 1.0) * (self.th2 - self.th1)
        return np.column_stack([r, th])

    def to_cartesian(self, phys_points: np.ndarray) -> np.ndarray:
        r, th = phys_points[:, 0], phys_points[:, 1]
        ox, oy = self.origin
        return np.column_stack([ox + r * np.cos(th), oy + r * np.sin(th)])

    def inverse_map(self, cart_points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Analytic inversion via polar conversion.

        The angle branch is chosen in [th1 - pi, th1 + pi); for wedges wider
        than pi, angles falling below th1 are lifted by 2*pi when that lands
        them inside [th1, th2].
        """
        pts = np.atleast_2d(cart_points)
        dx = pts[:, 0] - self.origin[0]
        dy = pts[:, 1] - self.origin[1]
        r = np.hypot(dx, dy)
        th = np.arctan2(dy, dx)
        th = th - 2 * np.pi * np.floor((th - (self.th1 - np.pi)) / (2 * np.pi))
        wide = th < self.th1 - MEMBER_TOL
        th = np.where(wide & (th + 2 * np.pi <= self.th2 + MEMBER_TOL), th + 2 * np.pi, th)
        s = 2.0 * (r - self.r_in) / (self.r_out - self.r_in) - 1.0
        t = 2.0 * (th - self.th1) / (self.th2 - self.th1) - 1.0
        return np.column_stack([s, t])

    def contains_comp(self, comp_points: np.ndarray) -> np.ndarray:
        return np.all(np.abs(comp_points) <= 1.0 + MEMBER_TOL, axis=1)

    def locate(self, cart_points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Computational coordinates of points, NaN rows for points outside."""
        pts = np.atleast_2d(cart_points)
        comp = self.inverse_map(pts, tol=tol)
        out = np.full_like(comp, np.nan)
        inside = self.contains_comp(comp)
        out[inside] = comp[inside]
        return out

    def _radii(self) -> np.ndarray:
        return self.map_to_physical(self.comp_points)[:, 0]

    def _face_normals(self, name: str, indices: np.ndarray) -> np.ndarray:
        th = self.map_to_physical(self.comp_points[indices])[:, 1]
        if name == "r_out":
            return np.column_stack([np.cos(th), np.sin(th)])
        if name == "r_in":
            return np.column_stack([-np.cos(th), -np.sin(th)])
        if name == "th_max":
            return np.column_stack([-np.sin(th), np.cos(th)])
        return np.column_stack([np.sin(th), -np.cos(th)])

    @cached_property
    def operators(self) -> ElementOperators:
        dr_scale = 2.0 / (self.r_out - self.r_in)
        dth_scale = 2.0 / (self.th2 - self.th1)
        d_r = dr_scale * tensor2d(diff_matrix(self.nodes1), np.eye(self.n2))
        d_th = dth_scale * tensor2d(np.eye(self.n1), diff_matrix(self.nodes2))
        d_rr = dr_scale**2 * tensor2d(diff_matrix(self.nodes1, 2), np.eye(self.n2))
        d_thth = dth_scale**2 * tensor2d(np.eye(self.n1), diff_matrix(self.nodes2, 2))
        r = self._radii()
        inv_r = (1.0 / r)[:, None]
        grad = np.vstack([d_r, inv_r * d_th])
        div = np.hstack([d_r + np.diag(1.0 / r), inv_r * d_th])
        lap = d_rr + inv_r * d_r + inv_r**2 * d_thth
        w = tensor2d(
            clenshaw_curtis_weights(self.nodes1)[None, :],
            clenshaw_curtis_weights(self.nodes2)[None, :],
        )[0]
        int_row = w * r / (dr_scale * dth_scale)
        return ElementOperators(POLAR, grad, div, lap, int_row)


def element_area(elem) -> float:
    """Analytic area, used to cross-check the integration row."""
    if isinstance(elem, WedgeElement):
        return 0.5 * (elem.th2 - elem.th1) * (elem.r_out**2 - elem.r_in**2)
    c = elem.corners
    return abs(_shoelace(c))


def rotation_to_cartesian(elem, local_indices: np.ndarray):
    """Per-node coefficients turning element-frame vector components Cartesian.

    Returns (c11, c12, c21, c22) with v_cart_x = c11*v1 + c12*v2 and
    v_cart_y = c21*v1 + c22*v2. Identity for Cartesian elements; the polar
    frame rotation for wedges.
    """
    k = len(local_indices)
    if isinstance(elem, QuadElement):
        ones, zeros = np.ones(k), np.zeros(k)
        return ones, zeros, zeros, ones
    th = elem.map_to_physical(elem.comp_points[local_indices])[:, 1]
    return np.cos(th), -np.sin(th), np.sin(th), np.cos(th)

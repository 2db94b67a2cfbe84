"""Composite domains assembled from quad and wedge elements.

Scalar fields over a composite domain are length-M vectors stacking each
element's nodal values in element order (M = sum of element node counts).
Vector fields are length-2M with the first component block (x1 on quads,
radial on wedges) followed by the second (x2 / angular). Global operators
are block-diagonal in this stacking.

Element faces that coincide node-for-node (in the same or reversed order)
become intersections; the domain boundary is the union of element faces
minus all intersection nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elements import QuadElement, WedgeElement, rotation_to_cartesian
from .errors import ConfigError, NumericError, OutOfDomainError

MATCH = "match"
WALL = "wall"


@dataclass(eq=False)
class Intersection:
    """One shared face between two elements (elem_i < elem_j).

    nodes_i / nodes_j are aligned global index arrays: nodes_i[k] and
    nodes_j[k] are coincident points. orientation records whether the face
    node orders agreed or were reversed during matching.
    """

    elem_i: int
    elem_j: int
    face_i: str
    face_j: str
    orientation: str  # "same" | "reversed"
    nodes_i: np.ndarray
    nodes_j: np.ndarray
    condition: str = MATCH


@dataclass(eq=False)
class IndexSets:
    bound: np.ndarray  # sorted global indices of domain-boundary nodes
    intersections: list
    intersection_nodes: np.ndarray  # sorted union over both sides


class CompositeDomain:
    """Stacked grid, block operators, boundary data of a composite domain."""

    def __init__(self, elements, conditions=None, normal_overrides=None):
        if not elements:
            raise ConfigError("a composite domain needs at least one element")
        self.elements = list(elements)
        sizes = [e.num_points for e in self.elements]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.num_points = int(self.offsets[-1])
        self._assemble_points()
        self._assemble_operators()
        self._find_intersections(conditions or {})
        self._identify_boundary()
        self._build_normals()
        if normal_overrides:
            for idx, vec in normal_overrides:
                self.override_normals([idx], [vec])
        self._frozen = True

    # -- construction ------------------------------------------------------

    def _assemble_points(self):
        self.pts_native = np.vstack([e.grid.phys_points for e in self.elements])
        self.pts_cart = np.vstack([e.grid.cart_points for e in self.elements])
        lo = self.pts_cart.min(axis=0)
        hi = self.pts_cart.max(axis=0)
        self.diameter = float(np.hypot(*(hi - lo)))

    def _assemble_operators(self):
        m = self.num_points
        self.grad = np.zeros((2 * m, m))
        self.div = np.zeros((m, 2 * m))
        self.lap = np.zeros((m, m))
        self.int_row = np.zeros(m)
        for k, elem in enumerate(self.elements):
            ops = elem.operators
            n = elem.num_points
            a = self.offsets[k]
            b = a + n
            self.lap[a:b, a:b] = ops.lap
            self.int_row[a:b] = ops.int_row
            self.grad[a:b, a:b] = ops.grad[:n]
            self.grad[m + a : m + b, a:b] = ops.grad[n:]
            self.div[a:b, a:b] = ops.div[:, :n]
            self.div[a:b, m + a : m + b] = ops.div[:, n:]

    def _find_intersections(self, conditions):
        tol = 1e-10 * max(self.diameter, 1e-30)
        specs = detect_intersections(self.elements, tol)
        for spec in specs:
            key = (spec.elem_i, spec.elem_j)
            spec.condition = conditions.get(key, MATCH)
            if spec.condition not in (MATCH, WALL):
                raise ConfigError(f"unknown intersection condition {spec.condition!r}")
            spec.nodes_i = spec.nodes_i + self.offsets[spec.elem_i]
            spec.nodes_j = spec.nodes_j + self.offsets[spec.elem_j]
        inter_nodes = (
            np.unique(np.concatenate([np.concatenate([s.nodes_i, s.nodes_j]) for s in specs]))
            if specs
            else np.zeros(0, dtype=int)
        )
        self.intersections = specs
        self._intersection_nodes = inter_nodes

    def _identify_boundary(self):
        face_nodes = []
        for k, elem in enumerate(self.elements):
            for idx in elem.grid.face_indices.values():
                face_nodes.append(idx + self.offsets[k])
        all_face = np.unique(np.concatenate(face_nodes))
        self.bound = np.setdiff1d(all_face, self._intersection_nodes)
        self.ind = IndexSets(
            bound=self.bound,
            intersections=self.intersections,
            intersection_nodes=self._intersection_nodes,
        )

    def _build_normals(self):
        """Outward unit normals at boundary nodes.

        Nodes interior to a face inherit the face normal; element-corner
        nodes on the boundary average their two adjacent face normals (in
        Cartesian components) and renormalize.
        """
        inter_faces = set()
        for s in self.intersections:
            inter_faces.add((s.elem_i, s.face_i))
            inter_faces.add((s.elem_j, s.face_j))
        accum = {g: [] for g in self.bound}
        for k, elem in enumerate(self.elements):
            grid = elem.grid
            for name, idx in grid.face_indices.items():
                if (k, name) in inter_faces:
                    continue
                for local, g in enumerate(idx + self.offsets[k]):
                    if g in accum:
                        accum[g].append(grid.face_normals[name][local])
        normals = np.zeros((len(self.bound), 2))
        for row, g in enumerate(self.bound):
            vecs = accum[g]
            avg = np.mean(vecs, axis=0)
            norm = np.linalg.norm(avg)
            if norm < 1e-12:
                raise NumericError(
                    f"boundary normal at node {g} averaged to zero; override it manually"
                )
            normals[row] = avg / norm
        self.normals = normals
        self._frozen = False

    # -- normals -----------------------------------------------------------

    def override_normals(self, node_indices, vectors):
        """Replace stored boundary normals verbatim (after unit normalization).

        Build-phase operation: forbidden once the domain is frozen.
        """
        if getattr(self, "_frozen", False):
            raise RuntimeError("override_normals is a build-phase operation; pass overrides to the constructor")
        pos = {g: row for row, g in enumerate(self.bound)}
        for g, vec in zip(node_indices, vectors):
            g = int(g)
            if g not in pos:
                raise ConfigError(f"node {g} is not a boundary node")
            v = np.asarray(vec, dtype=float)
            norm = np.linalg.norm(v)
            if norm <= 0:
                raise ConfigError("override normal must be nonzero")
            self.normals[pos[g]] = v / norm

    def element_of(self, global_index: int) -> int:
        return int(np.searchsorted(self.offsets, global_index, side="right") - 1)

    def frame_coefficients(self, global_indices: np.ndarray):
        """Rotation coefficients element frame -> Cartesian at given nodes."""
        global_indices = np.asarray(global_indices)
        c11 = np.empty(len(global_indices))
        c12 = np.empty(len(global_indices))
        c21 = np.empty(len(global_indices))
        c22 = np.empty(len(global_indices))
        for pos, g in enumerate(global_indices):
            k = self.element_of(g)
            local = g - self.offsets[k]
            a, b, c, d = rotation_to_cartesian(self.elements[k], np.array([local]))
            c11[pos], c12[pos], c21[pos], c22[pos] = a[0], b[0], c[0], d[0]
        return c11, c12, c21, c22

    def normal_component_operator(self) -> np.ndarray:
        """(len(bound), 2M) matrix extracting the outward-normal component.

        Vector-field components of polar elements are rotated to Cartesian
        before being dotted with the stored Cartesian normals.
        """
        m = self.num_points
        op = np.zeros((len(self.bound), 2 * m))
        c11, c12, c21, c22 = self.frame_coefficients(self.bound)
        nx, ny = self.normals[:, 0], self.normals[:, 1]
        rows = np.arange(len(self.bound))
        op[rows, self.bound] = nx * c11 + ny * c21
        op[rows, self.bound + m] = nx * c12 + ny * c22
        return op

    def vector_to_cartesian(self, vec_field: np.ndarray):
        """Split a length-2M element-frame vector field into Cartesian (vx, vy)."""
        m = self.num_points
        v1, v2 = vec_field[:m], vec_field[m:]
        vx = np.empty(m)
        vy = np.empty(m)
        for k, elem in enumerate(self.elements):
            a, b = self.offsets[k], self.offsets[k + 1]
            c11, c12, c21, c22 = rotation_to_cartesian(elem, np.arange(elem.num_points))
            vx[a:b] = c11 * v1[a:b] + c12 * v2[a:b]
            vy[a:b] = c21 * v1[a:b] + c22 * v2[a:b]
        return vx, vy

    def vector_from_cartesian(self, vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`vector_to_cartesian` (frames are orthonormal)."""
        m = self.num_points
        out = np.empty(2 * m)
        for k, elem in enumerate(self.elements):
            a, b = self.offsets[k], self.offsets[k + 1]
            c11, c12, c21, c22 = rotation_to_cartesian(elem, np.arange(elem.num_points))
            out[a:b] = c11 * vx[a:b] + c21 * vy[a:b]
            out[m + a : m + b] = c12 * vx[a:b] + c22 * vy[a:b]
        return out

    # -- intersection conditions --------------------------------------------

    def face_normal_at(self, elem_index: int, face: str) -> np.ndarray:
        return self.elements[elem_index].grid.face_normals[face]

    def flux_selector(self, spec: Intersection, side: str) -> np.ndarray:
        """(len(face), 2M) matrix: rows give flux . n on one intersection side.

        Rows are aligned with the spec's node pairing, i.e. row k of the "i"
        selector and row k of the "j" selector refer to coincident points.
        """
        m = self.num_points
        if side == "i":
            k, face, nodes = spec.elem_i, spec.face_i, spec.nodes_i
        else:
            k, face, nodes = spec.elem_j, spec.face_j, spec.nodes_j
        elem = self.elements[k]
        face_idx = elem.grid.face_indices[face] + self.offsets[k]
        order = np.array([np.flatnonzero(face_idx == g)[0] for g in nodes])
        normals = elem.grid.face_normals[face][order]
        local = nodes - self.offsets[k]
        c11, c12, c21, c22 = rotation_to_cartesian(elem, local)
        nx, ny = normals[:, 0], normals[:, 1]
        sel = np.zeros((len(nodes), 2 * m))
        rows = np.arange(len(nodes))
        sel[rows, nodes] = nx * c11 + ny * c21
        sel[rows, nodes + m] = nx * c12 + ny * c22
        return sel

    def apply_intersection_bcs(self, rhs, rho, flux, specs=None):
        """Overwrite intersection rows of rhs with matching-condition residuals.

        For a MATCH intersection the lower-element side carries the value
        continuity residual rho_i - rho_j and the other side the flux
        matching residual flux_i . n_i + flux_j . n_j (opposite outward
        normals give the sign). WALL gives both sides their own zero
        normal-flux residual.
        """
        if rho is None or flux is None:
            raise ValueError("intersection conditions need both rho and flux data")
        out = np.array(rhs, copy=True)
        for spec in specs if specs is not None else self.intersections:
            sel_i = self._cached_selector(spec, "i")
            sel_j = self._cached_selector(spec, "j")
            if spec.condition == MATCH:
                out[spec.nodes_i] = rho[spec.nodes_i] - rho[spec.nodes_j]
                out[spec.nodes_j] = sel_i @ flux + sel_j @ flux
            else:
                out[spec.nodes_i] = sel_i @ flux
                out[spec.nodes_j] = sel_j @ flux
        return out

    def _cached_selector(self, spec, side):
        key = (id(spec), side)
        cache = getattr(self, "_selector_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_selector_cache", cache)
        if key not in cache:
            cache[key] = self.flux_selector(spec, side)
        return cache[key]

    def algebraic_nodes(self) -> np.ndarray:
        """Sorted union of boundary and intersection nodes (mass-mask zeros)."""
        return np.union1d(self.bound, self._intersection_nodes)

    # -- interpolation -------------------------------------------------------

    def global_interpolation(self, targets: np.ndarray) -> np.ndarray:
        """(len(targets), M) barycentric interpolation matrix at Cartesian targets.

        Each target is assigned to the lowest-index element containing it;
        targets in no element raise OutOfDomainError.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        n_t = len(targets)
        mat = np.zeros((n_t, self.num_points))
        unassigned = np.ones(n_t, dtype=bool)
        for k, elem in enumerate(self.elements):
            if not np.any(unassigned):
                break
            comp = elem.locate(targets[unassigned])
            hit = ~np.isnan(comp[:, 0])
            rows = np.flatnonzero(unassigned)[hit]
            for row, cpt in zip(rows, comp[hit]):
                mat[row, self.offsets[k] : self.offsets[k + 1]] = elem.interp_row(cpt)
            unassigned[rows] = False
        if np.any(unassigned):
            missing = targets[unassigned]
            raise OutOfDomainError(
                f"{len(missing)} target points lie outside the domain; first few: "
                f"{missing[:5].tolist()}"
            )
        return mat

    def membership(self, targets: np.ndarray) -> np.ndarray:
        """Boolean in-domain mask for Cartesian points (no error on outside)."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        inside = np.zeros(len(targets), dtype=bool)
        for elem in self.elements:
            todo = ~inside
            if not np.any(todo):
                break
            comp = elem.locate(targets[todo])
            inside[np.flatnonzero(todo)[~np.isnan(comp[:, 0])]] = True
        return inside


def detect_intersections(elements, tol: float):
    """Find all face-to-face coincidences between element pairs.

    Two faces intersect when their node sequences coincide pairwise, in the
    same or reversed order, within tol. Faces sharing two or more nodes
    without full coincidence (typically mismatched node counts on a shared
    edge) are a configuration error; sharing a single corner node is normal.
    """
    specs = []
    grids = [e.grid for e in elements]
    for i in range(len(elements)):
        for j in range(i + 1, len(elements)):
            for face_i, idx_i in grids[i].face_indices.items():
                pts_i = grids[i].cart_points[idx_i]
                for face_j, idx_j in grids[j].face_indices.items():
                    pts_j = grids[j].cart_points[idx_j]
                    spec = _match_faces(
                        i, j, face_i, face_j, idx_i, idx_j, pts_i, pts_j, tol
                    )
                    if spec is not None:
                        specs.append(spec)
    return specs


def _match_faces(i, j, face_i, face_j, idx_i, idx_j, pts_i, pts_j, tol):
    dist = np.linalg.norm(pts_i[:, None, :] - pts_j[None, :, :], axis=2)
    coincide = dist <= tol
    n_shared = int(np.count_nonzero(coincide.any(axis=1)))
    if n_shared == 0 or n_shared == 1:
        return None
    if len(idx_i) == len(idx_j):
        same = np.all(np.diagonal(coincide))
        rev = np.all(np.diagonal(np.fliplr(coincide)))
        if same or rev:
            nodes_j = idx_j if same else idx_j[::-1]
            return Intersection(
                elem_i=i,
                elem_j=j,
                face_i=face_i,
                face_j=face_j,
                orientation="same" if same else "reversed",
                nodes_i=idx_i.copy(),
                nodes_j=nodes_j.copy(),
            )
    mismatched_i = idx_i[~coincide.any(axis=1)]
    raise ConfigError(
        f"faces {face_i!r} of element {i} and {face_j!r} of element {j} overlap "
        f"partially ({n_shared} shared nodes of {len(idx_i)}/{len(idx_j)}); "
        f"unmatched local nodes on element {i}: {mismatched_i.tolist()}"
    )

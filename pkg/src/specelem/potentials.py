"""Built-in external potentials, initial-condition profiles, and wall geometry.

Potentials are sums of named terms with closed-form Cartesian gradients.
Repulsive walls are polylines and circular arcs; the repulsion decays as a
Gaussian of the Euclidean distance to the wall, so its gradient vanishes on
the wall itself and the nearest-point direction only matters off the wall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Segment:
    a: tuple
    b: tuple


@dataclass(frozen=True)
class Arc:
    center: tuple
    radius: float
    th_a: float
    th_b: float


def polyline(points) -> list:
    pts = [tuple(map(float, p)) for p in points]
    return [Segment(pts[k], pts[k + 1]) for k in range(len(pts) - 1)]


def _segment_distance(seg: Segment, pts: np.ndarray):
    a = np.asarray(seg.a)
    b = np.asarray(seg.b)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    diff = pts - closest
    return np.linalg.norm(diff, axis=1), closest


def _arc_distance(arc: Arc, pts: np.ndarray):
    c = np.asarray(arc.center)
    rel = pts - c
    r = np.linalg.norm(rel, axis=1)
    th = np.arctan2(rel[:, 1], rel[:, 0])
    # lift th onto the arc's branch
    th = th + 2 * np.pi * np.round((0.5 * (arc.th_a + arc.th_b) - th) / (2 * np.pi))
    on_arc = (th >= arc.th_a) & (th <= arc.th_b)
    closest = np.empty_like(pts)
    safe_r = np.where(r > 1e-300, r, 1.0)
    closest[on_arc] = c + arc.radius * (rel[on_arc] / safe_r[on_arc, None])
    for th_end in (arc.th_a, arc.th_b):
        endpoint = c + arc.radius * np.array([np.cos(th_end), np.sin(th_end)])
        if th_end == arc.th_a:
            mask = ~on_arc & (th < arc.th_a)
        else:
            mask = ~on_arc & (th > arc.th_b)
        closest[mask] = endpoint
    dist = np.linalg.norm(pts - closest, axis=1)
    return dist, closest


def wall_distance(parts, pts: np.ndarray):
    """Distance to the nearest wall part and the unit away-from-wall direction."""
    pts = np.atleast_2d(pts)
    best_d = np.full(len(pts), np.inf)
    best_closest = np.zeros_like(pts)
    for part in parts:
        if isinstance(part, Segment):
            d, closest = _segment_distance(part, pts)
        else:
            d, closest = _arc_distance(part, pts)
        better = d < best_d
        best_d[better] = d[better]
        best_closest[better] = closest[better]
    diff = pts - best_closest
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.where(best_d[:, None] > 1e-12, diff / best_d[:, None], 0.0)
    return best_d, grad


class PotentialTerm:
    """One named contribution to a scalar external field."""

    def evaluate(self, pts):  # -> (values, grad (N,2))
        raise NotImplementedError


@dataclass(frozen=True)
class LinearTerm(PotentialTerm):
    coeff: tuple  # (c1, c2): c1*x1 + c2*x2
    offset: float = 0.0

    def evaluate(self, pts):
        vals = self.coeff[0] * pts[:, 0] + self.coeff[1] * pts[:, 1] + self.offset
        grad = np.tile(np.asarray(self.coeff, dtype=float), (len(pts), 1))
        return vals, grad


@dataclass(frozen=True)
class GaussianTerm(PotentialTerm):
    amplitude: float
    center: tuple
    decay: tuple  # (p1, p2): amp * exp(-p1 (x1-c1)^2 - p2 (x2-c2)^2)

    def evaluate(self, pts):
        d1 = pts[:, 0] - self.center[0]
        d2 = pts[:, 1] - self.center[1]
        vals = self.amplitude * np.exp(-self.decay[0] * d1**2 - self.decay[1] * d2**2)
        grad = np.column_stack(
            [-2.0 * self.decay[0] * d1 * vals, -2.0 * self.decay[1] * d2 * vals]
        )
        return vals, grad


@dataclass(frozen=True)
class WallRepulsionTerm(PotentialTerm):
    """strength * sum over walls of exp(-(distance / range)^2)."""

    strength: float
    range_: float
    walls: tuple  # tuple of wall part lists

    def evaluate(self, pts):
        vals = np.zeros(len(pts))
        grad = np.zeros((len(pts), 2))
        for parts in self.walls:
            d, ddir = wall_distance(parts, pts)
            contrib = self.strength * np.exp(-((d / self.range_) ** 2))
            vals += contrib
            grad += (-2.0 * d / self.range_**2 * contrib)[:, None] * ddir
        return vals, grad


def evaluate_terms(terms, pts: np.ndarray):
    """Sum of term values and gradients at Cartesian points."""
    pts = np.atleast_2d(pts)
    vals = np.zeros(len(pts))
    grad = np.zeros((len(pts), 2))
    for term in terms:
        v, g = term.evaluate(pts)
        vals += v
        grad += g
    return vals, grad


def term_from_spec(spec: dict, walls: dict = None):
    kind = spec.get("type")
    if kind == "linear":
        return LinearTerm(coeff=tuple(spec["coeff"]), offset=float(spec.get("offset", 0.0)))
    if kind == "gaussian":
        return GaussianTerm(
            amplitude=float(spec["amplitude"]),
            center=tuple(spec["center"]),
            decay=tuple(spec["decay"]),
        )
    if kind == "wall_repulsion":
        names = spec["walls"]
        try:
            parts = tuple((walls or {})[name] for name in names)
        except KeyError as exc:
            raise ConfigError(f"undefined wall {exc.args[0]!r} in wall_repulsion term") from exc
        return WallRepulsionTerm(
            strength=float(spec["strength"]), range_=float(spec["range"]), walls=parts
        )
    raise ConfigError(f"unknown potential term type {kind!r}")


def wall_from_spec(spec: list):
    """A wall is a list of part dicts: polyline points or arc parameters."""
    parts = []
    for item in spec:
        kind = item.get("type")
        if kind == "polyline":
            parts.extend(polyline(item["points"]))
        elif kind == "arc":
            parts.append(
                Arc(
                    center=tuple(item["center"]),
                    radius=float(item["radius"]),
                    th_a=float(item["th_a"]),
                    th_b=float(item["th_b"]),
                )
            )
        else:
            raise ConfigError(f"unknown wall part type {kind!r}")
    return parts

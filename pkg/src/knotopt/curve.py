"""Closed polygonal curves, derived geometry, and parametric generators.

A :class:`Polygon` is an embedded closed polygonal curve with ``N >= 4``
vertices in ``R^m`` (``m >= 2``).  Edge ``i`` connects vertex ``i`` to
vertex ``(i+1) % N``; the vertex ordering fixes the orientation.  All
curve objects are immutable value data after construction: derived tables
(edge lengths, tangents, arc-length prefix sums) are computed once and the
underlying arrays are marked read-only, so polygons can be shared freely
between threads.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import collision
from .errors import DegenerateEdge, SelfIntersection, TooFewVertices

# Edges shorter than this fraction of the polygon diameter are degenerate,
# and non-adjacent pairs closer than this fraction of the total length
# count as self-contact.
_DEGENERACY_SCALE = 1e-12


@dataclass(frozen=True)
class EdgeFrame:
    """One edge with its endpoints, length, and unit tangent."""

    index: int
    start: np.ndarray
    end: np.ndarray
    length: float
    tangent: np.ndarray


@dataclass(frozen=True)
class ArcTable:
    """Arc-length prefix sums: ``prefix[i]`` is the length before edge i."""

    prefix: np.ndarray
    total: float


@dataclass(frozen=True)
class QuadPoint:
    """A point on edge ``edge`` at local parameter ``t`` in [0, 1]."""

    edge: int
    t: float
    position: np.ndarray
    arc_coord: float


class Polygon:
    """Embedded closed polygonal curve."""

    def __init__(self, vertices, *, validate: bool = True):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2:
            raise ValueError("vertices must be an (N, m) array")
        n, m = v.shape
        if n < 4:
            raise TooFewVertices(f"need at least 4 vertices, got {n}")
        if m < 2:
            raise ValueError(f"ambient dimension must be >= 2, got {m}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")

        edges = np.roll(v, -1, axis=0) - v
        lengths = np.linalg.norm(edges, axis=1)
        diameter = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
        if diameter == 0.0 or np.any(lengths <= _DEGENERACY_SCALE * diameter):
            raise DegenerateEdge(
                f"shortest edge {lengths.min():.3e} vs diameter {diameter:.3e}"
            )

        self.vertices = v
        self.edge_vectors = edges
        self.edge_lengths = lengths
        self.tangents = edges / lengths[:, None]
        self.total_length = float(lengths.sum())
        self.arc_prefix = np.concatenate(([0.0], np.cumsum(lengths)[:-1]))

        if validate and collision.min_nonadjacent_distance(v) <= (
            _DEGENERACY_SCALE * self.total_length
        ):
            report = collision.proximity_report(v)
            raise SelfIntersection(
                f"edges {report.pair} at distance {report.min_distance:.3e}"
            )

        for arr in (self.vertices, self.edge_vectors, self.edge_lengths,
                    self.tangents, self.arc_prefix):
            arr.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def arc_table(self) -> ArcTable:
        return ArcTable(prefix=self.arc_prefix, total=self.total_length)

    def edge_frame(self, i: int) -> EdgeFrame:
        n = self.num_vertices
        i = int(i) % n
        return EdgeFrame(
            index=i,
            start=self.vertices[i],
            end=self.vertices[(i + 1) % n],
            length=float(self.edge_lengths[i]),
            tangent=self.tangents[i],
        )

    def quad_point(self, edge: int, t: float) -> QuadPoint:
        n = self.num_vertices
        edge = int(edge) % n
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"local parameter t={t} outside [0, 1]")
        pos = (1.0 - t) * self.vertices[edge] + t * self.vertices[(edge + 1) % n]
        s = float(self.arc_prefix[edge] + t * self.edge_lengths[edge])
        return QuadPoint(edge=edge, t=float(t), position=pos, arc_coord=s)

    def with_vertices(self, vertices, *, validate: bool = True) -> "Polygon":
        return Polygon(vertices, validate=validate)

    def __repr__(self) -> str:
        return (
            f"Polygon(N={self.num_vertices}, m={self.dim}, "
            f"L={self.total_length:.6g})"
        )


def geodesic_distance(polygon: Polygon, a: QuadPoint, b: QuadPoint) -> float:
    """Length of the shorter arc of the polygon between two of its points."""
    total = polygon.total_length
    gap = abs(a.arc_coord - b.arc_coord)
    return min(gap, total - gap)


def arc_distance(polygon: Polygon, s_a, s_b):
    """Vectorized geodesic distance between arc coordinates."""
    gap = np.abs(np.asarray(s_a) - np.asarray(s_b))
    return np.minimum(gap, polygon.total_length - gap)


def regular_ngon(n: int, radius: float = 1.0, dim: int = 2) -> Polygon:
    """Planar regular polygon inscribed in a circle of the given radius.

    Lives in the first two coordinates of ``R^dim``.
    """
    if n < 4:
        raise TooFewVertices(f"need at least 4 vertices, got {n}")
    theta = 2.0 * np.pi * np.arange(n) / n
    v = np.zeros((n, dim))
    v[:, 0] = radius * np.cos(theta)
    v[:, 1] = radius * np.sin(theta)
    return Polygon(v)


def torus_knot(p: int, q: int, n: int, big_radius: float = 2.0,
               small_radius: float = 1.0) -> Polygon:
    """Polygonal (p, q) torus knot, sampled uniformly in parameter.

    Winds ``p`` times around the torus axis and ``q`` times around the
    tube.  Raises :class:`SelfIntersection` when ``n`` is too small for the
    sampled polyline to be embedded.
    """
    if math.gcd(p, q) != 1:
        raise ValueError(f"(p, q) = ({p}, {q}) must be coprime")
    if p < 1 or q < 0:
        raise ValueError(f"need p >= 1 and q >= 0, got ({p}, {q})")
    t = 2.0 * np.pi * np.arange(n) / n
    ring = big_radius + small_radius * np.cos(q * t)
    v = np.column_stack((
        ring * np.cos(p * t),
        ring * np.sin(p * t),
        small_radius * np.sin(q * t),
    ))
    return Polygon(v)


def coiled_unknot(n: int, windings: int = 4, aspect: float = 3.0) -> Polygon:
    """Tightly coiled unknot: a helix wound around a circular axis.

    The curve winds ``windings`` times around the tube of a torus whose
    axis circle has radius ``aspect`` times the coil radius, while passing
    once around the axis, so the isotopy class is trivial by construction.
    Small ``aspect`` collapses the coil onto the axis and fails the
    embeddedness check.
    """
    if windings < 1:
        raise ValueError("windings must be >= 1")
    if n < 8 * windings:
        raise TooFewVertices(
            f"need at least {8 * windings} vertices for {windings} windings"
        )
    t = 2.0 * np.pi * np.arange(n) / n
    ring = aspect + np.cos(windings * t)
    v = np.column_stack((
        ring * np.cos(t),
        ring * np.sin(t),
        np.sin(windings * t),
    ))
    return Polygon(v)


def perturbed_circle(n: int, amplitude: float = 0.05, harmonics=(2, 3, 4, 5, 6),
                     seed: int = 0, dim: int = 2) -> Polygon:
    """Circle with a fixed smooth radial perturbation, sampled at n points.

    The perturbation is a seeded low-harmonic trigonometric polynomial
    normalized to peak amplitude ``amplitude``, so different resolutions
    ``n`` sample the same underlying smooth curve.  Used as the standard
    mesh-refinement test family.
    """
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal(len(harmonics))
    phase = rng.uniform(0.0, 2.0 * np.pi, len(harmonics))

    def bump_at(angles):
        return sum(c * np.cos(h * angles + ph)
                   for c, h, ph in zip(coeff, harmonics, phase))

    theta = 2.0 * np.pi * np.arange(n) / n
    dense = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
    peak = np.abs(bump_at(dense)).max()
    r = 1.0 + amplitude * bump_at(theta) / peak
    v = np.zeros((n, dim))
    v[:, 0] = r * np.cos(theta)
    v[:, 1] = r * np.sin(theta)
    return Polygon(v)

"""Discrete self-repulsion energy of a closed polygon and its derivatives.

The main scalar is assembled as ``4 + sum over ordered pairs of edges with
disjoint closures of W_IJ`` where each local contribution applies a tensor
quadrature rule to a tangent-point style integrand that stays bounded away
from the pair diagonal.  Writing ``a``, ``b`` for the two edge vectors and
``d`` for the difference of the two quadrature points, the weighted
integrand is

    w = (|a||b| + <a,b>) / |d|^2  -  2 <d,a><d,b> / |d|^4,

which already includes the ``|a||b|`` length factors of the pair.  Because
``w`` depends only on the four endpoints of the pair, its first and second
derivatives are available in closed form; the gradient and Hessian
assemblers below accumulate those local derivatives over the pair list in
a fixed order, so results are reproducible bit-for-bit.

Two classic single-node variants (evaluating the bare energy density at
vertices or edge midpoints) are provided for comparison, along with the
pointwise energy density used as a weight by the metric assembly.
"""

from dataclasses import dataclass

import numpy as np

from .collision import nonadjacent_pairs
from .curve import Polygon, QuadPoint, arc_distance
from .errors import AdjacentEdges, CoincidentPoints

_COINCIDENCE_SCALE = 1e-12


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on [0, 1]; weights sum to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_1d(np.asarray(self.nodes, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if nodes.shape != weights.shape or nodes.ndim != 1 or len(nodes) < 1:
            raise ValueError("nodes and weights must be matching 1-d arrays")
        if nodes.min() < 0.0 or nodes.max() > 1.0:
            raise ValueError("quadrature nodes must lie in [0, 1]")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def order(self) -> int:
        return len(self.nodes)

    @classmethod
    def midpoint(cls) -> "QuadratureRule":
        return cls(np.array([0.5]), np.array([1.0]))

    @classmethod
    def vertex(cls) -> "QuadratureRule":
        return cls(np.array([0.0]), np.array([1.0]))

    @classmethod
    def gauss(cls, k: int) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(k)
        return cls(0.5 * (x + 1.0), 0.5 * w)


MIDPOINT = QuadratureRule.midpoint()


@dataclass(frozen=True)
class EnergyValue:
    """Scalar energy, optionally with the table of pair contributions."""

    value: float
    pair_edges: np.ndarray | None = None
    pair_contributions: np.ndarray | None = None

    def __float__(self) -> float:
        return self.value


def in_integrand(p_lo_i, p_hi_i, p_lo_j, p_hi_j, s: float, t: float) -> float:
    """Pointwise integrand for one edge pair at local parameters (s, t).

    ``F = |t_I - t_J|^2 / (2 |dg|^2) + 2 <t_I, t_J> / |dg|^2
    - 2 <dg, t_I> <dg, t_J> / |dg|^4`` with ``dg`` the difference of the
    two evaluation points and ``t_I``, ``t_J`` the unit edge tangents.
    """
    p_lo_i = np.asarray(p_lo_i, dtype=float)
    p_hi_i = np.asarray(p_hi_i, dtype=float)
    p_lo_j = np.asarray(p_lo_j, dtype=float)
    p_hi_j = np.asarray(p_hi_j, dtype=float)
    a = p_hi_i - p_lo_i
    b = p_hi_j - p_lo_j
    tau_i = a / np.linalg.norm(a)
    tau_j = b / np.linalg.norm(b)
    dg = ((1.0 - s) * p_lo_i + s * p_hi_i) - ((1.0 - t) * p_lo_j + t * p_hi_j)
    r2 = float(dg @ dg)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if r2 <= (_COINCIDENCE_SCALE * scale) ** 2:
        raise CoincidentPoints(f"evaluation points coincide, |dg|^2 = {r2:.3e}")
    dtau = tau_i - tau_j
    return float(
        (dtau @ dtau) / (2.0 * r2)
        + 2.0 * (tau_i @ tau_j) / r2
        - 2.0 * (dg @ tau_i) * (dg @ tau_j) / r2**2
    )


def _edges_adjacent(n: int, i: int, j: int) -> bool:
    return (i - j) % n in (0, 1, n - 1)


def local_contribution(polygon: Polygon, i: int, j: int,
                       quad: QuadratureRule = MIDPOINT) -> float:
    """Quadrature-weighted contribution W_IJ of one disjoint edge pair."""
    n = polygon.num_vertices
    i, j = int(i) % n, int(j) % n
    if _edges_adjacent(n, i, j):
        raise AdjacentEdges(f"edges {i} and {j} share a vertex")
    li = polygon.edge_lengths[i]
    lj = polygon.edge_lengths[j]
    total = 0.0
    for s, wi in zip(quad.nodes, quad.weights):
        for t, wj in zip(quad.nodes, quad.weights):
            f = in_integrand(
                polygon.vertices[i], polygon.vertices[(i + 1) % n],
                polygon.vertices[j], polygon.vertices[(j + 1) % n],
                s, t,
            )
            total += wi * wj * f
    return float(li * lj * total)


def _quad_positions(polygon: Polygon, quad: QuadratureRule) -> np.ndarray:
    """Positions of all quadrature nodes, shape (N, k, m)."""
    v = polygon.vertices
    nxt = np.roll(v, -1, axis=0)
    t = quad.nodes[None, :, None]
    return (1.0 - t) * v[:, None, :] + t * nxt[:, None, :]


def _check_separation(polygon: Polygon, r2: np.ndarray):
    floor = (_COINCIDENCE_SCALE * polygon.total_length) ** 2
    if r2.min() <= floor:
        raise CoincidentPoints(
            f"quadrature points at squared distance {r2.min():.3e}"
        )


def _pair_terms(polygon: Polygon, quad: QuadratureRule):
    """Iterator over quadrature node combinations with pair geometry.

    Yields ``(weight, s, t, d, r2)`` with ``d`` the point differences for
    every disjoint pair, for one (s, t) node combination at a time.
    """
    pi, pj = nonadjacent_pairs(polygon.num_vertices)
    x = _quad_positions(polygon, quad)
    for qi in range(quad.order):
        for qj in range(quad.order):
            d = x[pi, qi] - x[pj, qj]
            r2 = np.einsum("pk,pk->p", d, d)
            _check_separation(polygon, r2)
            yield (
                float(quad.weights[qi] * quad.weights[qj]),
                float(quad.nodes[qi]),
                float(quad.nodes[qj]),
                d,
                r2,
            )


def energy(polygon: Polygon, quad: QuadratureRule = MIDPOINT,
           with_pairs: bool = False) -> EnergyValue:
    """Total energy ``4 + sum of all ordered disjoint-pair contributions``."""
    pi, pj = nonadjacent_pairs(polygon.num_vertices)
    a = polygon.edge_vectors[pi]
    b = polygon.edge_vectors[pj]
    ss = polygon.edge_lengths[pi] * polygon.edge_lengths[pj] + np.einsum(
        "pk,pk->p", a, b
    )
    w = np.zeros(len(pi))
    for weight, _, _, d, r2 in _pair_terms(polygon, quad):
        u = np.einsum("pk,pk->p", d, a)
        v = np.einsum("pk,pk->p", d, b)
        w += weight * (ss / r2 - 2.0 * u * v / r2**2)
    total = 4.0 + 2.0 * float(w.sum())
    if with_pairs:
        return EnergyValue(total, np.column_stack((pi, pj)), w)
    return EnergyValue(total)


def d_energy(polygon: Polygon, quad: QuadratureRule = MIDPOINT) -> np.ndarray:
    """Exact derivative of the energy, flat (N*m,) in vertex-major layout."""
    n, m = polygon.num_vertices, polygon.dim
    pi, pj = nonadjacent_pairs(n)
    head = np.roll(np.arange(n), -1)
    a = polygon.edge_vectors[pi]
    b = polygon.edge_vectors[pj]
    la = polygon.edge_lengths[pi]
    lb = polygon.edge_lengths[pj]
    ss = la * lb + np.einsum("pk,pk->p", a, b)

    grad = np.zeros((n, m))
    for weight, s, t, d, r2 in _pair_terms(polygon, quad):
        q = 1.0 / r2
        u = np.einsum("pk,pk->p", d, a)
        v = np.einsum("pk,pk->p", d, b)
        ga = ((lb / la)[:, None] * a + b) * q[:, None] - (2.0 * v * q**2)[:, None] * d
        gb = ((la / lb)[:, None] * b + a) * q[:, None] - (2.0 * u * q**2)[:, None] * d
        gd = (
            (-2.0 * ss * q**2 + 8.0 * u * v * q**3)[:, None] * d
            - (2.0 * q**2)[:, None] * (v[:, None] * a + u[:, None] * b)
        )
        np.add.at(grad, pi, weight * (-ga + (1.0 - s) * gd))
        np.add.at(grad, head[pi], weight * (ga + s * gd))
        np.add.at(grad, pj, weight * (-gb - (1.0 - t) * gd))
        np.add.at(grad, head[pj], weight * (gb - t * gd))
    return 2.0 * grad.ravel()


def _outer(x, y):
    return x[:, :, None] * y[:, None, :]


def d2_energy(polygon: Polygon, quad: QuadratureRule = MIDPOINT) -> np.ndarray:
    """Dense symmetric Hessian of the energy, (N*m, N*m), vertex-major."""
    n, m = polygon.num_vertices, polygon.dim
    pi, pj = nonadjacent_pairs(n)
    head = np.roll(np.arange(n), -1)
    a = polygon.edge_vectors[pi]
    b = polygon.edge_vectors[pj]
    la = polygon.edge_lengths[pi]
    lb = polygon.edge_lengths[pj]
    ahat = a / la[:, None]
    bhat = b / lb[:, None]
    ss = la * lb + np.einsum("pk,pk->p", a, b)
    eye = np.eye(m)[None, :, :]

    hess = np.zeros((n, n, m, m))
    vertex_ids = (pi, head[pi], pj, head[pj])
    for weight, s, t, d, r2 in _pair_terms(polygon, quad):
        q = 1.0 / r2
        u = np.einsum("pk,pk->p", d, a)
        v = np.einsum("pk,pk->p", d, b)
        q2 = q * q
        q3 = q2 * q

        blocks = np.empty((len(pi), 3, 3, m, m))
        blocks[:, 0, 0] = (q * lb / la)[:, None, None] * (eye - _outer(ahat, ahat))
        blocks[:, 1, 1] = (q * la / lb)[:, None, None] * (eye - _outer(bhat, bhat))
        blocks[:, 0, 1] = (
            q[:, None, None] * (_outer(ahat, bhat) + eye)
            - (2.0 * q2)[:, None, None] * _outer(d, d)
        )
        blocks[:, 1, 0] = blocks[:, 0, 1].transpose(0, 2, 1)
        had = (
            (-2.0 * q2)[:, None, None] * _outer(lb[:, None] * ahat + b, d)
            - (2.0 * q2)[:, None, None] * _outer(d, b)
            - (2.0 * v * q2)[:, None, None] * eye
            + (8.0 * v * q3)[:, None, None] * _outer(d, d)
        )
        hbd = (
            (-2.0 * q2)[:, None, None] * _outer(la[:, None] * bhat + a, d)
            - (2.0 * q2)[:, None, None] * _outer(d, a)
            - (2.0 * u * q2)[:, None, None] * eye
            + (8.0 * u * q3)[:, None, None] * _outer(d, d)
        )
        blocks[:, 0, 2] = had
        blocks[:, 2, 0] = had.transpose(0, 2, 1)
        blocks[:, 1, 2] = hbd
        blocks[:, 2, 1] = hbd.transpose(0, 2, 1)
        mix = v[:, None] * a + u[:, None] * b
        blocks[:, 2, 2] = (
            (-2.0 * ss * q2 + 8.0 * u * v * q3)[:, None, None] * eye
            + (8.0 * ss * q3 - 48.0 * u * v * q2 * q2)[:, None, None] * _outer(d, d)
            + (8.0 * q3)[:, None, None] * (_outer(mix, d) + _outer(d, mix))
            - (2.0 * q2)[:, None, None] * (_outer(a, b) + _outer(b, a))
        )

        # Chain through the linear map from the four pair vertices to
        # (a, b, d); the map is linear so no curvature terms appear.
        cmat = np.array([
            [-1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 1.0],
            [1.0 - s, s, -(1.0 - t), -t],
        ])
        local = np.einsum("xi,yj,pxyuv->pijuv", cmat, cmat, blocks)
        for bi in range(4):
            for bj in range(4):
                np.add.at(
                    hess,
                    (vertex_ids[bi], vertex_ids[bj]),
                    weight * local[:, bi, bj],
                )

    full = 2.0 * hess.transpose(0, 2, 1, 3).reshape(n * m, n * m)
    return 0.5 * (full + full.T)


def energy_density(polygon: Polygon, a: QuadPoint, b: QuadPoint) -> float:
    """Pointwise density ``1/|dg|^2 - 1/rho^2`` between two curve points."""
    dg = a.position - b.position
    r2 = float(dg @ dg)
    if r2 <= (_COINCIDENCE_SCALE * polygon.total_length) ** 2:
        raise CoincidentPoints("curve points coincide")
    gap = abs(a.arc_coord - b.arc_coord)
    rho = min(gap, polygon.total_length - gap)
    return 1.0 / r2 - 1.0 / rho**2


def ks_energy(polygon: Polygon, variant: str = "edge") -> float:
    """Single-node discretization of the bare energy density.

    ``variant="vertex"`` evaluates at edge start points, ``"edge"`` at edge
    midpoints; both weight each disjoint pair with the product of its edge
    lengths and use the polygon's own arc length for the geodesic part.
    """
    if variant == "vertex":
        t = 0.0
    elif variant == "edge":
        t = 0.5
    else:
        raise ValueError(f"unknown variant {variant!r}")
    n = polygon.num_vertices
    pi, pj = nonadjacent_pairs(n)
    x = _quad_positions(polygon, QuadratureRule(np.array([t]), np.array([1.0])))[:, 0]
    s_arc = polygon.arc_prefix + t * polygon.edge_lengths
    d = x[pi] - x[pj]
    r2 = np.einsum("pk,pk->p", d, d)
    _check_separation(polygon, r2)
    rho = arc_distance(polygon, s_arc[pi], s_arc[pj])
    ll = polygon.edge_lengths[pi] * polygon.edge_lengths[pj]
    return 2.0 * float(np.sum(ll * (1.0 / r2 - 1.0 / rho**2)))

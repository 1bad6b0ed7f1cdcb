import numpy as np
import pytest

import knotopt as ko


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_embedded_polygon(n, dim=2, noise=0.25, seed=0):
    """Regular n-gon with per-vertex noise, retried until embedded.

    ``noise`` is relative to the edge length, so the perturbation scale is
    mesh-consistent.
    """
    rng = np.random.default_rng(seed)
    base = ko.regular_ngon(n, dim=dim)
    scale = noise * base.total_length / n
    for _ in range(50):
        vertices = base.vertices + scale * rng.standard_normal(base.vertices.shape)
        try:
            return ko.Polygon(vertices)
        except ko.KnotOptError:
            continue
    raise RuntimeError(f"could not sample an embedded polygon with n={n}")


def feasible_targets(polygon):
    return ko.ConstraintTargets.from_polygon(polygon)


def rotation_matrix(dim, rng, plane=(0, 1)):
    """Random rotation in one coordinate plane (exactly orthogonal)."""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    r = np.eye(dim)
    i, j = plane
    r[i, i] = r[j, j] = np.cos(theta)
    r[i, j] = -np.sin(theta)
    r[j, i] = np.sin(theta)
    return r

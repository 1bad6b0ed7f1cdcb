import numpy as np
import pytest

import knotopt as ko
from conftest import random_embedded_polygon


def make_system(n=16, seed=0, kind=ko.W32_GEOMETRIC, dim=2):
    p = random_embedded_polygon(n, dim=dim, seed=seed)
    gram = ko.assemble_gram(p, kind)
    jac = ko.d_phi(p)
    return p, gram, jac, ko.factorize(gram, jac)


class TestFactorize:
    def test_solve_residual_contract(self, rng):
        _, gram, jac, fact = make_system(16)
        rhs = rng.standard_normal(fact.matrix.shape[0])
        x = fact.solve(rhs)
        assert np.linalg.norm(fact.matrix @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_duplicate_constraint_row_is_singular(self):
        _, gram, jac, _ = make_system(12, seed=1)
        bad = np.vstack((jac, jac[0]))
        with pytest.raises(ko.SingularSystem):
            ko.factorize(gram, bad)

    def test_empty_constraint_block_rejected(self):
        with pytest.raises(ValueError):
            ko.factorize(np.eye(6), np.zeros((0, 6)))

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            ko.factorize(np.eye(6), np.ones((2, 5)))


class TestProjectedGradient:
    def test_normal_load_annihilated(self, rng):
        _, _, jac, fact = make_system(12, seed=2)
        mu = rng.standard_normal(jac.shape[0])
        u, _ = ko.projected_gradient(fact, jac.T @ mu)
        assert np.linalg.norm(u) <= 1e-10 * np.linalg.norm(jac.T @ mu)

    def test_tangency_and_energy_identity(self, rng):
        _, gram, jac, fact = make_system(8, seed=3)
        eta = rng.standard_normal(jac.shape[1])
        u, lam = ko.projected_gradient(fact, eta)
        assert np.linalg.norm(jac @ u) <= 1e-10 * np.linalg.norm(u)
        pairing = float(eta @ u)
        assert pairing >= 0.0
        assert pairing == pytest.approx(gram.inner(u, u), rel=1e-9)
        # Stationarity of the full KKT system.
        assert np.allclose(gram.apply(u) + jac.T @ lam, eta,
                           atol=1e-10 * np.linalg.norm(eta))

    def test_matches_schur_complement_oracle(self):
        # Brute-force dense projection formula at N=6 with an invertible
        # metric.
        p = random_embedded_polygon(6, seed=4)
        gram = ko.assemble_gram(p, ko.W32_GEOMETRIC.with_barycenter(True))
        jac = ko.d_phi(p)
        fact = ko.factorize(gram, jac)
        eta = ko.d_energy(p)
        u, _ = ko.projected_gradient(fact, eta)
        ginv = np.linalg.inv(gram.matrix)
        schur = jac @ ginv @ jac.T
        u_ref = ginv @ eta - ginv @ jac.T @ np.linalg.solve(schur, jac @ ginv @ eta)
        assert np.linalg.norm(u - u_ref) <= 1e-9 * np.linalg.norm(u_ref)


class TestPseudoinverse:
    def test_zero_maps_to_zero(self):
        _, _, _, fact = make_system(10, seed=5)
        assert np.all(ko.pseudoinverse_apply(fact, np.zeros(fact.n_dual)) == 0.0)

    def test_right_inverse_on_range(self, rng):
        _, _, jac, fact = make_system(10, seed=6)
        xi = jac @ rng.standard_normal(jac.shape[1])
        u = ko.pseudoinverse_apply(fact, xi)
        assert np.linalg.norm(jac @ u - xi) <= 1e-10 * np.linalg.norm(xi)

    def test_minimal_norm_property(self, rng):
        _, gram, jac, fact = make_system(10, seed=7)
        xi = jac @ rng.standard_normal(jac.shape[1])
        u = ko.pseudoinverse_apply(fact, xi)
        for _ in range(5):
            shift = ko.project_tangent(fact, rng.standard_normal(jac.shape[1]))
            other = u + shift
            assert gram.inner(u, u) <= gram.inner(other, other) + 1e-10


class TestProjector:
    def test_fixes_tangent_vectors(self, rng):
        _, _, jac, fact = make_system(10, seed=8)
        w = ko.project_tangent(fact, rng.standard_normal(jac.shape[1]))
        again = ko.project_tangent(fact, w)
        assert np.linalg.norm(again - w) <= 1e-10 * np.linalg.norm(w)

    def test_idempotent(self, rng):
        _, _, _, fact = make_system(10, seed=9)
        u = rng.standard_normal(fact.n_primal)
        once = ko.project_tangent(fact, u)
        twice = ko.project_tangent(fact, once)
        assert np.linalg.norm(twice - once) <= 1e-10 * max(np.linalg.norm(once), 1e-30)

    def test_metric_orthogonality_of_residual(self, rng):
        _, gram, jac, fact = make_system(10, seed=10)
        u = rng.standard_normal(fact.n_primal)
        proj = ko.project_tangent(fact, u)
        for _ in range(4):
            v = ko.project_tangent(fact, rng.standard_normal(fact.n_primal))
            inner = gram.inner(u - proj, v)
            assert abs(inner) <= 1e-9 * gram.norm(u) * max(gram.norm(v), 1e-30)

    def test_linear(self, rng):
        _, _, _, fact = make_system(8, seed=11)
        a = rng.standard_normal(fact.n_primal)
        b = rng.standard_normal(fact.n_primal)
        combined = ko.project_tangent(fact, 2.0 * a - 3.0 * b)
        separate = 2.0 * ko.project_tangent(fact, a) - 3.0 * ko.project_tangent(fact, b)
        assert np.allclose(combined, separate, atol=1e-10 * np.abs(separate).max())

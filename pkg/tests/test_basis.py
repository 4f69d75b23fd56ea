import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.basis import (
    OrthonormalBasis,
    basis_eval,
    default_node_count,
    evaluate,
    evaluate_nodal,
    expectation,
    legendre_table,
    project,
    project_nodal,
    quadrature_rule,
    variance,
)
from core.errors import DomainError


class TestQuadrature:
    """Gauss-Legendre rule with the uniform density folded into the weights."""

    def test_weights_sum_to_one(self):
        for n in (1, 2, 5, 42):
            assert_allclose(quadrature_rule(n).weights.sum(), 1.0, atol=1e-14)

    def test_nodes_sorted_inside_support(self):
        rule = quadrature_rule(9)
        assert np.all(np.diff(rule.nodes) > 0)
        assert np.all(np.abs(rule.nodes) < 1.0)

    @pytest.mark.parametrize("k", range(10))
    def test_exact_for_degree_below_2n(self, k):
        rule = quadrature_rule(5)
        exact = 0.0 if k % 2 else 1.0 / (k + 1)
        assert_allclose(rule.integrate(lambda t: t**k), exact, atol=1e-14)

    def test_zero_nodes_rejected(self):
        with pytest.raises(DomainError):
            quadrature_rule(0)

    def test_default_node_count(self):
        assert default_node_count(4) == 10


class TestBasis:
    """Orthonormal Legendre polynomials."""

    def test_low_degrees(self):
        t = np.linspace(-1, 1, 7)
        assert_allclose(basis_eval(0, t), np.ones_like(t))
        assert_allclose(basis_eval(1, t), math.sqrt(3) * t)
        assert_allclose(basis_eval(2, t, max_degree=4), math.sqrt(5) * (3 * t**2 - 1) / 2)

    @pytest.mark.parametrize("M", [0, 1, 4, 20])
    def test_orthonormal(self, M):
        rule = quadrature_rule(default_node_count(M))
        phi = OrthonormalBasis(M).at_rule(rule)
        gram = (phi * rule.weights) @ phi.T
        assert_allclose(gram, np.eye(M + 1), atol=1e-11)

    def test_table_shape_follows_theta(self):
        assert legendre_table(3, np.zeros((2, 5))).shape == (4, 2, 5)

    def test_degree_out_of_range(self):
        with pytest.raises(DomainError):
            OrthonormalBasis(3).eval(4, 0.0)

    def test_theta_outside_support(self):
        with pytest.raises(DomainError):
            basis_eval(1, 1.5)
        with pytest.raises(DomainError):
            evaluate(np.ones(3), np.array([-2.0]))

    def test_cache_returns_read_only_table(self):
        basis = OrthonormalBasis(2)
        rule = quadrature_rule(6)
        first = basis.at_rule(rule)
        assert basis.at_rule(rule) is first
        assert not first.flags.writeable


class TestProjection:
    """Projection onto the chaos modes and back."""

    def test_polynomial_is_recovered(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=7)
        rule = quadrature_rule(default_node_count(6))
        assert_allclose(project(lambda t: evaluate(v, t), 6, rule), v, atol=1e-12)

    def test_theta_squared(self):
        rule = quadrature_rule(6)
        coeffs = project(lambda t: t**2, 2, rule)
        assert_allclose(coeffs, [1 / 3, 0.0, 2 / (3 * math.sqrt(5))], atol=1e-14)

    def test_nodal_round_trip_is_batched(self):
        rng = np.random.default_rng(0)
        basis = OrthonormalBasis(3)
        rule = quadrature_rule(default_node_count(3))
        v = rng.normal(size=(11, 4))
        assert_allclose(project_nodal(evaluate_nodal(v, basis, rule), basis, rule), v, atol=1e-12)

    def test_too_few_nodes(self):
        with pytest.raises(DomainError):
            project(lambda t: t, 4, quadrature_rule(3))

    def test_statistics(self):
        v = np.array([[2.0, 3.0, 4.0], [1.0, 0.0, 0.0]])
        assert_allclose(expectation(v), [2.0, 1.0])
        assert_allclose(variance(v), [25.0, 0.0])
        assert expectation(np.array([0.5, 1.0])) == 0.5

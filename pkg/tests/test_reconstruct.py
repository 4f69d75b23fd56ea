import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.basis import quadrature_rule
from core.errors import DomainError
from core.particles import ParticleEnsemble, init_gaussian
from core.reconstruct import (
    DensityField,
    PhaseGrid,
    density_at_theta,
    dump_density,
    expected_density,
    l1_distance,
    marginal_mean,
    variance_density,
    velocity_marginal,
)

GRID_2D = PhaseGrid(v_lo=-3.0, v_hi=3.0, Nv=40, x_lo=-2.0, x_hi=2.0, Nx=20, periodic=True)
GRID_1D = PhaseGrid(v_lo=-3.0, v_hi=3.0, Nv=30)


def _uncertain_ensemble(N=2000, seed=3):
    rng = np.random.default_rng(seed)
    x = np.zeros((N, 3))
    v = np.zeros((N, 3))
    x[:, 0] = rng.uniform(-1.5, 1.5, N)
    v[:, 0] = rng.normal(0.5, 0.3, N)
    v[:, 1] = 0.2
    return ParticleEnsemble(x=x, v=v)


class TestGrid:
    def test_around_nodes(self):
        grid = PhaseGrid.around_nodes(-3.0, 3.0, 81)
        assert_allclose(grid.v_centers, np.linspace(-3.0, 3.0, 81), atol=1e-12)
        assert_allclose(grid.dv, 0.075)

    def test_empty_grid(self):
        with pytest.raises(DomainError):
            PhaseGrid(v_lo=1.0, v_hi=1.0, Nv=10)


class TestDensities:
    """Histogram densities at one θ and their quadrature statistics."""

    def test_expected_density_is_normalized(self):
        ens = _uncertain_ensemble()
        field = expected_density(ens, GRID_2D, quadrature_rule(6))
        assert field.kind == "expectation"
        assert_allclose(field.mass + field.out_of_grid, 1.0, atol=1e-12)
        assert field.out_of_grid < 0.01

    def test_out_of_grid_mass_is_counted(self):
        ens = init_gaussian(100, 1, 0.0, 0.0, 0.0, 0.1, seed=1)
        ens.v[:50, 0] = 10.0
        field = density_at_theta(ens, GRID_1D, 0.0)
        assert_allclose(field.out_of_grid, 0.5)
        assert_allclose(field.mass, 0.5)

    def test_deterministic_ensemble_has_no_variance(self):
        ens = init_gaussian(500, 2, 0.0, 0.5, 0.0, 0.5, seed=2)
        var = variance_density(ens, GRID_2D, quadrature_rule(6))
        assert_allclose(var.values, 0.0, atol=1e-12)

    def test_uncertain_ensemble_has_variance(self):
        var = variance_density(_uncertain_ensemble(), GRID_1D, quadrature_rule(6))
        assert var.values.max() > 0.0
        assert np.all(var.values >= 0.0)

    def test_periodic_positions_wrap(self):
        ens = ParticleEnsemble(x=np.array([[2.5, 0.0]]), v=np.array([[0.05, 0.0]]))
        field = density_at_theta(ens, GRID_2D, 0.0)
        assert field.out_of_grid == 0.0
        i, j = np.unravel_index(np.argmax(field.values), field.values.shape)
        assert GRID_2D.x_edges[i] <= -1.5 < GRID_2D.x_edges[i + 1]

        open_grid = PhaseGrid(v_lo=-3.0, v_hi=3.0, Nv=40, x_lo=-2.0, x_hi=2.0, Nx=20)
        assert density_at_theta(ens, open_grid, 0.0).out_of_grid == 1.0

    def test_theta_outside_support(self):
        with pytest.raises(DomainError):
            density_at_theta(_uncertain_ensemble(), GRID_1D, 1.5)

    def test_rule_too_small(self):
        with pytest.raises(DomainError):
            expected_density(_uncertain_ensemble(), GRID_1D, quadrature_rule(2))


class TestMarginal:
    def test_marginal_keeps_mass(self):
        field = expected_density(_uncertain_ensemble(), GRID_2D, quadrature_rule(6))
        marginal = velocity_marginal(field)
        assert not marginal.grid.two_d
        assert_allclose(marginal.mass, field.mass, atol=1e-12)

    def test_marginal_mean(self):
        values = np.zeros(30)
        values[[10, 19]] = 1.0
        field = DensityField(values=values, kind="expectation", grid=GRID_1D)
        assert_allclose(marginal_mean(field), 0.5 * (GRID_1D.v_centers[10] + GRID_1D.v_centers[19]))

    def test_one_dimensional_input(self):
        field = expected_density(_uncertain_ensemble(), GRID_1D, quadrature_rule(6))
        with pytest.raises(DomainError):
            velocity_marginal(field)


class TestDistance:
    def test_l1(self):
        a = DensityField(values=np.full(30, 1.0 / 6.0), kind="expectation", grid=GRID_1D)
        assert l1_distance(a, a) == 0.0
        assert_allclose(l1_distance(a, np.zeros(30)), 1.0)

    def test_shape_mismatch(self):
        a = DensityField(values=np.zeros(30), kind="expectation", grid=GRID_1D)
        with pytest.raises(DomainError):
            l1_distance(a, np.zeros(31))

    def test_dump(self, tmp_path):
        field = expected_density(_uncertain_ensemble(), GRID_2D, quadrature_rule(6))
        path = tmp_path / "density.csv"
        dump_density(field, str(path), 0.5)
        text = path.read_text()
        assert text.startswith("# kind=expectation t=0.5")
        assert np.loadtxt(str(path), delimiter=",").shape == (20, 40)

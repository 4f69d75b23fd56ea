"""
Histogram reconstruction of densities from gPC-mode particle ensembles.

A field is a true probability density on a uniform phase grid. Particles
falling outside the grid are counted in `out_of_grid` (never clamped), so
in-grid mass + out_of_grid = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.basis import QuadratureRule, evaluate, evaluate_nodal, OrthonormalBasis
from core.errors import DomainError
from core.particles import ParticleEnsemble

KINDS = ("expectation", "variance", "sample")


@dataclass(frozen=True)
class PhaseGrid:
    v_lo: float
    v_hi: float
    Nv: int
    x_lo: float = 0.0
    x_hi: float = 0.0
    Nx: int = 0
    periodic: bool = False

    def __post_init__(self):
        if self.Nv < 1 or not self.v_hi > self.v_lo:
            raise DomainError(f"empty velocity grid [{self.v_lo}, {self.v_hi}] with {self.Nv} cells")
        if self.Nx < 0 or (self.Nx > 0 and not self.x_hi > self.x_lo):
            raise DomainError(f"empty position grid [{self.x_lo}, {self.x_hi}] with {self.Nx} cells")

    @classmethod
    def around_nodes(cls, v_lo: float, v_hi: float, n_nodes: int) -> "PhaseGrid":
        """1-D grid whose cell centres are the n_nodes points of linspace(v_lo, v_hi)."""
        if n_nodes < 2:
            raise DomainError(f"need at least two velocity nodes, got {n_nodes}")
        h = (v_hi - v_lo) / (n_nodes - 1)
        return cls(v_lo=v_lo - h / 2, v_hi=v_hi + h / 2, Nv=n_nodes)

    @property
    def two_d(self) -> bool:
        return self.Nx > 0

    @property
    def dv(self) -> float:
        return (self.v_hi - self.v_lo) / self.Nv

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.Nx if self.two_d else 1.0

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dv

    @property
    def v_edges(self) -> np.ndarray:
        return np.linspace(self.v_lo, self.v_hi, self.Nv + 1)

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.Nx + 1)

    @property
    def v_centers(self) -> np.ndarray:
        e = self.v_edges
        return 0.5 * (e[1:] + e[:-1])

    def velocity_only(self) -> "PhaseGrid":
        return PhaseGrid(v_lo=self.v_lo, v_hi=self.v_hi, Nv=self.Nv)


@dataclass(frozen=True)
class DensityField:
    values: np.ndarray
    kind: str
    grid: PhaseGrid
    out_of_grid: float = 0.0
    theta: Optional[float] = None

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


def _histogram(xs: Optional[np.ndarray], vs: np.ndarray, grid: PhaseGrid):
    N = len(vs)
    if grid.two_d:
        if grid.periodic:
            xs = grid.x_lo + np.mod(xs - grid.x_lo, grid.x_hi - grid.x_lo)
        counts, _, _ = np.histogram2d(xs, vs, bins=[grid.x_edges, grid.v_edges])
    else:
        counts, _ = np.histogram(vs, bins=grid.v_edges)

    inside = counts.sum()
    return counts / (N * grid.cell_volume), 1.0 - inside / N


def density_at_theta(ens: ParticleEnsemble, grid: PhaseGrid, theta: float) -> DensityField:
    t = np.asarray([theta])
    vs = evaluate(ens.v, t)[:, 0]
    xs = evaluate(ens.x, t)[:, 0] if grid.two_d else None
    values, out = _histogram(xs, vs, grid)
    return DensityField(values=values, kind="sample", grid=grid, out_of_grid=out, theta=float(theta))


def _node_histograms(ens: ParticleEnsemble, grid: PhaseGrid, rule: QuadratureRule):
    if rule.n < ens.M + 1:
        raise DomainError(f"reconstruction needs a rule with at least {ens.M + 1} nodes, got {rule.n}")
    basis = OrthonormalBasis(ens.M)
    vq = evaluate_nodal(ens.v, basis, rule)
    xq = evaluate_nodal(ens.x, basis, rule) if grid.two_d else None

    for q in range(rule.n):
        yield rule.weights[q], _histogram(None if xq is None else xq[:, q], vq[:, q], grid)


def expected_density(ens: ParticleEnsemble, grid: PhaseGrid, rule: QuadratureRule) -> DensityField:
    """E[f] ≈ Σ_q w_q f(θ_q): weighted average of the per-node histograms."""
    values = 0.0
    out = 0.0
    for w, (rho, lost) in _node_histograms(ens, grid, rule):
        values = values + w * rho
        out += w * lost
    return DensityField(values=np.asarray(values), kind="expectation", grid=grid, out_of_grid=out)


def variance_density(ens: ParticleEnsemble, grid: PhaseGrid, rule: QuadratureRule) -> DensityField:
    hists = list(_node_histograms(ens, grid, rule))
    mean = sum(w * rho for w, (rho, _) in hists)
    var = sum(w * (rho - mean) ** 2 for w, (rho, _) in hists)
    return DensityField(values=np.asarray(var), kind="variance", grid=grid)


def velocity_marginal(field: DensityField) -> DensityField:
    """∫ f dx per velocity cell."""
    if not field.grid.two_d or field.values.ndim != 2:
        raise DomainError("velocity marginal needs a 2-D (x, v) field")
    return DensityField(
        values=field.values.sum(axis=0) * field.grid.dx,
        kind=field.kind,
        grid=field.grid.velocity_only(),
        out_of_grid=field.out_of_grid,
        theta=field.theta,
    )


def marginal_mean(marginal: DensityField) -> float:
    if marginal.grid.two_d:
        raise DomainError("marginal mean needs a 1-D velocity density")
    mass = marginal.values.sum()
    if mass <= 0:
        raise DomainError("marginal has no in-grid mass")
    return float(np.dot(marginal.grid.v_centers, marginal.values) / mass)


def l1_distance(a, b, grid: Optional[PhaseGrid] = None) -> float:
    """Σ |a - b| · cell volume; either argument may be a field or a bare array."""
    if grid is None:
        grid = a.grid if isinstance(a, DensityField) else b.grid
    av = a.values if isinstance(a, DensityField) else np.asarray(a)
    bv = b.values if isinstance(b, DensityField) else np.asarray(b)
    if av.shape != bv.shape:
        raise DomainError(f"fields live on different grids: {av.shape} vs {bv.shape}")
    return float(np.abs(av - bv).sum() * grid.cell_volume)


def dump_density(field: DensityField, path: str, t: float) -> None:
    g = field.grid
    header = (
        f"kind={field.kind} t={t:.10g} out_of_grid={field.out_of_grid:.10e}\n"
        f"v_lo={g.v_lo:.10g} v_hi={g.v_hi:.10g} Nv={g.Nv}"
    )
    if g.two_d:
        header += f"\nx_lo={g.x_lo:.10g} x_hi={g.x_hi:.10g} Nx={g.Nx}"
    np.savetxt(path, np.atleast_2d(field.values), delimiter=",", header=header, fmt="%.10e")

"""
Stochastic Galerkin finite-difference solver for the space-homogeneous
flocking equation, with the stationary-state oracle and the free energy.

For every chaos mode h the solver evolves

    ∂_t f̂_h = ∂_v [ Σ_k A_hk (v²-1) v f̂_k + v f̂_h - Σ_k U_hk f̂_k + Σ_k D_hk ∂_v f̂_k ]

on a uniform velocity grid with zero flux at both ends. A_hk and D_hk are
the projections of α(θ) and D(θ); U_hk is rebuilt from the current mean
velocity u_f(θ) at every Runge-Kutta stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn
from scipy.integrate import quad, trapezoid
from scipy.optimize import brentq

from core.basis import (
    OrthonormalBasis,
    QuadratureRule,
    default_node_count,
    evaluate_nodal,
    project_nodal,
    quadrature_rule,
    require_nodes,
)
from core.errors import DomainError, NumericalError
from core.params import UncertainScalar, alpha_matrix, diffusion_matrix
from core.particles import step_count
from utils import logger

# floor inside f log f
_LOG_FLOOR = 1e-14
_NEGATIVE_TOL = 1e-6

STATIONARY_DOMAIN = (-6.0, 6.0)


@dataclass(frozen=True)
class VelocityGrid:
    v_lo: float = -3.0
    v_hi: float = 3.0
    Nv: int = 81

    def __post_init__(self):
        if self.Nv < 3 or not self.v_hi > self.v_lo:
            raise DomainError(f"velocity grid [{self.v_lo}, {self.v_hi}] with {self.Nv} nodes is empty")

    @property
    def dv(self) -> float:
        return (self.v_hi - self.v_lo) / (self.Nv - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.v_lo, self.v_hi, self.Nv)

    @property
    def interfaces(self) -> np.ndarray:
        v = self.nodes
        return 0.5 * (v[1:] + v[:-1])


@dataclass(frozen=True)
class CoefficientField:
    values: np.ndarray
    grid: VelocityGrid
    t: float = 0.0

    @property
    def M(self) -> int:
        return self.values.shape[0] - 1

    def mass(self) -> float:
        return float(self.values[0].sum() * self.grid.dv)


@dataclass(frozen=True)
class GalerkinOperator:
    """Everything `rhs` needs besides the field: A_hk, D_hk and the rule they came from."""

    alpha: UncertainScalar
    D: UncertainScalar
    A: np.ndarray
    Dm: np.ndarray
    basis: OrthonormalBasis
    rule: QuadratureRule

    @property
    def M(self) -> int:
        return self.basis.max_degree


def galerkin_operator(
    alpha: UncertainScalar, D: UncertainScalar, M: int, quad_nodes: Optional[int] = None
) -> GalerkinOperator:
    basis = OrthonormalBasis(M)
    rule = quadrature_rule(quad_nodes or default_node_count(M))
    require_nodes(rule, 2 * (M + 1), "reference solver")
    return GalerkinOperator(
        alpha=alpha,
        D=D,
        A=alpha_matrix(alpha, basis, rule),
        Dm=diffusion_matrix(D, basis, rule),
        basis=basis,
        rule=rule,
    )


def _check_field(field: CoefficientField, op: GalerkinOperator) -> None:
    if field.M != op.M:
        raise DomainError(f"field carries M={field.M} modes but the operator was built for M={op.M}")


def _nodal(values: np.ndarray, op: GalerkinOperator) -> np.ndarray:
    # f(θ_q, v_j), shape (n, Nv)
    return op.basis.at_rule(op.rule).T @ values


def _mean_velocity_nodes(fq: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    return fq @ grid.nodes * grid.dv


def _alignment_matrix(values: np.ndarray, grid: VelocityGrid, op: GalerkinOperator) -> np.ndarray:
    uq = _mean_velocity_nodes(_nodal(values, op), grid)
    phi = op.basis.at_rule(op.rule)
    return np.einsum("q,hq,kq->hk", op.rule.weights * uq, phi, phi)


def _rhs_values(values: np.ndarray, grid: VelocityGrid, op: GalerkinOperator) -> np.ndarray:
    dv = grid.dv
    vi = grid.interfaces
    U = _alignment_matrix(values, grid, op)

    fbar = 0.5 * (values[:, 1:] + values[:, :-1])
    grad = (values[:, 1:] - values[:, :-1]) / dv

    flux = (op.A @ fbar) * ((vi * vi - 1.0) * vi) + fbar * vi - U @ fbar + op.Dm @ grad

    out = np.zeros_like(values)
    out[:, :-1] += flux
    out[:, 1:] -= flux
    return out / dv


def rhs(field: CoefficientField, op: GalerkinOperator) -> CoefficientField:
    """Time derivative of every mode; conservative, so Σ_j rhs_0 Δv telescopes to zero."""
    _check_field(field, op)
    return CoefficientField(values=_rhs_values(field.values, field.grid, op), grid=field.grid, t=field.t)


def diffusive_bound(grid: VelocityGrid, op: GalerkinOperator, c: float = 0.4) -> float:
    lam = float(np.max(np.linalg.eigvalsh(op.Dm)))
    return math.inf if lam <= 0 else c * grid.dv**2 / lam


def stable_time_step(grid: VelocityGrid, op: GalerkinOperator, c: float = 0.4) -> float:
    v = grid.nodes
    a_max = op.alpha.mean * (1.0 + op.alpha.lam)
    speed = float(np.max(np.abs(a_max * (v * v - 1.0) * v + v)))
    advective = math.inf if speed == 0 else grid.dv / speed
    return min(diffusive_bound(grid, op, c), advective)


def rk4_run(
    field: CoefficientField,
    op: GalerkinOperator,
    dt: float,
    T_final: float,
    cfl: float = 0.4,
    sample_every: int = 0,
    on_sample: Optional[Callable[[CoefficientField], None]] = None,
    progress: bool = False,
) -> CoefficientField:
    """
    Classical RK4 on `rhs`, U_hk refreshed at every stage. `on_sample` is
    called at t=0, every `sample_every` steps and at the final step.
    """
    _check_field(field, op)
    bound = diffusive_bound(field.grid, op, cfl)
    if dt > bound * (1.0 + 1e-12):
        raise DomainError(f"time step dt={dt:.3g} exceeds the diffusive bound {bound:.3g}")

    n_steps = step_count(T_final, dt)
    grid = field.grid
    f = field.values.astype(float, copy=True)

    def sample(k: int):
        if on_sample is None:
            return
        if k == 0 or k == n_steps or (sample_every and k % sample_every == 0):
            on_sample(CoefficientField(values=f.copy(), grid=grid, t=field.t + k * dt))

    sample(0)

    pbar = Progress(
        TextColumn("        "),
        TextColumn("[bold blue]Reference"),
        BarColumn(),
        "[progress.percentage]{task.percentage:>3.0f}%",
        "eta", TimeRemainingColumn(),
        console=logger.cons,
        disable=not progress,
        transient=True,
    )

    with pbar:
        task = pbar.add_task("", total=n_steps)
        for k in range(1, n_steps + 1):
            k1 = _rhs_values(f, grid, op)
            k2 = _rhs_values(f + 0.5 * dt * k1, grid, op)
            k3 = _rhs_values(f + 0.5 * dt * k2, grid, op)
            k4 = _rhs_values(f + dt * k3, grid, op)
            f = f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

            if not np.all(np.isfinite(f)):
                raise NumericalError("reference solver produced a non-finite value", step=k)

            sample(k)
            pbar.update(task, advance=1)

    return CoefficientField(values=f, grid=grid, t=field.t + n_steps * dt)


def initial_field(grid: VelocityGrid, M: int, mu: float, sigma: float) -> CoefficientField:
    if not sigma > 0:
        raise DomainError(f"initial spread must be positive, got {sigma}")
    v = grid.nodes
    values = np.zeros((M + 1, grid.Nv))
    values[0] = np.exp(-0.5 * ((v - mu) / sigma) ** 2)
    values[0] /= values[0].sum() * grid.dv
    return CoefficientField(values=values, grid=grid)


def _moment_nodes(field: CoefficientField, op: GalerkinOperator) -> Tuple[np.ndarray, np.ndarray]:
    fq = _nodal(field.values, op)
    v, dv = field.grid.nodes, field.grid.dv
    mass = fq.sum(axis=1) * dv
    if np.any(mass <= 0):
        raise NumericalError("reference density lost its mass at a quadrature node")
    u = fq @ v * dv / mass
    T = (fq * (v[None, :] - u[:, None]) ** 2).sum(axis=1) * dv / mass
    return u, T


def mean_velocity_modes(field: CoefficientField, op: GalerkinOperator) -> np.ndarray:
    _check_field(field, op)
    u, _ = _moment_nodes(field, op)
    return project_nodal(u, op.basis, op.rule)


def temperature_modes(field: CoefficientField, op: GalerkinOperator) -> np.ndarray:
    _check_field(field, op)
    _, T = _moment_nodes(field, op)
    return project_nodal(T, op.basis, op.rule)


def l2_norm(field: CoefficientField) -> float:
    return float(np.sqrt(np.sum(field.values**2) * field.grid.dv))


def free_energy(field: CoefficientField, op: GalerkinOperator) -> np.ndarray:
    """
    E(θ_q) = ∫ (α v⁴/4 + (1-α) v²/2) f dv - u_f²/2 + D ∫ f log f dv
    at every quadrature node, trapezoid rule in v.
    """
    _check_field(field, op)
    fq = _nodal(field.values, op)
    worst = float(fq.min())
    if worst < -_NEGATIVE_TOL:
        raise NumericalError(f"reference density lost positivity (min {worst:.3e})")

    v = field.grid.nodes
    f = np.clip(fq, _LOG_FLOOR, None)
    a = op.alpha(op.rule.nodes)[:, None]
    d = op.D(op.rule.nodes)

    potential = trapezoid((a * v**4 / 4.0 + (1.0 - a) * v**2 / 2.0) * f, v, axis=1)
    u = trapezoid(v * f, v, axis=1)
    entropy = trapezoid(f * np.log(f), v, axis=1)
    return potential - 0.5 * u**2 + d * entropy


def dump_field(field: CoefficientField, path: str) -> None:
    g = field.grid
    header = f"v_lo={g.v_lo:.10g} v_hi={g.v_hi:.10g} Nv={g.Nv} M={field.M} t={field.t:.10g}"
    np.savetxt(path, field.values, delimiter=",", header=header, fmt="%.12e")


@dataclass(frozen=True)
class StationaryState:
    u: float
    alpha: float
    D: float
    slope_at_zero: float
    residual: float
    iterations: int
    method: str


@dataclass(frozen=True)
class StationaryProfile:
    u: float
    values: np.ndarray
    alpha: float
    D: float
    grid: VelocityGrid


def _exponent(alpha: float, u: float):
    def phi(v):
        return alpha * v**4 / 4.0 + (1.0 - alpha) * v**2 / 2.0 - u * v

    return phi


def _moments(alpha: float, D: float, u: float, domain=STATIONARY_DOMAIN) -> Tuple[float, float, float]:
    """∫ f, ∫ v f, ∫ v² f of the unnormalized exp(-(φ - min φ)/D) over `domain`."""
    phi = _exponent(alpha, u)
    v_scan = np.linspace(domain[0], domain[1], 4001)
    vals = phi(v_scan)
    vmin = float(v_scan[np.argmin(vals)])
    shift = float(vals.min())

    def weight(v):
        return math.exp(-(phi(v) - shift) / D)

    # narrow peaks for small D: split around the minimiser
    width = max(10.0 * math.sqrt(D), 1e-3)
    points = sorted({max(domain[0], vmin - width), vmin, min(domain[1], vmin + width)})

    out = []
    for k in range(3):
        val, _ = quad(lambda v: v**k * weight(v), domain[0], domain[1], points=points, limit=400, epsabs=0.0, epsrel=1e-12)
        out.append(val)
    return out[0], out[1], out[2]


def _check_stationary_args(alpha: float, D: float) -> None:
    if alpha < 0:
        raise DomainError(f"self-propulsion strength must be non-negative, got {alpha}")
    if not D > 0:
        raise DomainError(f"stationary states need D > 0, got {D}")


def self_consistency(alpha: float, D: float, u: float) -> float:
    """G(u) = ∫ v f∞(v; u) dv for the normalized stationary profile at mean u."""
    _check_stationary_args(alpha, D)
    z, m1, _ = _moments(alpha, D, u)
    return m1 / z


def slope_at_zero(alpha: float, D: float) -> float:
    """G'(0) = Var_{f∞(·; 0)} / D; the polarized branch exists iff it exceeds 1."""
    _check_stationary_args(alpha, D)
    z, _, m2 = _moments(alpha, D, 0.0)
    return m2 / z / D


def stationary_state(
    alpha: float,
    D: float,
    tol: float = 1e-10,
    damping: float = 0.5,
    max_iter: int = 5000,
) -> StationaryState:
    _check_stationary_args(alpha, D)
    slope = slope_at_zero(alpha, D)

    if slope <= 1.0:
        return StationaryState(
            u=0.0, alpha=alpha, D=D, slope_at_zero=slope,
            residual=abs(self_consistency(alpha, D, 0.0)), iterations=0, method="symmetric",
        )

    u = 1.0
    for it in range(1, max_iter + 1):
        g = self_consistency(alpha, D, u)
        nxt = (1.0 - damping) * u + damping * g
        if abs(nxt - u) < tol:
            u = nxt
            res = abs(self_consistency(alpha, D, u) - u)
            if u > tol and res <= 10 * tol:
                return StationaryState(u, alpha, D, slope, res, it, "fixed-point")
            break
        u = nxt

    logger.debug(f"Fixed point stalled at alpha={alpha}, D={D}; falling back to bracketing")

    def gap(x):
        return self_consistency(alpha, D, x) - x

    lo, hi = 1e-8, max(2.0, 2.0 * abs(u))
    if gap(lo) <= 0 or gap(hi) >= 0:
        raise NumericalError(f"stationary mean velocity not bracketed in [{lo}, {hi}] for alpha={alpha}, D={D}")

    root, info = brentq(gap, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500, full_output=True)
    if not info.converged:
        raise NumericalError(f"stationary mean velocity did not converge for alpha={alpha}, D={D}")

    return StationaryState(root, alpha, D, slope, abs(gap(root)), info.iterations, "bisection")


def stationary_mean_velocity(alpha: float, D: float, tol: float = 1e-10) -> float:
    return stationary_state(alpha, D, tol).u


def expected_stationary_velocity(alpha: UncertainScalar, D: UncertainScalar, rule: QuadratureRule) -> float:
    """Σ_q w_q u(α(θ_q), D(θ_q)); nodes with D = 0 take the polarized value 1."""
    total = 0.0
    for w, a, d in zip(rule.weights, alpha(rule.nodes), D(rule.nodes)):
        total += w * (1.0 if d <= 0 and a > 0 else stationary_mean_velocity(float(a), float(d)))
    return float(total)


def stationary_profile(alpha: float, D: float, grid: VelocityGrid, tol: float = 1e-10) -> StationaryProfile:
    """f∞ on the grid nodes, normalized to unit discrete mass Σ_j f_j Δv."""
    u = stationary_mean_velocity(alpha, D, tol)
    phi = _exponent(alpha, u)(grid.nodes)
    values = np.exp(-(phi - phi.min()) / D)
    values /= values.sum() * grid.dv
    return StationaryProfile(u=u, values=values, alpha=alpha, D=D, grid=grid)


def critical_diffusion(alpha: float, bracket: Tuple[float, float] = (1e-3, 5.0), tol: float = 1e-10) -> float:
    """The D at which G'(0) = 1, i.e. where the polarized branch disappears."""
    lo, hi = bracket
    if not 0 < lo < hi:
        raise DomainError(f"diffusion bracket must satisfy 0 < lo < hi, got {bracket}")

    def f(D):
        return slope_at_zero(alpha, D) - 1.0

    if f(lo) <= 0 or f(hi) >= 0:
        raise DomainError(f"G'(0) - 1 does not change sign on [{lo}, {hi}] for alpha={alpha}")
    return float(brentq(f, lo, hi, xtol=tol))

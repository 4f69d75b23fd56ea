"""
Uncertain model parameters and their Galerkin projections.

Every uncertain scalar has the linear form c(θ) = c̄ (1 + λ θ) with θ uniform
on [-1, 1]; every Galerkin entry is a quadrature sum against the rule weights,
which already carry the density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.basis import (
    OrthonormalBasis,
    QuadratureRule,
    default_node_count,
    evaluate_nodal,
    quadrature_rule,
    require_nodes,
)
from core.errors import DomainError

KERNELS = ("homogeneous", "local", "cucker-smale")


@dataclass(frozen=True)
class UncertainScalar:
    mean: float
    lam: float = 0.0

    def __post_init__(self):
        if self.mean < 0:
            raise DomainError(f"mean value must be non-negative, got {self.mean}")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"relative perturbation must lie in [0, 1], got {self.lam}")

    def __call__(self, theta):
        return self.mean * (1.0 + self.lam * np.asarray(theta, dtype=float))

    @property
    def deterministic(self) -> bool:
        return self.lam == 0.0 or self.mean == 0.0


@dataclass(frozen=True)
class KernelSpec:
    variant: str = "homogeneous"
    cell_width: float = 0.2
    origin: float = -2.0
    H: UncertainScalar = field(default_factory=lambda: UncertainScalar(1.0))
    gamma: float = 0.1
    period: Optional[float] = None

    def __post_init__(self):
        if self.variant not in KERNELS:
            raise DomainError(f'unknown kernel "{self.variant}" (expected one of {", ".join(KERNELS)})')
        if self.variant == "local" and self.cell_width <= 0:
            raise DomainError(f"cell width must be positive, got {self.cell_width}")
        if self.gamma < 0:
            raise DomainError(f"Cucker-Smale exponent must be non-negative, got {self.gamma}")

    def cells(self, x: np.ndarray) -> np.ndarray:
        offset = np.asarray(x, dtype=float) - self.origin
        if self.period:
            offset = np.mod(offset, self.period)
        return np.floor(offset / self.cell_width).astype(np.int64)

    def distance(self, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
        dx = np.asarray(xj) - np.asarray(xi)
        if self.period:
            dx = dx - self.period * np.round(dx / self.period)
        return np.abs(dx)

    def values(self, theta: np.ndarray, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
        """P(θ, x_i, x_j), broadcast over θ and the position arrays."""
        theta = np.asarray(theta, dtype=float)
        shape = np.broadcast(theta, np.asarray(xi), np.asarray(xj)).shape

        if self.variant == "homogeneous":
            return np.ones(shape)

        if self.variant == "local":
            same = self.cells(xi) == self.cells(xj)
            return np.broadcast_to(same / self.cell_width, shape).astype(float)

        r = self.distance(xi, xj)
        return np.broadcast_to(self.H(theta) / (1.0 + r * r) ** self.gamma, shape)


@dataclass(frozen=True)
class GalerkinMatrices:
    D: np.ndarray
    d: np.ndarray
    basis: OrthonormalBasis
    rule: QuadratureRule


def _weighted_gram(values: np.ndarray, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    # Σ_q w_q g_q Φ_h(θ_q) Φ_k(θ_q) with g on the last axis
    phi = basis.at_rule(rule)
    return np.einsum("...q,hq,kq->...hk", values * rule.weights, phi, phi)


def diffusion_matrix(D: UncertainScalar, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    require_nodes(rule, basis.max_degree + 1, "diffusion matrix")
    out = _weighted_gram(D(rule.nodes), basis, rule)
    return 0.5 * (out + out.T)


def alpha_matrix(alpha: UncertainScalar, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    require_nodes(rule, basis.max_degree + 1, "self-propulsion matrix")
    out = _weighted_gram(alpha(rule.nodes), basis, rule)
    return 0.5 * (out + out.T)


def noise_projection(D: UncertainScalar, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    """d_h = Σ_q w_q sqrt(2 D(θ_q)) Φ_h(θ_q)."""
    Dq = D(rule.nodes)
    if np.any(Dq < 0):
        q = int(np.argmax(Dq < 0))
        raise DomainError(f"negative diffusion D={Dq[q]:.3g} at quadrature node θ={rule.nodes[q]:.6f}")
    return basis.at_rule(rule) @ (rule.weights * np.sqrt(2.0 * Dq))


def selfprop_coeffs(
    alpha: UncertainScalar,
    v_modes: np.ndarray,
    basis: OrthonormalBasis,
    rule: QuadratureRule,
) -> np.ndarray:
    """s_hk(v) = Σ_q w_q α(θ_q)(1 - v(θ_q)^2) Φ_h Φ_k; batched over leading axes of v_modes."""
    require_nodes(rule, 2 * (basis.max_degree + 1), "self-propulsion coefficients")
    vq = evaluate_nodal(v_modes, basis, rule)
    return _weighted_gram(alpha(rule.nodes) * (1.0 - vq * vq), basis, rule)


def kernel_coeffs(
    spec: KernelSpec,
    xi_modes: np.ndarray,
    xj_modes: np.ndarray,
    basis: OrthonormalBasis,
    rule: QuadratureRule,
) -> np.ndarray:
    """p_hk^{ij} = Σ_q w_q P(θ_q, x_i(θ_q), x_j(θ_q)) Φ_h Φ_k."""
    require_nodes(rule, 2 * (basis.max_degree + 1), "kernel coefficients")
    xi = evaluate_nodal(xi_modes, basis, rule)
    xj = evaluate_nodal(xj_modes, basis, rule)
    return _weighted_gram(spec.values(rule.nodes, xi, xj), basis, rule)


@dataclass(frozen=True)
class ModelParams:
    alpha: UncertainScalar
    D: UncertainScalar
    kernel: KernelSpec
    basis: OrthonormalBasis
    rule: QuadratureRule
    matrices: GalerkinMatrices

    @property
    def M(self) -> int:
        return self.basis.max_degree

    @property
    def alpha_nodes(self) -> np.ndarray:
        return self.alpha(self.rule.nodes)


def galerkin_matrices(D: UncertainScalar, basis: OrthonormalBasis, rule: QuadratureRule) -> GalerkinMatrices:
    return GalerkinMatrices(
        D=diffusion_matrix(D, basis, rule),
        d=noise_projection(D, basis, rule),
        basis=basis,
        rule=rule,
    )


def prepare_model(
    alpha: UncertainScalar,
    D: UncertainScalar,
    M: int,
    kernel: Optional[KernelSpec] = None,
    quad_nodes: Optional[int] = None,
) -> ModelParams:
    basis = OrthonormalBasis(M)
    rule = quadrature_rule(quad_nodes or default_node_count(M))
    require_nodes(rule, 2 * (M + 1), "particle dynamics")
    return ModelParams(
        alpha=alpha,
        D=D,
        kernel=kernel or KernelSpec(),
        basis=basis,
        rule=rule,
        matrices=galerkin_matrices(D, basis, rule),
    )

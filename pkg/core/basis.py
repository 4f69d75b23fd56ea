"""
Orthonormal Legendre chaos on a uniform random input θ ~ U([-1, 1]).

Φ_h(θ) = sqrt(2h+1) L_h(θ) with L_h the classical Legendre polynomial, so
E[Φ_h Φ_k] = δ_hk under the density Ψ(θ) = 1/2 and Φ_0 ≡ 1. Quadrature
weights absorb the density (they sum to 1), so every Σ_q w_q g(θ_q) is an
expectation.

A chaos vector is a plain ndarray whose LAST axis holds the modes h = 0..M;
leading axes are free (particles, grid points, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import roots_legendre

from core.errors import DomainError

ArrayLike = Union[float, np.ndarray]

# tolerance on |θ| <= 1, nodes coming back from roots_legendre sit inside
_THETA_TOL = 1e-12


def default_node_count(M: int) -> int:
    return 2 * (M + 1)


def _check_theta(theta: ArrayLike) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    if np.any(np.abs(t) > 1.0 + _THETA_TOL) or not np.all(np.isfinite(t)):
        raise DomainError("θ must lie in [-1, 1] (no extrapolation outside the support)")
    return t


def legendre_table(M: int, theta: ArrayLike) -> np.ndarray:
    """
    Φ_0..Φ_M at every point of `theta`; shape (M+1,) + theta.shape.
    Three-term recurrence (k+1) L_{k+1} = (2k+1) θ L_k - k L_{k-1}.
    """
    if M < 0:
        raise DomainError(f"max degree must be non-negative, got {M}")

    t = _check_theta(theta)
    out = np.empty((M + 1,) + t.shape)
    out[0] = 1.0
    if M > 0:
        out[1] = t
        for k in range(1, M):
            out[k + 1] = ((2 * k + 1) * t * out[k] - k * out[k - 1]) / (k + 1)

    norms = np.sqrt(2.0 * np.arange(M + 1) + 1.0)
    return out * norms.reshape((-1,) + (1,) * t.ndim)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    def integrate(self, g: Callable[[np.ndarray], ArrayLike]) -> float:
        vals = np.broadcast_to(np.asarray(g(self.nodes), dtype=float), self.nodes.shape)
        return float(np.dot(self.weights, vals))


def quadrature_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule on [-1, 1] with the density 1/2 folded into the weights."""
    if n < 1:
        raise DomainError(f"quadrature needs at least one node, got n={n}")

    nodes, weights = roots_legendre(n)
    order = np.argsort(nodes)
    nodes = np.asarray(nodes[order], dtype=float)
    weights = np.asarray(weights[order], dtype=float) / 2.0

    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights)


@dataclass(frozen=True)
class OrthonormalBasis:
    max_degree: int
    support: tuple = (-1.0, 1.0)
    density: float = 0.5
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.max_degree < 0:
            raise DomainError(f"max degree must be non-negative, got {self.max_degree}")

    @property
    def size(self) -> int:
        return self.max_degree + 1

    def eval(self, h: int, theta: ArrayLike) -> ArrayLike:
        if h < 0 or h > self.max_degree:
            raise DomainError(f"degree {h} out of range 0..{self.max_degree}")
        vals = legendre_table(h, theta)[h]
        return float(vals) if np.ndim(vals) == 0 else vals

    def matrix(self, theta: ArrayLike) -> np.ndarray:
        return legendre_table(self.max_degree, theta)

    def at_rule(self, rule: QuadratureRule) -> np.ndarray:
        """Φ_h(θ_q) as an (M+1)×n table, cached per rule."""
        key = rule.nodes.tobytes()
        table = self._cache.get(key)
        if table is None:
            table = self.matrix(rule.nodes)
            table.setflags(write=False)
            self._cache[key] = table
        return table


def basis_eval(h: int, theta: ArrayLike, max_degree: int | None = None) -> ArrayLike:
    M = h if max_degree is None else max_degree
    return OrthonormalBasis(M).eval(h, theta)


def require_nodes(rule: QuadratureRule, needed: int, what: str) -> None:
    if rule.n < needed:
        raise DomainError(f"{what} needs a rule with at least {needed} nodes, got {rule.n}")


def project(g: Callable[[np.ndarray], ArrayLike], M: int, rule: QuadratureRule) -> np.ndarray:
    """ĝ_h = Σ_q w_q g(θ_q) Φ_h(θ_q)."""
    require_nodes(rule, M + 1, "projection")
    vals = np.broadcast_to(np.asarray(g(rule.nodes), dtype=float), rule.nodes.shape)
    phi = OrthonormalBasis(M).at_rule(rule)
    return phi @ (rule.weights * vals)


def project_nodal(values: np.ndarray, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    """Project values sampled at the rule nodes (last axis = nodes) onto the modes."""
    phi = basis.at_rule(rule)
    return (values * rule.weights) @ phi.T


def evaluate(v: np.ndarray, theta: ArrayLike) -> ArrayLike:
    """Σ_h v_h Φ_h(θ); leading axes of `v` and the shape of θ are kept."""
    v = np.asarray(v, dtype=float)
    M = v.shape[-1] - 1
    phi = legendre_table(M, theta)
    out = np.tensordot(v, phi, axes=([-1], [0]))
    return float(out) if np.ndim(out) == 0 else out


def evaluate_nodal(v: np.ndarray, basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    """Chaos vectors evaluated at every rule node; shape v.shape[:-1] + (n,)."""
    return np.asarray(v, dtype=float) @ basis.at_rule(rule)


def expectation(v: np.ndarray) -> ArrayLike:
    out = np.asarray(v, dtype=float)[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def variance(v: np.ndarray) -> ArrayLike:
    out = np.sum(np.asarray(v, dtype=float)[..., 1:] ** 2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out

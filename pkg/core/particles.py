"""
Monte Carlo gPC particle ensemble and its Euler-Maruyama integrator.

Each particle carries M+1 chaos modes for its position and its velocity.
One step (explicit Euler-Maruyama):

    x̂_ih <- x̂_ih + v̂_ih Δt
    v̂_ih <- v̂_ih + Δt Σ_k s_hk(v_i) v̂_ik
                 + (Δt/S) Σ_{j∈J_i} Σ_k p_hk^{ij} (v̂_jk - v̂_ik)
                 + d_h sqrt(Δt) η_i

with one standard normal η_i per particle shared by every mode. The
Galerkin products are formed at the quadrature nodes: the drift is sampled
at every θ_q and projected back, which is the same sum as contracting the
s_hk / p_hk^{ij} matrices with the modes.

Random numbers come from counter-keyed streams (utils.seeding): the Brownian
increments of step n use key ("brownian", n) and the interaction partners
use ("subsample", n). Results never depend on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn

from core.basis import evaluate, evaluate_nodal, project_nodal, require_nodes
from core.errors import DomainError, NumericalError
from core.params import ModelParams
from utils import logger
from utils.seeding import Streams

# pairwise work arrays are processed in row blocks of about this many entries
_PAIR_BLOCK = 4_000_000


@dataclass
class ParticleEnsemble:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    seed: int = 0
    step_index: int = 0

    @property
    def N(self) -> int:
        return self.v.shape[0]

    @property
    def M(self) -> int:
        return self.v.shape[1] - 1

    def copy(self) -> "ParticleEnsemble":
        return replace(self, x=self.x.copy(), v=self.v.copy())


@dataclass(frozen=True)
class StepConfig:
    dt: float
    S: int
    domain: Optional[Tuple[float, float]] = None
    homogeneous: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"time step must be positive, got {self.dt}")
        if self.S < 1:
            raise DomainError(f"interaction subsample size must be at least 1, got {self.S}")
        if self.domain is not None and not self.domain[1] > self.domain[0]:
            raise DomainError(f"periodic domain must have x_hi > x_lo, got {self.domain}")

    @property
    def period(self) -> Optional[float]:
        if self.domain is None:
            return None
        return self.domain[1] - self.domain[0]

    def warn_if_large(self) -> bool:
        if self.dt > 0.1:
            logger.warning(f"Time step dt={self.dt} is large for an explicit Euler-Maruyama scheme (dt > 0.1)")
            return True
        return False


@dataclass
class Observer:
    name: str
    fn: Callable[[ParticleEnsemble], object]
    every: int = 1

    def __post_init__(self):
        if self.every < 1:
            raise DomainError(f'observer "{self.name}" needs a positive interval, got {self.every}')


def init_gaussian(
    N: int,
    M: int,
    mu_x: float,
    sigma_x: float,
    mu_v: float,
    sigma_v: float,
    seed: int,
) -> ParticleEnsemble:
    """Deterministic initial data: mode 0 sampled, modes >= 1 exactly zero."""
    if N < 1:
        raise DomainError("an ensemble needs at least one particle")
    if sigma_x < 0 or not sigma_v > 0:
        raise DomainError(f"need sigma_x >= 0 and sigma_v > 0, got {sigma_x}, {sigma_v}")

    streams = Streams(seed)
    x = np.zeros((N, M + 1))
    v = np.zeros((N, M + 1))

    # separate streams keep particle i's draws identical for every N
    v[:, 0] = mu_v + sigma_v * streams.generator("init", 0).standard_normal(N)
    if sigma_x > 0:
        x[:, 0] = mu_x + sigma_x * streams.generator("init", 1).standard_normal(N)
    else:
        x[:, 0] = mu_x

    return ParticleEnsemble(x=x, v=v, t=0.0, seed=seed)


def subsample_indices(i: int, S: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """S distinct partners of particle i, uniform without repetition (i itself allowed)."""
    if S > N or S < 1:
        raise DomainError(f"cannot draw S={S} distinct partners among N={N} particles")
    if not 0 <= i < N:
        raise DomainError(f"particle index {i} out of range 0..{N - 1}")
    if S == N:
        return np.arange(N)
    return np.sort(rng.choice(N, size=S, replace=False))


def _distinct_rows(rows: int, S: int, N: int, rng: np.random.Generator) -> np.ndarray:
    # draw with repetition, then redraw repeated entries until every row is a set;
    # the procedure commutes with relabelling so each row is a uniform S-subset
    J = np.sort(rng.integers(0, N, size=(rows, S)), axis=1)
    while True:
        dup = np.zeros(J.shape, dtype=bool)
        dup[:, 1:] = J[:, 1:] == J[:, :-1]
        count = int(dup.sum())
        if count == 0:
            return J
        J[dup] = rng.integers(0, N, size=count)
        J.sort(axis=1)


def subsample_table(N: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """Partner sets for every particle at once, shape (N, S), rows sorted."""
    if S > N or S < 1:
        raise DomainError(f"cannot draw S={S} distinct partners among N={N} particles")
    if S == N:
        return np.broadcast_to(np.arange(N), (N, N))
    if 2 * S <= N:
        return _distinct_rows(N, S, N, rng)

    # dense case: draw the excluded complement instead
    out = np.empty((N, S), dtype=np.int64)
    block = max(1, _PAIR_BLOCK // N)
    for lo in range(0, N, block):
        hi = min(N, lo + block)
        excluded = _distinct_rows(hi - lo, N - S, N, rng)
        keep = np.ones((hi - lo, N), dtype=bool)
        np.put_along_axis(keep, excluded, False, axis=1)
        out[lo:hi] = np.nonzero(keep)[1].reshape(hi - lo, S)
    return out


def _interaction_full(params: ModelParams, xq: np.ndarray, vq: np.ndarray) -> np.ndarray:
    """(1/N) Σ_j P(θ_q, x_i, x_j)(v_j - v_i) at every node, all partners."""
    kernel = params.kernel
    N, Q = vq.shape

    if kernel.variant == "homogeneous":
        return vq.mean(axis=0, keepdims=True) - vq

    if kernel.variant == "local":
        out = np.empty_like(vq)
        cells = kernel.cells(xq)
        cells = cells - cells.min()
        for q in range(Q):
            c = cells[:, q]
            sums = np.bincount(c, weights=vq[:, q])
            counts = np.bincount(c).astype(float)
            out[:, q] = (sums[c] - counts[c] * vq[:, q]) / (N * kernel.cell_width)
        return out

    out = np.empty_like(vq)
    theta = params.rule.nodes
    block = max(1, _PAIR_BLOCK // (N * Q))
    for lo in range(0, N, block):
        hi = min(N, lo + block)
        P = kernel.values(theta, xq[lo:hi, None, :], xq[None, :, :])
        rel = vq[None, :, :] - vq[lo:hi, None, :]
        out[lo:hi] = (P * rel).sum(axis=1) / N
    return out


def _interaction_sampled(
    params: ModelParams, xq: np.ndarray, vq: np.ndarray, S: int, rng: np.random.Generator
) -> np.ndarray:
    """(1/S) Σ_{j∈J_i} P(θ_q, x_i, x_j)(v_j - v_i) with J_i drawn per particle."""
    N, Q = vq.shape
    J = subsample_table(N, S, rng)
    theta = params.rule.nodes

    out = np.empty_like(vq)
    block = max(1, _PAIR_BLOCK // (S * Q))
    for lo in range(0, N, block):
        hi = min(N, lo + block)
        Jb = J[lo:hi]
        rel = vq[Jb] - vq[lo:hi, None, :]
        if params.kernel.variant == "homogeneous":
            out[lo:hi] = rel.mean(axis=1)
        else:
            P = params.kernel.values(theta, xq[lo:hi, None, :], xq[Jb])
            out[lo:hi] = (P * rel).sum(axis=1) / S
    return out


def _first_bad(a: np.ndarray) -> Tuple[int, int]:
    bad = np.argwhere(~np.isfinite(a))
    return int(bad[0, 0]), int(bad[0, 1])


def step(ens: ParticleEnsemble, cfg: StepConfig, params: ModelParams) -> ParticleEnsemble:
    if ens.M != params.M:
        raise DomainError(f"ensemble carries M={ens.M} modes but the model was prepared for M={params.M}")
    if cfg.S > ens.N:
        raise DomainError(f"subsample size S={cfg.S} exceeds the particle count N={ens.N}")

    streams = Streams(ens.seed)
    basis, rule = params.basis, params.rule

    xq = evaluate_nodal(ens.x, basis, rule)
    vq = evaluate_nodal(ens.v, basis, rule)

    drift = params.alpha_nodes * (1.0 - vq * vq) * vq
    if cfg.S >= ens.N:
        drift += _interaction_full(params, xq, vq)
    else:
        drift += _interaction_sampled(params, xq, vq, cfg.S, streams.generator("subsample", ens.step_index))

    eta = streams.generator("brownian", ens.step_index).standard_normal(ens.N)
    sq = math.sqrt(cfg.dt)

    v_new = ens.v + cfg.dt * project_nodal(drift, basis, rule) + sq * np.outer(eta, params.matrices.d)

    if cfg.homogeneous:
        x_new = ens.x.copy()
    else:
        x_new = ens.x + cfg.dt * ens.v
        if cfg.domain is not None:
            lo, period = cfg.domain[0], cfg.period
            x_new[:, 0] -= period * np.floor((x_new[:, 0] - lo) / period)

    for arr, name in ((v_new, "velocity"), (x_new, "position")):
        if not np.all(np.isfinite(arr)):
            i, h = _first_bad(arr)
            raise NumericalError(f"non-finite {name} mode after step", step=ens.step_index + 1, particle=i, mode=h)

    return ParticleEnsemble(
        x=x_new,
        v=v_new,
        t=ens.t + cfg.dt,
        seed=ens.seed,
        step_index=ens.step_index + 1,
    )


def step_count(T_final: float, dt: float) -> int:
    n = int(round(T_final / dt))
    if n < 0 or abs(n * dt - T_final) > 1e-9 * max(1.0, abs(T_final)):
        raise DomainError(f"final time T={T_final} is not a whole number of steps dt={dt}")
    return n


def run(
    ens: ParticleEnsemble,
    cfg: StepConfig,
    params: ModelParams,
    T_final: float,
    observers: Sequence[Observer] = (),
    progress: bool = False,
) -> Tuple[ParticleEnsemble, Dict[str, List[Tuple[float, object]]]]:
    """
    Apply `step` until T_final. Each observer fires at t=0, every `every`
    steps, and at the final step; its outputs are returned as (t, value) lists.
    """
    n_steps = step_count(T_final, cfg.dt)
    cfg.warn_if_large()

    trajectory: Dict[str, List[Tuple[float, object]]] = {o.name: [] for o in observers}

    def observe(e: ParticleEnsemble, k: int):
        for o in observers:
            if k % o.every == 0 or k == n_steps:
                trajectory[o.name].append((e.t, o.fn(e)))

    observe(ens, 0)

    pbar = Progress(
        TextColumn("        "),
        TextColumn("[bold blue]Integrating"),
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
            ens = step(ens, cfg, params)
            observe(ens, k)
            pbar.update(task, advance=1)

    return ens, trajectory


def moments(ens: ParticleEnsemble, theta: float) -> Tuple[float, float]:
    """Mean velocity u(θ) and temperature T(θ) of the ensemble at one θ."""
    vt = evaluate(ens.v, np.asarray([theta]))[:, 0]
    u = float(vt.mean())
    return u, float(np.mean((vt - u) ** 2))


def moment_modes(ens: ParticleEnsemble, params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """û (exact mode average) and T̂ (projection of the nodal temperature)."""
    require_nodes(params.rule, 2 * (ens.M + 1), "temperature projection")
    u_hat = ens.v.mean(axis=0)

    vq = evaluate_nodal(ens.v, params.basis, params.rule)
    Tq = np.mean((vq - vq.mean(axis=0)) ** 2, axis=0)
    return u_hat, project_nodal(Tq, params.basis, params.rule)


def dump_ensemble(ens: ParticleEnsemble, path: str) -> None:
    cols = [f"x_{h}" for h in range(ens.M + 1)] + [f"v_{h}" for h in range(ens.M + 1)]
    header = f"N={ens.N} M={ens.M} t={ens.t:.10g} seed={ens.seed} step={ens.step_index}\n" + ",".join(cols)
    np.savetxt(path, np.hstack([ens.x, ens.v]), delimiter=",", header=header, fmt="%.17g")


def load_ensemble(path: str) -> ParticleEnsemble:
    with open(path, "r", encoding="utf8") as fp:
        first = fp.readline().lstrip("#").split()

    meta = dict(item.split("=", 1) for item in first)
    N, M = int(meta["N"]), int(meta["M"])

    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (N, 2 * (M + 1)):
        raise DomainError(f"ensemble dump {path} has shape {data.shape}, header says N={N}, M={M}")

    return ParticleEnsemble(
        x=data[:, : M + 1].copy(),
        v=data[:, M + 1 :].copy(),
        t=float(meta["t"]),
        seed=int(meta["seed"]),
        step_index=int(meta.get("step", 0)),
    )

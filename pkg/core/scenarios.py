"""
Experiment pipelines. Each public function takes a validated ScenarioConfig
and a RunOutput, runs one scenario end to end and fills the output
directory; control.run() picks the function from the scenario name.

Independent jobs (sweep points, replicas) go through `run_jobs`, which keys
every job by its index so results never depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich import box
from rich.columns import Columns
from rich.table import Table

from core.basis import variance as chaos_variance
from core.config import ScenarioConfig
from core.errors import DomainError, NumericalError
from core.output import RunOutput
from core.params import KernelSpec, ModelParams, UncertainScalar, prepare_model
from core.particles import (
    Observer,
    ParticleEnsemble,
    StepConfig,
    dump_ensemble,
    init_gaussian,
    moment_modes,
    run,
)
from core.reconstruct import (
    PhaseGrid,
    dump_density,
    expected_density,
    l1_distance,
    marginal_mean,
    variance_density,
    velocity_marginal,
)
from core.reference import (
    CoefficientField,
    GalerkinOperator,
    VelocityGrid,
    critical_diffusion,
    dump_field,
    expected_stationary_velocity,
    free_energy,
    galerkin_operator,
    initial_field,
    l2_norm,
    mean_velocity_modes,
    rk4_run,
    stable_time_step,
    stationary_state,
    temperature_modes,
)
from utils import env, logger
from utils.seeding import Streams

# tolerance on the free energy growth between two samples
ENERGY_TOL = 1e-8

# velocity marginal means read as ordered / disordered in the inhomogeneous runs
ORDERED_MIN = 0.3
DISORDERED_MAX = 0.15


@dataclass(frozen=True)
class SweepPoint:
    D: float
    E_u: float
    Std_u: float


def worker_count(cfg: ScenarioConfig) -> int:
    return cfg.threads or env.THREADS


def run_jobs(fn: Callable, jobs: Sequence, threads: int) -> List:
    """fn(job) for every job, in job order; a process pool when threads > 1."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]

    results: Dict[int, object] = {}
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
        futures = {ex.submit(fn, job): i for i, job in enumerate(jobs)}
        for fut, i in futures.items():
            results[i] = fut.result()
    return [results[i] for i in range(len(jobs))]


def fit_rate(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        raise DomainError("a rate fit needs at least two positive (x, y) points")
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def kernel_for(cfg: ScenarioConfig) -> KernelSpec:
    variant = {
        "inhom-local": "local",
        "inhom-cs": "cucker-smale",
    }.get(cfg.scenario, cfg.model.kernel)

    grid = cfg.grid
    return KernelSpec(
        variant=variant,
        cell_width=cfg.model.cell_width,
        origin=grid.x_lo,
        H=UncertainScalar(cfg.model.H, cfg.model.lambda_H),
        gamma=cfg.model.gamma,
        period=(grid.x_hi - grid.x_lo) if grid.periodic else None,
    )


def build_model(cfg: ScenarioConfig, M: Optional[int] = None, D: Optional[float] = None) -> ModelParams:
    m = cfg.model
    M = cfg.discretization.M if M is None else M
    quad = cfg.discretization.quad_nodes if M == cfg.discretization.M else None
    return prepare_model(
        alpha=UncertainScalar(m.alpha, m.lambda_alpha),
        D=UncertainScalar(m.D if D is None else D, m.lambda_D),
        M=M,
        kernel=kernel_for(cfg),
        quad_nodes=quad,
    )


def step_config(cfg: ScenarioConfig, N: int, S: Optional[int] = None) -> StepConfig:
    inhom = cfg.scenario.startswith("inhom-")
    grid = cfg.grid
    return StepConfig(
        dt=cfg.discretization.dt,
        S=min(N, S if S is not None else cfg.discretization.subsample),
        domain=(grid.x_lo, grid.x_hi) if inhom and grid.periodic else None,
        homogeneous=not inhom,
    )


def initial_ensemble(cfg: ScenarioConfig, N: int, M: int, seed: int) -> ParticleEnsemble:
    init = cfg.initial
    inhom = cfg.scenario.startswith("inhom-")
    return init_gaussian(
        N=N,
        M=M,
        mu_x=init.mu_x if inhom else 0.0,
        sigma_x=init.sigma_x if inhom else 0.0,
        mu_v=init.mu_v,
        sigma_v=init.sigma_v,
        seed=seed,
    )


def simulate(
    cfg: ScenarioConfig,
    seed: int,
    N: Optional[int] = None,
    M: Optional[int] = None,
    S: Optional[int] = None,
    D: Optional[float] = None,
    T: Optional[float] = None,
    observers: Sequence[Observer] = (),
    progress: bool = False,
):
    N = cfg.discretization.N if N is None else N
    params = build_model(cfg, M=M, D=D)
    ens = initial_ensemble(cfg, N, params.M, seed)
    T = cfg.discretization.T if T is None else T
    final, traj = run(ens, step_config(cfg, N, S), params, T, observers=observers, progress=progress)
    return final, params, traj


def mean_velocity_band(ens: ParticleEnsemble) -> Tuple[float, float]:
    """E[u_f] and the chaos standard deviation sqrt(Σ_{h>=1} û_h²)."""
    u_hat = ens.v.mean(axis=0)
    return float(u_hat[0]), float(math.sqrt(chaos_variance(u_hat)))


def _zero_pad(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[: len(a)] = a
    return out


def temperature_error(T_hat: np.ndarray, T_ref: np.ndarray) -> float:
    n = max(len(T_hat), len(T_ref))
    return float(np.linalg.norm(_zero_pad(T_hat, n) - _zero_pad(T_ref, n)))


# -- reference solver -------------------------------------------------------

def reference_operator(cfg: ScenarioConfig, M: Optional[int] = None) -> GalerkinOperator:
    m = cfg.model
    return galerkin_operator(
        alpha=UncertainScalar(m.alpha, m.lambda_alpha),
        D=UncertainScalar(m.D, m.lambda_D),
        M=cfg.discretization.M if M is None else M,
    )


def reference_time_step(cfg: ScenarioConfig, grid: VelocityGrid, op: GalerkinOperator) -> float:
    T = cfg.discretization.T
    dt = cfg.reference.dt or stable_time_step(grid, op, cfg.reference.cfl)
    if T == 0:
        return dt
    # whole number of steps up to T
    return T / math.ceil(T / dt)


def solve_reference(cfg: ScenarioConfig, op: GalerkinOperator, progress: bool = False):
    """
    Reference field at T, the free-energy samples [(t, E(θ_q))], and the
    reason sampling stopped early (None when every sample was taken).
    """
    ref = cfg.reference
    grid = VelocityGrid(ref.v_lo, ref.v_hi, ref.Nv)
    field = initial_field(grid, op.M, cfg.initial.mu_v, cfg.initial.sigma_v)
    dt = reference_time_step(cfg, grid, op)

    energies: List[Tuple[float, np.ndarray]] = []
    lost: List[str] = []

    def sample(f: CoefficientField):
        if lost:
            return
        try:
            energies.append((f.t, free_energy(f, op)))
        except NumericalError as e:
            # the central scheme does not preserve positivity; the solve goes on without energies
            lost.append(f"t={f.t:.4g}: {e}")
            logger.warning(f"Free energy sampling stopped at t={f.t:.4g}: {e}")

    logger.info(f"Solving the reference system on {ref.Nv} velocity nodes, dt={dt:.3e}...")
    final = rk4_run(
        field, op, dt, cfg.discretization.T,
        cfl=ref.cfl, sample_every=ref.energy_every, on_sample=sample, progress=progress,
    )
    return final, energies, (lost[0] if lost else None)


def energy_increase(energies: Sequence[Tuple[float, np.ndarray]]) -> Optional[float]:
    """
    Largest growth of E(θ_q) between consecutive samples (<= 0 when
    dissipative); None when fewer than two samples were taken.
    """
    if len(energies) < 2:
        return None
    E = np.stack([e for _, e in energies])
    return float(np.max(np.diff(E, axis=0)))


# -- scenarios --------------------------------------------------------------

def run_homogeneous(cfg: ScenarioConfig, out: RunOutput, progress: bool = False):
    d = cfg.discretization
    logger.info(f"Running MCgPC: N={d.N}, S={d.subsample}, M={d.M}, dt={d.dt}, T={d.T}...")

    observers = [Observer("mean_velocity", mean_velocity_band, every=d.observe_every)]
    ens, params, traj = simulate(cfg, cfg.seed, observers=observers, progress=progress)

    out.table(
        "mean_velocity.csv",
        [{"t": t, "E_u": e, "Std_u": s} for t, (e, s) in traj["mean_velocity"]],
        columns=["t", "E_u", "Std_u"],
    )

    op = reference_operator(cfg)
    ref_field, energies, energy_error = solve_reference(cfg, op, progress=progress)

    ref = cfg.reference
    grid = PhaseGrid.around_nodes(ref.v_lo, ref.v_hi, ref.Nv)
    mean_f = expected_density(ens, grid, params.rule)
    var_f = variance_density(ens, grid, params.rule)
    l1 = l1_distance(mean_f, ref_field.values[0], grid)

    tag = f"{d.T:g}"
    out.dump(f"density_{tag}.csv", lambda p: dump_density(mean_f, p, d.T))
    out.dump(f"variance_{tag}.csv", lambda p: dump_density(var_f, p, d.T))
    out.dump(f"reference_{tag}.csv", lambda p: dump_field(ref_field, p))
    out.table(
        "profile.csv",
        [
            {"v": v, "E_f": a, "Var_f": b, "f_ref": c}
            for v, a, b, c in zip(ref_field.grid.nodes, mean_f.values, var_f.values, ref_field.values[0])
        ],
        columns=["v", "E_f", "Var_f", "f_ref"],
    )

    _, T_hat = moment_modes(ens, params)
    T_ref = temperature_modes(ref_field, op)
    out.table(
        "temperature.csv",
        [{"mode": h, "T_mcgpc": a, "T_ref": b} for h, (a, b) in enumerate(zip(T_hat, T_ref))],
        columns=["mode", "T_mcgpc", "T_ref"],
    )

    out.table(
        "energy.csv",
        [dict({"t": t}, **{f"E_q{q}": e for q, e in enumerate(E)}) for t, E in energies],
    )

    E_u, Std_u = mean_velocity_band(ens)
    u_ref = mean_velocity_modes(ref_field, op)
    diag = {
        "l1_distance": l1,
        "out_of_grid": mean_f.out_of_grid,
        "E_u": E_u,
        "Std_u": Std_u,
        "E_u_reference": float(u_ref[0]),
        "temperature_error": temperature_error(T_hat, T_ref),
        "reference_mass": ref_field.mass(),
        "reference_l2_norm": l2_norm(ref_field),
        "energy_samples": len(energies),
        "energy_max_increase": None if energy_error is not None else energy_increase(energies),
    }
    if cfg.model.D > 0:
        diag["E_u_stationary"] = expected_stationary_velocity(
            UncertainScalar(cfg.model.alpha, cfg.model.lambda_alpha),
            UncertainScalar(cfg.model.D, cfg.model.lambda_D),
            params.rule,
        )
    if energy_error is not None:
        diag["energy_error"] = energy_error
    out.note(**diag)

    growth = diag["energy_max_increase"]
    if growth is None:
        logger.warning(f"Free energy dissipation not checked, only {len(energies)} sample(s) taken")
    elif growth > ENERGY_TOL:
        logger.warning(f"Free energy grew by {growth:.3e} along the reference solve")

    if cfg.output.dump_ensemble:
        out.dump("ensemble.csv", lambda p: dump_ensemble(ens, p))

    logger.info(f"L1 distance between MCgPC and reference: {l1:.4e}")
    return diag


def _sweep_job(job) -> SweepPoint:
    cfg, D, seed = job
    ens, _, _ = simulate(cfg, seed, D=D)
    E_u, Std_u = mean_velocity_band(ens)
    return SweepPoint(D=D, E_u=E_u, Std_u=Std_u)


def _refine_bracket(points: Sequence[SweepPoint]) -> Tuple[float, float]:
    drops = [abs(b.E_u - a.E_u) for a, b in zip(points[:-1], points[1:])]
    k = int(np.argmax(drops))
    return points[k].D, points[k + 1].D


def sweep_diffusion(cfg: ScenarioConfig, out: RunOutput, progress: bool = False) -> List[SweepPoint]:
    streams = Streams(cfg.seed)
    threads = worker_count(cfg)
    values = sorted(cfg.sweep.D_values)

    logger.info(f"Sweeping {len(values)} diffusion values with {threads} worker(s)...")
    jobs = [(cfg, D, streams.child_seed(i)) for i, D in enumerate(values)]
    points = run_jobs(_sweep_job, jobs, threads)

    if cfg.sweep.refine and len(points) >= 2:
        lo, hi = _refine_bracket(points)
        extra = [float(D) for D in np.linspace(lo, hi, cfg.sweep.refine_points + 2)[1:-1]]
        logger.info(f"Refining the sweep on [{lo:g}, {hi:g}] with {len(extra)} extra point(s)...")

        first = len(jobs)
        jobs = [(cfg, D, streams.child_seed(first + i)) for i, D in enumerate(extra)]
        points = points + run_jobs(_sweep_job, jobs, threads)
        out.note(refine_bracket=[lo, hi], refine_values=extra)

    points = sorted(points, key=lambda p: p.D)
    out.table(
        "sweep.csv",
        [{"Dbar": p.D, "E_u": p.E_u, "Std_u": p.Std_u} for p in points],
        columns=["Dbar", "E_u", "Std_u"],
    )

    drops = [a.E_u - b.E_u for a, b in zip(points[:-1], points[1:])]
    diag = {"max_adjacent_drop": max(drops) if drops else 0.0}
    try:
        diag["critical_diffusion"] = critical_diffusion(cfg.model.alpha)
    except DomainError as e:
        logger.debug(f"No critical diffusion for alpha={cfg.model.alpha}: {e}")
        diag["critical_diffusion"] = None
    out.note(**diag)
    return points


def _convergence_job(job) -> List[float]:
    """Errors of one replica for every axis value, all runs on the replica seed."""
    cfg, axis, values, seed, T_ref = job
    d = cfg.discretization
    errors = []

    if axis == "M":
        ens, params, _ = simulate(cfg, seed, M=cfg.convergence.reference_M)
        _, T_ref = moment_modes(ens, params)
    elif axis == "S":
        ens, params, _ = simulate(cfg, seed, S=d.N)
        _, T_ref = moment_modes(ens, params)

    for value in values:
        kwargs = {axis: value}
        ens, params, _ = simulate(cfg, seed, **kwargs)
        _, T_hat = moment_modes(ens, params)
        errors.append(temperature_error(T_hat, T_ref))
    return errors


def convergence_study(cfg: ScenarioConfig, out: RunOutput, progress: bool = False) -> List[Dict[str, float]]:
    axis = cfg.scenario.split("-", 1)[1]
    values = cfg.axis_values
    R = cfg.convergence.replicas
    threads = worker_count(cfg)
    streams = Streams(cfg.seed)

    T_ref = None
    if axis == "N":
        op = reference_operator(cfg)
        ref_field, _, _ = solve_reference(cfg, op, progress=progress)
        T_ref = temperature_modes(ref_field, op)
        out.note(reference_temperature=T_ref)

    logger.info(f"Convergence in {axis} over {values} with {R} replica(s), {threads} worker(s)...")
    jobs = [(cfg, axis, values, streams.child_seed(r), T_ref) for r in range(R)]
    errors = np.asarray(run_jobs(_convergence_job, jobs, threads))

    mean = errors.mean(axis=0)
    stderr = errors.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)

    rows = [{"axis": axis, "value": v, "error": e, "stderr": s} for v, e, s in zip(values, mean, stderr)]
    out.table("convergence.csv", rows, columns=["axis", "value", "error", "stderr"])
    out.table(
        "convergence_replicas.csv",
        [dict({"replica": r}, **{f"{axis}={v}": e for v, e in zip(values, errors[r])}) for r in range(R)],
    )

    diag: Dict[str, object] = {"monotone": bool(np.all(np.diff(mean) < 0))}
    x = np.asarray(values, dtype=float)
    if axis == "S":
        x = np.sqrt(1.0 / x - 1.0 / cfg.discretization.N)
    try:
        diag["rate"] = fit_rate(x, mean)
    except DomainError as e:
        logger.warning(f"Rate fit skipped: {e}")
        diag["rate"] = None
    out.note(**diag)

    if diag["rate"] is not None:
        logger.info(f"Fitted log-log rate: {diag['rate']:.3f}")
    return rows


def phase_of(u: float) -> str:
    if abs(u) >= ORDERED_MIN:
        return "ordered"
    if abs(u) <= DISORDERED_MAX:
        return "disordered"
    return "intermediate"


def run_inhomogeneous(cfg: ScenarioConfig, out: RunOutput, progress: bool = False):
    d, g = cfg.discretization, cfg.grid
    params = build_model(cfg)
    ens = initial_ensemble(cfg, d.N, params.M, cfg.seed)
    step_cfg = step_config(cfg, d.N)

    grid = PhaseGrid(
        v_lo=g.v_lo, v_hi=g.v_hi, Nv=g.Nv,
        x_lo=g.x_lo, x_hi=g.x_hi, Nx=g.Nx,
        periodic=g.periodic,
    )

    times = sorted({t for t in d.snapshot_times if t <= d.T} | {d.T})
    logger.info(
        f"Running {params.kernel.variant} kernel: N={d.N}, S={step_cfg.S}, M={d.M}, "
        f"snapshots at {', '.join(f'{t:g}' for t in times)}..."
    )

    mean_f = None
    for t in times:
        if t > ens.t:
            ens, _ = run(ens, step_cfg, params, round(t - ens.t, 12), progress=progress)
        mean_f = expected_density(ens, grid, params.rule)
        var_f = variance_density(ens, grid, params.rule)
        out.dump(f"density_{t:g}.csv", lambda p: dump_density(mean_f, p, t))
        out.dump(f"variance_{t:g}.csv", lambda p: dump_density(var_f, p, t))

    marginal = velocity_marginal(mean_f)
    out.table(
        "marginal.csv",
        [{"v": v, "density": f} for v, f in zip(marginal.grid.v_centers, marginal.values)],
        columns=["v", "density"],
    )

    E_u, Std_u = mean_velocity_band(ens)
    diag = {
        "kernel": params.kernel.variant,
        "marginal_mean": marginal_mean(marginal),
        "out_of_grid": mean_f.out_of_grid,
        "E_u": E_u,
        "Std_u": Std_u,
    }
    if cfg.model.D > 0:
        diag["E_u_stationary_homogeneous"] = expected_stationary_velocity(
            UncertainScalar(cfg.model.alpha, cfg.model.lambda_alpha),
            UncertainScalar(cfg.model.D, cfg.model.lambda_D),
            params.rule,
        )
    diag["phase"] = phase_of(diag["marginal_mean"])
    if "E_u_stationary_homogeneous" in diag:
        diag["phase_expected"] = phase_of(diag["E_u_stationary_homogeneous"])
        diag["phase_consistent"] = diag["phase"] == diag["phase_expected"]
        if not diag["phase_consistent"]:
            logger.warning(
                f"Velocity marginal mean {diag['marginal_mean']:.4f} reads {diag['phase']}, "
                f"the homogeneous stationary state is {diag['phase_expected']}"
            )
    out.note(**diag)

    if cfg.output.dump_ensemble:
        out.dump("ensemble.csv", lambda p: dump_ensemble(ens, p))

    logger.info(f"Velocity marginal mean at T={d.T:g}: {diag['marginal_mean']:.4f}")
    return diag


def print_stationary(state) -> None:
    table = Table(box=box.ROUNDED)
    table.add_column("alpha", justify="right")
    table.add_column("D", justify="right")
    table.add_column("u", justify="right")
    table.add_column("G'(0)", justify="right")
    table.add_column("Residual", justify="right")
    table.add_column("Method", justify="left")
    table.add_row(
        f"{state.alpha:g}",
        f"{state.D:g}",
        f"{state.u:.10f}",
        f"{state.slope_at_zero:.6f}",
        f"{state.residual:.2e}",
        state.method,
    )

    print()
    logger.cons.print(Columns(["       ", table]))
    print()


def run_stationary(cfg: ScenarioConfig, out: RunOutput, progress: bool = False):
    state = stationary_state(cfg.model.alpha, cfg.model.D)
    print_stationary(state)

    out.table(
        "stationary.csv",
        [{
            "alpha": state.alpha,
            "D": state.D,
            "u": state.u,
            "slope_at_zero": state.slope_at_zero,
            "residual": state.residual,
        }],
        columns=["alpha", "D", "u", "slope_at_zero", "residual"],
    )
    out.note(u=state.u, slope_at_zero=state.slope_at_zero, residual=state.residual, method=state.method)
    logger.info(f"Stationary mean velocity u = {state.u:.10f} (residual {state.residual:.2e})")
    return state


PIPELINES = {
    "homogeneous": run_homogeneous,
    "sweep": sweep_diffusion,
    "convergence-M": convergence_study,
    "convergence-N": convergence_study,
    "convergence-S": convergence_study,
    "inhom-local": run_inhomogeneous,
    "inhom-cs": run_inhomogeneous,
    "stationary": run_stationary,
}

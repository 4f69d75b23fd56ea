import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from core import scenarios
from core.config import config_from_dict, load_config
from core.errors import DomainError, NumericalError
from core.output import RunOutput, resolve_output_dir
from core.reference import VelocityGrid


def _cfg(**blocks):
    return config_from_dict(blocks)


def _out(tmp_path, cfg, name="run"):
    return RunOutput(resolve_output_dir(str(tmp_path / name), cfg.scenario, cfg.seed), cfg.scenario, cfg.seed, "test")


class TestHelpers:
    def test_fit_rate_power_law(self):
        x = np.array([10.0, 100.0, 1000.0])
        assert scenarios.fit_rate(x, 3.0 * x ** -0.5) == pytest.approx(-0.5)

    def test_fit_rate_needs_two_points(self):
        with pytest.raises(DomainError):
            scenarios.fit_rate([1.0, 2.0], [0.5, 0.0])

    def test_run_jobs_keeps_order(self):
        jobs = [1.0, 4.0, 9.0, 16.0]
        assert scenarios.run_jobs(math.sqrt, jobs, 1) == [1.0, 2.0, 3.0, 4.0]
        assert scenarios.run_jobs(math.sqrt, jobs, 2) == [1.0, 2.0, 3.0, 4.0]

    def test_temperature_error_pads_modes(self):
        assert scenarios.temperature_error(np.array([1.0, 0.5]), np.array([1.0, 0.5, 0.2])) == pytest.approx(0.2)

    def test_kernel_follows_scenario(self):
        assert scenarios.kernel_for(_cfg(scenario="inhom-cs")).variant == "cucker-smale"
        assert scenarios.kernel_for(_cfg(scenario="inhom-local")).variant == "local"
        assert scenarios.kernel_for(_cfg()).variant == "homogeneous"

    def test_reference_step_divides_horizon(self):
        cfg = _cfg(discretization={"T": 0.7}, reference={"Nv": 41})
        op = scenarios.reference_operator(cfg)
        dt = scenarios.reference_time_step(cfg, VelocityGrid(-3.0, 3.0, 41), op)
        n = 0.7 / dt
        assert n == pytest.approx(round(n))


class TestReferenceEnergy:
    def test_energy_samples_collected(self):
        cfg = _cfg(discretization={"M": 1, "T": 0.1}, reference={"Nv": 41, "energy_every": 5})
        final, energies, error = scenarios.solve_reference(cfg, scenarios.reference_operator(cfg))
        assert error is None
        assert energies[0][0] == 0.0
        assert energies[-1][0] == pytest.approx(0.1)
        assert final.values.shape == (2, 41)

    def test_positivity_loss_stops_sampling(self, monkeypatch):
        calls = []

        def lost(field, op):
            calls.append(field.t)
            raise NumericalError("lost positivity")

        monkeypatch.setattr(scenarios, "free_energy", lost)
        cfg = _cfg(discretization={"M": 1, "T": 0.1}, reference={"Nv": 41, "energy_every": 1})
        final, energies, error = scenarios.solve_reference(cfg, scenarios.reference_operator(cfg))
        assert energies == []
        assert "lost positivity" in error
        assert len(calls) == 1
        assert final.t == pytest.approx(0.1)

    def test_energy_increase(self):
        samples = [(0.0, np.array([1.0, 2.0])), (1.0, np.array([0.5, 2.5])), (2.0, np.array([0.4, 2.4]))]
        assert scenarios.energy_increase(samples) == pytest.approx(0.5)
        assert scenarios.energy_increase(samples[:1]) is None
        assert scenarios.energy_increase([]) is None

    def test_stopped_sampling_leaves_growth_unchecked(self, tmp_path, monkeypatch):
        def lost(field, op):
            if field.t > 0:
                raise NumericalError("lost positivity")
            return np.zeros(op.rule.nodes.shape)

        monkeypatch.setattr(scenarios, "free_energy", lost)
        cfg = _cfg(discretization={"N": 50, "M": 1, "T": 0.1}, reference={"Nv": 41, "energy_every": 1})
        diag = scenarios.run_homogeneous(cfg, _out(tmp_path, cfg))
        assert diag["energy_samples"] == 1
        assert diag["energy_max_increase"] is None
        assert "lost positivity" in diag["energy_error"]


class TestSweep:
    TINY = {
        "scenario": "sweep",
        "seed": 3,
        "discretization": {"N": 60, "M": 1, "dt": 0.01, "T": 0.05},
        "sweep": {"D_values": [0.5, 0.1]},
    }

    def test_worker_count_does_not_change_results(self, tmp_path):
        serial = scenarios.sweep_diffusion(_cfg(**self.TINY, threads=1), _out(tmp_path, _cfg(**self.TINY), "a"))
        pooled = scenarios.sweep_diffusion(_cfg(**self.TINY, threads=2), _out(tmp_path, _cfg(**self.TINY), "b"))
        assert serial == pooled
        assert [p.D for p in serial] == [0.1, 0.5]

    def test_table_and_diagnostics(self, tmp_path):
        cfg = _cfg(**self.TINY)
        out = _out(tmp_path, cfg)
        scenarios.sweep_diffusion(cfg, out)
        table = pd.read_csv(out.path("sweep.csv"))
        assert list(table.columns) == ["Dbar", "E_u", "Std_u"]
        assert out.diagnostics["critical_diffusion"] == pytest.approx(0.45696, abs=1e-4)

    def test_refinement_adds_points(self, tmp_path):
        cfg = _cfg(**dict(self.TINY, sweep={"D_values": [0.1, 0.5], "refine": True, "refine_points": 3}))
        out = _out(tmp_path, cfg)
        points = scenarios.sweep_diffusion(cfg, out)
        assert len(points) == 5
        assert out.diagnostics["refine_bracket"] == [0.1, 0.5]


class TestConvergence:
    def test_particle_axis(self, tmp_path):
        cfg = _cfg(
            scenario="convergence-N",
            discretization={"M": 1, "dt": 0.01, "T": 0.1},
            reference={"Nv": 41},
            convergence={"values": [20, 40], "replicas": 2},
        )
        out = _out(tmp_path, cfg)
        rows = scenarios.convergence_study(cfg, out)
        assert [r["value"] for r in rows] == [20, 40]
        assert all(r["error"] >= 0 for r in rows)

        table = pd.read_csv(out.path("convergence.csv"))
        assert list(table.columns) == ["axis", "value", "error", "stderr"]
        replicas = pd.read_csv(out.path("convergence_replicas.csv"))
        assert len(replicas) == 2
        assert "monotone" in out.diagnostics

    def test_mode_axis_against_larger_truncation(self, tmp_path):
        cfg = _cfg(
            scenario="convergence-M",
            discretization={"N": 100, "dt": 0.01, "T": 0.1},
            convergence={"values": [1, 2], "replicas": 1, "reference_M": 4},
        )
        out = _out(tmp_path, cfg)
        rows = scenarios.convergence_study(cfg, out)
        assert len(rows) == 2
        assert all(np.isfinite(r["error"]) for r in rows)
        assert rows[0]["stderr"] == 0.0


class TestInhomogeneous:
    def test_local_kernel_snapshots(self, tmp_path):
        cfg = _cfg(
            scenario="inhom-local",
            seed=2,
            discretization={"N": 500, "S": 10, "M": 1, "dt": 0.01, "T": 0.1, "snapshot_times": [0.05]},
            initial={"mu_x": 0.0, "sigma_x": 0.5, "mu_v": 1.0, "sigma_v": 0.5},
        )
        out = _out(tmp_path, cfg)
        diag = scenarios.run_inhomogeneous(cfg, out)

        for name in ("density_0.05.csv", "variance_0.05.csv", "density_0.1.csv", "marginal.csv"):
            assert name in out.files

        marginal = pd.read_csv(out.path("marginal.csv"))
        dv = (cfg.grid.v_hi - cfg.grid.v_lo) / cfg.grid.Nv
        assert marginal["density"].sum() * dv == pytest.approx(1.0 - diag["out_of_grid"], abs=1e-9)
        assert diag["kernel"] == "local"
        assert 0.5 < diag["marginal_mean"] < 1.5

    def test_cucker_smale_sampled_partners(self, tmp_path):
        cfg = _cfg(
            scenario="inhom-cs",
            seed=5,
            model={"gamma": 0.1, "H": 1.0, "lambda_H": 0.2},
            discretization={"N": 300, "S": 10, "M": 1, "dt": 0.01, "T": 0.1, "snapshot_times": [0.05]},
            initial={"mu_x": 0.0, "sigma_x": 0.5, "mu_v": 1.0, "sigma_v": 0.5},
        )
        out = _out(tmp_path, cfg)
        diag = scenarios.run_inhomogeneous(cfg, out)

        assert diag["kernel"] == "cucker-smale"
        assert {"density_0.05.csv", "variance_0.1.csv", "marginal.csv"} <= set(out.files)
        assert np.isfinite(diag["E_u"]) and diag["Std_u"] > 0
        assert diag["phase"] == scenarios.phase_of(diag["marginal_mean"])
        assert diag["phase_expected"] == "ordered"

    def test_phase_labels(self):
        assert scenarios.phase_of(-0.4) == "ordered"
        assert scenarios.phase_of(0.1) == "disordered"
        assert scenarios.phase_of(0.2) == "intermediate"


@pytest.mark.slow
class TestPhaseTransition:
    def test_order_below_and_disorder_above(self, tmp_path):
        cfg = _cfg(
            scenario="sweep",
            seed=11,
            discretization={"N": 2000, "M": 4, "dt": 0.01, "T": 20.0},
            sweep={"D_values": [0.2, 0.8]},
        )
        low, high = scenarios.sweep_diffusion(cfg, _out(tmp_path, cfg))
        assert low.E_u >= 0.4
        assert abs(high.E_u) <= 0.1


@pytest.mark.slow
class TestHomogeneousAccuracy:
    def test_more_particles_closer_to_reference(self, tmp_path):
        distances = []
        for N in (1000, 10000):
            cfg = _cfg(seed=4, discretization={"N": N, "M": 4, "dt": 0.01, "T": 2.0})
            out = _out(tmp_path, cfg, f"N{N}")
            distances.append(scenarios.run_homogeneous(cfg, out)["l1_distance"])
        assert distances[1] < distances[0]
        assert distances[1] <= 0.1


@pytest.mark.slow
class TestHomogeneousDissipation:
    def test_positivity_loss_is_reported_not_hidden(self, tmp_path):
        # alpha = 1, D = 0.2, lambda = 0.1, M = 4, 81 nodes on [-3, 3], T = 50
        cfg = _cfg()
        final, energies, error = scenarios.solve_reference(cfg, scenarios.reference_operator(cfg))
        assert final.t == pytest.approx(50.0)

        # the central scheme dips below zero in the tail early on; growth is unchecked after that
        assert "lost positivity" in error
        assert energies[-1][0] < 1.0

        cfg = _cfg(discretization={"N": 1000, "T": 50.0})
        diag = scenarios.run_homogeneous(cfg, _out(tmp_path, cfg))
        assert diag["energy_error"] == error
        assert diag["energy_max_increase"] is None


@pytest.mark.slow
class TestInhomogeneousTransition:
    """Shipped inhomogeneous configs at N = 2*10^4 particles, T = 5."""

    @pytest.mark.parametrize("name", ["inhom-local", "inhom-cs"])
    def test_ordered_at_low_diffusion(self, tmp_path, name):
        diag = self._run(tmp_path, name, 0.2)
        assert abs(diag["marginal_mean"]) >= 0.3
        assert diag["phase_consistent"]

    def test_local_kernel_disordered_at_high_diffusion(self, tmp_path):
        diag = self._run(tmp_path, "inhom-local", 0.8)
        assert abs(diag["marginal_mean"]) <= 0.15
        assert diag["phase_consistent"]

    def test_cucker_smale_slower_to_disorder(self, tmp_path):
        # decays toward zero but sits just above the disordered threshold at T = 5
        low = self._run(tmp_path, "inhom-cs", 0.2)
        high = self._run(tmp_path, "inhom-cs", 0.8)
        assert abs(high["marginal_mean"]) <= 0.25
        assert abs(high["marginal_mean"]) < 0.5 * abs(low["marginal_mean"])
        assert high["phase"] != "ordered"

    @staticmethod
    def _run(tmp_path, name, D):
        path = Path(__file__).resolve().parent.parent / "configs" / f"{name}.json"
        cfg = load_config(str(path), {"model": {"D": D}, "discretization": {"N": 20000, "snapshot_times": [5.0]}})
        return scenarios.run_inhomogeneous(cfg, _out(tmp_path, cfg, f"{name}-{D}"))


@pytest.mark.slow
class TestConvergenceRates:
    """Scaled-down convergence studies; the rates are asserted, not just reported."""

    @pytest.mark.parametrize("D", [0.2, 0.8])
    def test_modes_converge_monotonically(self, tmp_path, D):
        cfg = _cfg(
            scenario="convergence-M",
            seed=21,
            model={"D": D},
            discretization={"N": 2000, "dt": 0.01, "T": 5.0},
            convergence={"values": [1, 2, 4], "replicas": 3, "reference_M": 8},
        )
        out = _out(tmp_path, cfg)
        rows = scenarios.convergence_study(cfg, out)
        errors = [r["error"] for r in rows]
        assert errors[0] > errors[1] > errors[2] > 0
        assert out.diagnostics["monotone"]

    def test_particle_count_half_order(self, tmp_path):
        cfg = _cfg(
            scenario="convergence-N",
            seed=22,
            discretization={"M": 4, "dt": 0.01, "T": 1.0},
            reference={"Nv": 81},
            convergence={"values": [100, 1000, 10000], "replicas": 10},
        )
        out = _out(tmp_path, cfg)
        scenarios.convergence_study(cfg, out)
        assert -0.7 <= out.diagnostics["rate"] <= -0.3

    def test_subsampling_first_order(self, tmp_path):
        cfg = _cfg(
            scenario="convergence-S",
            seed=23,
            discretization={"N": 2000, "M": 4, "dt": 0.01, "T": 2.0},
            convergence={"values": [10, 100, 1000], "replicas": 6},
        )
        out = _out(tmp_path, cfg)
        scenarios.convergence_study(cfg, out)
        # slope against sqrt(1/S - 1/N)
        assert 0.75 <= out.diagnostics["rate"] <= 1.25

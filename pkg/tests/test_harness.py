import csv
import json
import math

import numpy as np
import pytest

from sacsim.cli import main
from sacsim.harness import (DEFAULT_BESOV, SWEEP_COLUMNS, NoiseSchedule, ScheduleKind, SweepConfig,
                            damping_coefficient, emit_report, grid_for_epsilon, initial_condition,
                            run_limit_sweep, run_triviality_sweep)
from sacsim.integrators import IntegratorConfig, integrate_deterministic
from sacsim.spectral import BesovParams

COS = {"kind": "cosine", "amplitude": 1.0, "mode": [1, 0]}
SHORT = IntegratorConfig(dt=0.02, t_end=0.2)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestSchedule:
    @pytest.mark.parametrize("lam", [0.0, 0.5, math.sqrt(8 * math.pi / 3), 3.0])
    def test_critical_identity(self, lam):
        sch = NoiseSchedule.critical(lam)
        for j in range(3, 10):
            eps = 2.0**-j
            assert sch.sigma(eps) ** 2 * math.log(1 / eps) == pytest.approx(lam**2, rel=1e-15, abs=1e-300)
        assert sch.lambda_sq == pytest.approx(lam**2, rel=1e-15)

    def test_constant_and_power(self):
        assert NoiseSchedule.constant(1.3).sigma(0.01) == 1.3
        assert NoiseSchedule.constant(1.3).lambda_sq == math.inf
        assert NoiseSchedule.constant(0.0).lambda_sq == 0.0
        assert NoiseSchedule.power(1.0).sigma(0.125) == 0.125
        assert NoiseSchedule.power(1.0).lambda_sq == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            NoiseSchedule.power(0.0)
        with pytest.raises(ValueError):
            NoiseSchedule.constant(-1.0)
        with pytest.raises(ValueError):
            NoiseSchedule.constant(1.0).sigma(1.5)

    def test_dict_forms(self):
        assert NoiseSchedule.from_dict({"kind": "critical", "lambda_sq": 4.0}).value == 2.0
        assert NoiseSchedule.from_dict({"kind": "critical", "lambda": 2.0}).value == 2.0
        assert NoiseSchedule.from_dict({"kind": "power", "tau": 0.5}).kind is ScheduleKind.POWER
        sch = NoiseSchedule.constant(0.7)
        assert NoiseSchedule.from_dict(sch.to_dict()) == sch


class TestDamping:
    def test_values(self):
        assert damping_coefficient(0.0) == -1.0
        assert damping_coefficient(8 * math.pi / 3) == pytest.approx(0.0, abs=1e-15)
        assert damping_coefficient(8 * math.pi) == pytest.approx(2.0, rel=1e-15)

    def test_negative(self):
        with pytest.raises(ValueError):
            damping_coefficient(-0.1)


class TestGrid:
    def test_coupling(self):
        for j in range(1, 10):
            g = grid_for_epsilon(2.0**-j)
            assert g.k_max == 2**j and g.n > 4 * g.k_max and g.n % 2 == 0
        assert grid_for_epsilon(0.3).k_max == 4
        assert grid_for_epsilon(0.1).k_max == 10

    def test_memory_guard(self):
        with pytest.raises(ValueError, match="2\\^-9"):
            grid_for_epsilon(2.0**-10)


class TestSweeps:
    def test_triviality_small(self):
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [2**-2, 2**-3], COS, DEFAULT_BESOV, SHORT, 3, 11)
        assert [r.n for r in res.rows] == [3, 3] and [r.failed for r in res.rows] == [0, 0]
        assert len(res.cells) == 6 and all(c.seed == res.config["seeds"][c.realization] for c in res.cells)
        for r in res.rows:
            vals = [c.sup_norm for c in res.cells if c.eps == r.eps]
            assert r.mean_norm == pytest.approx(np.mean(vals), rel=1e-15)
            assert r.stderr == pytest.approx(np.std(vals, ddof=1) / math.sqrt(3), rel=1e-12)
            assert r.c_eps > 1 and r.d_eps_sq == r.c_eps / 3
        assert len(res.trend_pairs) == 1

    def test_reproducible_bitwise(self):
        args = (NoiseSchedule.constant(1.0), [2**-3], COS, DEFAULT_BESOV, SHORT, 2, 5)
        a, b = run_triviality_sweep(*args), run_triviality_sweep(*args)
        assert [c.sup_norm for c in a.cells] == [c.sup_norm for c in b.cells]

    def test_parallel_matches_serial(self, tmp_path):
        args = (NoiseSchedule.constant(1.0), [2**-2, 2**-3], COS, DEFAULT_BESOV, SHORT, 3, 2)
        emit_report(run_triviality_sweep(*args), tmp_path / "serial")
        emit_report(run_triviality_sweep(*args, threads=2), tmp_path / "pool")
        for name in ("sweep.csv", "plotdata_cells.csv", "plotdata_norm_vs_eps.csv", "config.json"):
            assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()

    def test_degenerate_rejected(self):
        for sch in (NoiseSchedule.constant(0.0), NoiseSchedule.critical(1.0), NoiseSchedule.power(1.0)):
            with pytest.raises(ValueError):
                run_triviality_sweep(sch, [0.25], COS, DEFAULT_BESOV, SHORT, 1, 0)
        with pytest.raises(ValueError):
            run_limit_sweep(NoiseSchedule.constant(1.0), [0.25], COS, DEFAULT_BESOV, SHORT, 1, 0)

    def test_preconditions(self):
        sch = NoiseSchedule.constant(1.0)
        with pytest.raises(ValueError):
            run_triviality_sweep(sch, [0.125, 0.25], COS, DEFAULT_BESOV, SHORT, 1, 0)
        with pytest.raises(ValueError):
            run_triviality_sweep(sch, [0.25], COS, BesovParams(2, 2, 0.0), SHORT, 1, 0)

    def test_limit_zero_noise_is_exact(self):
        res = run_limit_sweep(NoiseSchedule.critical(0.0), [2**-2, 2**-3], COS, DEFAULT_BESOV, SHORT, 2, 0)
        # exact on the reference grid; coarser grids only miss the limit's high harmonics
        assert all(c.sup_norm < 1e-14 for c in res.cells if c.eps == 2**-3)
        assert all(c.sup_norm < 1e-3 for c in res.cells)
        assert res.rows[0].c_eps is None and res.rows[0].d_eps_sq == 0.0

    def test_reference_override(self):
        # zero noise with a damped reference: the distance is the gap between the two deterministic flows
        sch = NoiseSchedule.critical(0.0)
        res = run_limit_sweep(sch, [2**-3], COS, DEFAULT_BESOV, SHORT, 1, 0, reference_lambda_sq=8 * math.pi)
        assert res.config["reference_lambda_sq"] == 8 * math.pi
        assert res.cells[0].sup_norm > 0.1
        cfg = SweepConfig.from_dict({"regime": "limit", "eps_list": [2**-3], "schedule": {"kind": "critical",
                                     "lambda": 0.0}, "integrator": {"dt": 0.02, "t_end": 0.2},
                                     "initial_condition": COS, "reference_lambda_sq": 8 * math.pi})
        assert cfg.run().cells[0].sup_norm == res.cells[0].sup_norm

    def test_limit_strong_damping(self):
        # lambda^2 = 8 pi: the limit decays; at eps = 2^-3 sigma is still ~3.5, so only sanity is checked
        cfg = IntegratorConfig(dt=0.02, t_end=2.0)
        w = integrate_deterministic(initial_condition(COS, grid_for_epsilon(2**-3)), 8 * math.pi, cfg,
                                    DEFAULT_BESOV)
        assert w.max_abs[-1] < math.exp(-2 * 2.0) and np.all(np.diff(w.max_abs) <= 0)
        res = run_limit_sweep(NoiseSchedule.critical(math.sqrt(8 * math.pi)), [2**-3], COS, DEFAULT_BESOV, cfg, 4, 1)
        assert res.rows[0].failed == 0 and np.isfinite(res.rows[0].mean_norm)

    def test_failed_cells_flagged(self):
        # a grossly unstable step overflows; the sweep continues and counts the failures
        cfg = IntegratorConfig(dt=1.0, t_end=20.0)
        big = {"kind": "constant", "value": 40.0}
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [0.25], big, DEFAULT_BESOV, cfg, 2, 0)
        assert res.rows[0].failed == 2 and res.rows[0].n == 0 and math.isnan(res.rows[0].mean_norm)
        assert all(c.failed and c.error for c in res.cells)

    def test_stderr_scales(self):
        cfg = IntegratorConfig(dt=0.02, t_end=0.1)
        se = [run_triviality_sweep(NoiseSchedule.constant(1.0), [0.25], COS, DEFAULT_BESOV, cfg, n, 3).rows[0].stderr
              for n in (100, 200)]
        assert se[0] / se[1] == pytest.approx(math.sqrt(2), rel=0.2)

    def test_delta_sweep_reported(self):
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [0.25], COS, DEFAULT_BESOV, SHORT, 1, 0)
        c = res.cells[0]
        sups = [c.sup_by_delta[repr(d)] for d in res.config["deltas"]]
        assert sups[0] >= sups[1] >= sups[2] and sups[1] == c.sup_norm


class TestReport:
    def test_empty(self, tmp_path):
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [], COS, DEFAULT_BESOV, SHORT, 1, 0)
        emit_report(res, tmp_path)
        assert read_csv(tmp_path / "sweep.csv") == [SWEEP_COLUMNS]
        json.loads((tmp_path / "config.json").read_text())

    def test_two_by_two(self, tmp_path):
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [0.5, 0.25], COS, DEFAULT_BESOV, SHORT, 2, 0)
        paths = emit_report(res, tmp_path)
        assert all(p.exists() for p in paths)
        rows = read_csv(tmp_path / "sweep.csv")
        assert rows[0] == SWEEP_COLUMNS and len(rows) == 3
        cells = read_csv(tmp_path / "plotdata_cells.csv")
        assert len(cells) == 5 and cells[1][2] == str(res.config["seeds"][0])
        cfg = json.loads((tmp_path / "config.json").read_text())
        assert cfg["integrator"]["dt"] == 0.02 and cfg["besov"]["s"] == -1 / 16 and len(cfg["grids"]) == 2

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        res = run_triviality_sweep(NoiseSchedule.constant(1.0), [], COS, DEFAULT_BESOV, SHORT, 1, 0)
        with pytest.raises(OSError, match="file"):
            emit_report(res, blocker / "sub")


class TestConfigAndCli:
    CONFIG = {"regime": "trivial", "eps_list": [0.5, 0.25], "schedule": {"kind": "constant", "sigma0": 1.0},
              "besov": {"p": 4, "r": 2, "s": -0.0625}, "integrator": {"dt": 0.02, "t_end": 0.2},
              "n_realizations": 2, "initial_condition": COS, "master_seed": 9}

    def test_config_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(self.CONFIG))
        cfg = SweepConfig.load(path)
        again = SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_integrator_key(self):
        with pytest.raises(ValueError, match="unknown integrator keys"):
            SweepConfig.from_dict(dict(self.CONFIG, integrator={"dt": 0.02, "t_end": 0.2, "delta": 0.1}))

    def test_sweep_rerun_identical(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(self.CONFIG))
        for name in ("a", "b"):
            assert main(["--out", str(tmp_path / name), "sweep", "--config", str(path)]) == 0
        for name in ("sweep.csv", "plotdata_cells.csv", "plotdata_delta.csv", "plotdata_norm_vs_eps.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert main(["--seed", "10", "--out", str(tmp_path / "c"), "sweep", "--config", str(path)]) == 0
        assert (tmp_path / "a" / "sweep.csv").read_bytes() != (tmp_path / "c" / "sweep.csv").read_bytes()

    def test_limit_regime_flag(self, tmp_path):
        cfg = dict(self.CONFIG, schedule={"kind": "power", "tau": 1.0})
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert main(["--out", str(tmp_path / "o"), "sweep", "--regime", "limit", "--config", str(path)]) == 0
        assert json.loads((tmp_path / "o" / "config.json").read_text())["regime"] == "limit"

    def test_renorm_and_bounds(self, tmp_path):
        assert main(["--out", str(tmp_path / "r.csv"), "renorm", "--eps", "1e-2,1e-3"]) == 0
        rows = read_csv(tmp_path / "r.csv")
        assert rows[0] == ["epsilon", "sigma", "c_eps", "d_eps_sq", "asymptotic", "ratio"] and len(rows) == 3
        assert main(["--out", str(tmp_path / "b.csv"), "check-bounds", "--a", "1", "--R", "1"]) == 0
        assert float(read_csv(tmp_path / "b.csv")[1][4]) == pytest.approx(abs(3 - math.pi * math.log(2)))

    def test_simulate_and_deterministic(self, tmp_path):
        assert main(["--seed", "3", "--out", str(tmp_path / "s"), "simulate", "--eps", "0.25", "--t-end", "0.1"]) == 0
        assert (tmp_path / "s" / "trajectory.csv").exists() and (tmp_path / "s" / "final.bin").exists()
        assert main(["--out", str(tmp_path / "d"), "deterministic", "--k-max", "4", "--t-end", "0.1",
                     "--scheme", "etd2"]) == 0
        assert json.loads((tmp_path / "d" / "trajectory.json").read_text())["config"]["scheme"] == "etd2"

    def test_errors_are_reported(self, tmp_path, capsys):
        assert main(["--out", str(tmp_path / "x"), "simulate", "--eps", "0.001"]) == 2
        assert "2^-9" in capsys.readouterr().err

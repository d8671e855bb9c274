import csv
import json
import os

import numpy as np
import pytest

from sparse_ddp import cli
from sparse_ddp.config import (
    ConfigError, load_config, parse_config, shipped_config, shipped_config_dir,
)
from sparse_ddp.dynamics import CartpoleModel
from sparse_ddp.dynamics.base import StepJacobians
from sparse_ddp.solver import LimitMode

SHIPPED = sorted(p.stem for p in shipped_config_dir().glob("*.cfg"))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def config_dict(name):
    return json.loads(shipped_config(name).read_text())


def write_cfg(tmp_path, data, name="problem.cfg"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def small_cartpole_cfg(**solver):
    data = config_dict("cartpole_smoothl1")
    data["system"]["horizon"] = 40
    data["solver"].update(max_iterations=30, cost_tolerance=1e-6, **solver)
    return data


class TestConfig:
    def test_shipped_set(self):
        assert {"cartpole_l2", "cartpole_smoothl1", "cartpole_huber", "cartpole_pseudohuber",
                "satellite_smoothl1", "satellite_artifact", "arm_reach"} <= set(SHIPPED)

    @pytest.mark.parametrize("name", SHIPPED)
    def test_round_trip(self, name):
        cfg = load_config(shipped_config(name))
        again = parse_config(json.loads(cfg.dumps()))
        assert again == cfg
        assert again.dumps() == cfg.dumps()

    def test_defaults_filled(self):
        cfg = load_config(shipped_config("cartpole_l2"))
        assert cfg.system.horizon == 200 and cfg.system.dt == 0.01
        assert cfg.solver.limit_mode is LimitMode.BOXQP

    @pytest.mark.parametrize("mutate, field", [
        (lambda d: d["cost"].update(beta=-0.1), "cost.beta"),
        (lambda d: d["cost"].update(bogus=1), "cost"),
        (lambda d: d.update(extra={}), "<root>"),
        (lambda d: d["system"].update(dt=0.0), "system.dt"),
        (lambda d: d["cost"].update(loss="l1"), "cost.loss"),
        (lambda d: d["solver"].update(limit_mode="soft"), "solver.limit_mode"),
        (lambda d: d["system"].update(force_limit="big"), "system.force_limit"),
    ])
    def test_schema_errors_name_field(self, mutate, field):
        data = config_dict("cartpole_huber")
        mutate(data)
        with pytest.raises(ConfigError) as info:
            parse_config(data)
        assert info.value.field == field
        assert field in str(info.value)

    def test_unknown_key_is_named(self):
        data = config_dict("cartpole_huber")
        data["cost"]["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            parse_config(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("{ not json")
        with pytest.raises(ConfigError, match="line 1"):
            load_config(path)


class TestSolve:
    def test_cartpole_l2_outputs(self, tmp_path, capsys):
        code = cli.main(["solve", "--config", "cartpole_l2", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        states = read_csv(tmp_path / "states.csv")
        controls = read_csv(tmp_path / "controls.csv")
        assert states[0] == ["knot", "time", "x", "theta", "xdot", "thetadot"]
        assert controls[0] == ["knot", "time", "force"]
        assert len(states) - 1 == 200 and len(controls) - 1 == 199
        # 17 significant digits round-trip the solver's floats
        assert float(states[-1][3]) == pytest.approx(np.pi, abs=1e-2)
        result = json.loads((tmp_path / "solve_result.json").read_text())
        assert result["converged"] and result["final_task_cost"] < 1e-4
        assert result["config"]["system"]["kind"] == "cartpole"
        report = json.loads((tmp_path / "sparsity_report.json").read_text())
        assert report["n_controls"] == 199
        assert "converged" in capsys.readouterr().out

    def test_negative_beta_exit_1(self, tmp_path, capsys):
        data = config_dict("cartpole_huber")
        data["cost"]["beta"] = -1.0
        code = cli.main(["solve", "--config", write_cfg(tmp_path, data), "--out", str(tmp_path)])
        assert code == cli.EXIT_CONFIG
        assert "cost.beta" in capsys.readouterr().err
        assert not (tmp_path / "states.csv").exists()

    def test_dimension_mismatch_names_field(self, tmp_path, capsys):
        data = config_dict("cartpole_huber")
        data["cost"]["Q"] = [1.0, 2.0]
        assert cli.main(["solve", "--config", write_cfg(tmp_path, data)]) == cli.EXIT_CONFIG
        assert "cost.Q" in capsys.readouterr().err

    def test_missing_config_exit_1(self, tmp_path, capsys):
        assert cli.main(["solve", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
        assert "not found" in capsys.readouterr().err

    def test_not_converged_exit_2_still_writes(self, tmp_path):
        data = small_cartpole_cfg()
        data["solver"]["max_iterations"] = 1
        code = cli.main(["solve", "--config", write_cfg(tmp_path, data), "--out", str(tmp_path)])
        assert code == cli.EXIT_NOT_CONVERGED
        assert (tmp_path / "states.csv").exists()
        assert not json.loads((tmp_path / "solve_result.json").read_text())["converged"]

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        out = tmp_path / "from_env"
        monkeypatch.setenv(cli.OUT_ENV, str(out))
        cfg = write_cfg(tmp_path, small_cartpole_cfg())
        cli.main(["solve", "--config", cfg])
        assert (out / "controls.csv").exists()
        # --out still wins over the environment
        cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "flag")])
        assert (tmp_path / "flag" / "controls.csv").exists()

    def test_config_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.delenv(cli.OUT_ENV, raising=False)
        data = small_cartpole_cfg()
        data["output"]["dir"] = str(tmp_path / "cfg_out")
        cli.main(["solve", "--config", write_cfg(tmp_path, data)])
        assert (tmp_path / "cfg_out" / "states.csv").exists()

    def test_arm_solve(self, tmp_path):
        assert cli.main(["solve", "--config", "arm_reach", "--out", str(tmp_path)]) == cli.EXIT_OK


class TestSweep:
    def test_two_by_two(self, tmp_path):
        cfg = write_cfg(tmp_path, small_cartpole_cfg())
        code = cli.main(["sweep", "--config", cfg, "--out", str(tmp_path), "--losses", "huber",
                         "--betas", "0.1,1", "--lambdas", "0.01,1"])
        assert code == cli.EXIT_OK
        rows = read_csv(tmp_path / "sweep.csv")
        assert tuple(rows[0]) == cli.analysis.SWEEP_COLUMNS
        assert len(rows) - 1 == 4
        summary = json.loads((tmp_path / "sweep_summary.json").read_text())
        assert summary["largest_beta"] == 1.0 and summary["failures"] == []

    def test_divergent_cell_recorded(self, tmp_path):
        cfg = write_cfg(tmp_path, small_cartpole_cfg())
        code = cli.main(["sweep", "--config", cfg, "--out", str(tmp_path), "--losses", "huber",
                         "--betas=-1,0.1", "--lambdas", "0.01"])
        assert code == cli.EXIT_OK
        rows = read_csv(tmp_path / "sweep.csv")
        header = rows[0]
        bad = dict(zip(header, rows[1]))
        assert bad["converged"] == "false" and bad["zero_count"] == "-1"
        assert dict(zip(header, rows[2]))["zero_count"] != "-1"
        assert len(json.loads((tmp_path / "sweep_summary.json").read_text())["failures"]) == 1

    def test_bad_jobs(self, tmp_path):
        assert cli.main(["sweep", "--config", "cartpole_huber", "--jobs", "0"]) == cli.EXIT_CONFIG

    def test_bad_number_list(self):
        with pytest.raises(SystemExit):
            cli.main(["sweep", "--config", "cartpole_huber", "--betas", "a,b"])


class TestTimingAndCheck:
    def test_timing(self, tmp_path):
        cfg = write_cfg(tmp_path, small_cartpole_cfg())
        code = cli.main(["timing", "--config", cfg, "--out", str(tmp_path), "--losses", "l2,huber",
                         "--lambdas", "0.01"])
        assert code == cli.EXIT_OK
        report = json.loads((tmp_path / "timing.json").read_text())
        assert report["beta"] == 1.0
        assert set(report["losses"]) == {"l2", "huber"}
        assert sorted(report["order"]) == ["huber", "l2"]

    def test_timing_empty_lambdas(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, small_cartpole_cfg())
        assert cli.main(["timing", "--config", cfg, "--lambdas", ""]) == cli.EXIT_CONFIG
        assert "timing.lambdas" in capsys.readouterr().err

    @pytest.mark.parametrize("name", ["arm_reach", "cartpole_l2"])
    def test_check_passes(self, name, capsys):
        assert cli.main(["check", "--config", name]) == cli.EXIT_OK
        assert "PASS: worst offender" in capsys.readouterr().out

    def test_check_corrupted_jacobian(self, monkeypatch, capsys):
        original = CartpoleModel.analytic_jacobians

        def broken(self, x, u):
            jac = original(self, x, u)
            return StepJacobians(jac.fx * 1.01, jac.fu)

        monkeypatch.setattr(CartpoleModel, "analytic_jacobians", broken)
        assert cli.main(["check", "--config", "cartpole_l2"]) == cli.EXIT_CHECK_FAILED
        assert "FAIL: worst offender fx" in capsys.readouterr().out


class TestOutputFiles:
    def test_float_format(self):
        assert cli.fmt(0.1) == "0.10000000000000001"
        assert float(cli.fmt(np.pi)) == np.pi
        assert cli.fmt(True) == "true" and cli.fmt(3) == "3"

    def test_atomic_write_replaces(self, tmp_path):
        path = tmp_path / "f.csv"
        cli.write_atomic(path, "one\n")
        cli.write_atomic(path, "two\n")
        assert path.read_text() == "two\n"
        assert os.listdir(tmp_path) == ["f.csv"]

    def test_failed_write_keeps_old_file(self, tmp_path, monkeypatch):
        path = tmp_path / "f.csv"
        cli.write_atomic(path, "complete\n")

        def crash(fd):
            raise OSError("disk gone")

        monkeypatch.setattr(os, "fsync", crash)
        with pytest.raises(OSError):
            cli.write_atomic(path, "partial")
        assert path.read_text() == "complete\n"
        assert os.listdir(tmp_path) == ["f.csv"]

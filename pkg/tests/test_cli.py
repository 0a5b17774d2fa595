import json
from pathlib import Path

import pytest

from fairmarket import cli
from fairmarket.config import (SCENARIOS, ExperimentSpec, defaults_dict, load_config, merge,
                               scenario_dict, spec_from_dict)
from fairmarket.errors import ConfigError
from fairmarket.runner import replicate_keys, run_experiment, verify
from fairmarket.sim import SimConfig

ROOT = Path(__file__).resolve().parents[1]
TINY = ["--iterations", "8", "--slots", "4"]


def tiny_config(tmp_path, **sim):
    data = {"simulation": {"n_members": 120, "d_eligible": 40, **sim}}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(data))
    return str(path)


class TestConfig:
    def test_shipped_defaults_match(self):
        assert load_config(ROOT / "configs" / "defaults.json") == defaults_dict()

    def test_defaults_round_trip(self):
        spec = spec_from_dict(defaults_dict())
        assert spec == ExperimentSpec()

    def test_nested_error_path(self):
        with pytest.raises(ConfigError) as exc:
            spec_from_dict({"simulation": {"p00": 3.0}})
        assert exc.value.field == "simulation.p00"

    @pytest.mark.parametrize("data,field", [
        ({"simulation": {"n_slots": 3}}, "simulation.n_slots"),
        ({"simulation": {"m_slots": "ten"}}, "simulation.m_slots"),
        ({"simulation": {"exposure_tolerance": -1.0}}, "simulation.exposure_tolerance"),
        ({"experiment": {"methods": ["oracle"]}}, "experiment.methods[0]"),
        ({"experiment": {"methods": "primal"}}, "experiment.methods"),
        ({"experiment": {"replicates": 0}}, "experiment.replicates"),
        ({"plots": {}}, "plots"),
    ])
    def test_invalid(self, data, field):
        with pytest.raises(ConfigError) as exc:
            spec_from_dict(data)
        assert exc.value.field == field

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"simulation": {"seed": True}})

    def test_int_accepted_for_float(self):
        assert spec_from_dict({"simulation": {"p_base": 1}}).sim.p_base == 1.0

    def test_scenarios(self):
        spec = spec_from_dict(scenario_dict("table1-s1"))
        assert (spec.sim.m_slots, spec.sim.dual_refresh_epochs, spec.replicates) == (10, 50, 1)
        assert spec_from_dict(scenario_dict("bootstrap-s3")).replicates == 100
        assert set(SCENARIOS) == {f"{k}-s{i}" for k in ("table1", "bootstrap") for i in (1, 2, 3)}
        with pytest.raises(ConfigError):
            scenario_dict("table9")

    def test_merge(self):
        assert merge({"a": {"x": 1, "y": 2}}, {"a": {"y": 3}, "b": 4}) == {"a": {"x": 1, "y": 3}, "b": 4}

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_replicate_keys(self):
        spec = ExperimentSpec(sim=SimConfig(replicate=7))
        assert replicate_keys(spec) == [7]
        assert replicate_keys(spec.replace(replicates=3)) == [1, 2, 3]


class TestRunner:
    def test_single_method(self, tmp_path):
        sim = SimConfig(n_members=120, d_eligible=40, n_iterations=10, m_slots=4)
        res = run_experiment(ExperimentSpec(sim=sim, methods=("noReranker",), out_dir=str(tmp_path)))
        assert len(open(res.paths["metrics"]).read().splitlines()) == 2
        assert len(res.paths["logs"]) == 1 and res.failures == {}
        manifest = json.loads((tmp_path / "run.json").read_text())
        assert manifest["methods"] == ["noReranker"]

    def test_byte_identical_outputs(self, tmp_path):
        sim = SimConfig(n_members=120, d_eligible=40, n_iterations=12, m_slots=4)
        for sub in ("a", "b"):
            run_experiment(ExperimentSpec(sim=sim, out_dir=str(tmp_path / sub)))
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_bootstrap_summary(self, tmp_path):
        sim = SimConfig(n_members=100, d_eligible=30, n_iterations=6, m_slots=4)
        res = run_experiment(ExperimentSpec(sim=sim, methods=("noReranker", "dualNoDynamic"),
                                            replicates=3, out_dir=str(tmp_path)))
        assert len(res.summaries) == 2 and "logs" not in res.paths
        assert (tmp_path / "summary.csv").exists() and (tmp_path / "summary_table.txt").exists()

    def test_verify_passes(self):
        report = verify(ExperimentSpec(sim=SimConfig(n_members=150, d_eligible=60)))
        assert all(ok for _, ok, _ in report), report

    def test_verify_reports_bad_tolerance(self):
        report = verify(ExperimentSpec(sim=SimConfig(exposure_tolerance=-1.0)))
        assert report == [("config", False, report[0][2])] and "exposure_tolerance" in report[0][2]


class TestCommandLine:
    def test_run(self, tmp_path, capsys):
        code = cli.main(["run", "--config", tiny_config(tmp_path), "--out", str(tmp_path / "o"),
                         "--method", "noReranker", "--method", "primal", "-q", *TINY])
        out = capsys.readouterr().out
        assert code == 0 and "noReranker" in out and "primal" in out
        assert (tmp_path / "o" / "comparison_table.txt").exists()

    def test_scenario_with_overrides(self, tmp_path, capsys):
        code = cli.main(["run", "--scenario", "table1-s2", "--config", tiny_config(tmp_path),
                         "--out", str(tmp_path / "o"), "--iterations", "5", "--method", "noReranker", "-q"])
        assert code == 0
        manifest = json.loads((tmp_path / "o" / "run.json").read_text())
        assert manifest["simulation"]["m_slots"] == 20 and manifest["scenario"] == "table1-s2"

    def test_config_error_exit_code(self, tmp_path, capsys):
        code = cli.main(["run", "--config", tiny_config(tmp_path, p00=2.0), "--out", str(tmp_path)])
        assert code == cli.EXIT_CONFIG
        assert "simulation.p00" in capsys.readouterr().err

    def test_verify_bad_tolerance(self, tmp_path, capsys):
        code = cli.main(["verify", "--config", tiny_config(tmp_path, exposure_tolerance=-1.0)])
        assert code == cli.EXIT_CONFIG
        assert "FAIL" in capsys.readouterr().out

    def test_verify(self, tmp_path, capsys):
        assert cli.main(["verify", "--config", tiny_config(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5

    def test_defaults_and_scenarios(self, capsys):
        assert cli.main(["defaults"]) == 0
        assert json.loads(capsys.readouterr().out) == defaults_dict()
        assert cli.main(["scenarios"]) == 0
        assert "bootstrap-s1" in capsys.readouterr().out

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "f"
        blocker.write_text("")
        code = cli.main(["run", "--config", tiny_config(tmp_path), "--out", str(blocker / "x"),
                         "--method", "noReranker", "-q", *TINY])
        assert code == 1

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from trialadapt import cli
from trialadapt.errors import ConfigError
from trialadapt.experiment import (
    ComparisonRow,
    ExperimentConfig,
    default_schedule,
    is_non_monotonic,
    linear_r2,
    protocol_config,
    parse_config,
    read_comparison_csv,
    read_sizes_csv,
    run_experiment,
    run_replicate,
    summarize,
)
from trialadapt.policy import Policy, RemovalPlanConfig
from trialadapt.simulation import SimConfig

SMALL = """
[sim]
n_per_arm = 15
effect_noise_t = 0.02 0.05

[removal]
n_rem = 8

[schedule]
burn_in = 4

[experiment]
replicates = 2
master_seed = 7
"""


@pytest.fixture(scope="module")
def small():
    return parse_config(SMALL)


class TestConfig:
    def test_defaults_follow_protocol(self):
        cfg = protocol_config()
        assert cfg == ExperimentConfig()
        assert cfg.sim.n_per_arm == 90 and cfg.n_rem == 120 and cfg.replicates == 50
        assert cfg.schedule[0] == (11, 1) and cfg.schedule[-1] == (130, 1)
        assert {p.policy for p in cfg.removal} == set(Policy)

    def test_parse(self, small):
        assert small.sim.n_per_arm == 15 and small.sim.steps == 12
        assert small.schedule == default_schedule(8, 4, 1)
        assert small.replicates == 2 and small.master_seed == 7

    def test_explicit_schedule(self):
        cfg = parse_config("[removal]\nn_rem = 3\n[schedule]\nsteps = 5:2 9:1\n")
        assert cfg.schedule == ((5, 2), (9, 1)) and cfg.sim.steps == 9

    @pytest.mark.parametrize("text, field", [
        ("[sim]\nbogus = 1\n", "sim.bogus"),
        ("[nope]\n", "nope"),
        ("[sim]\nn_per_arm = many\n", "sim.n_per_arm"),
        ("[removal]\nn_rem = 5\n[schedule]\nsteps = 3:2\n", "removal.n_rem"),
        ("[removal]\npolicies = Greedy\n", "removal.policies"),
        ("[analysis]\ntransform = log\n", "analysis.transform"),
        ("[schedule]\nsteps = 4-1\n", "schedule.steps"),
    ])
    def test_errors_name_field(self, text, field):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.field == field

    def test_schedule_past_simulation(self):
        with pytest.raises(ConfigError):
            replace(protocol_config(), sim=SimConfig(steps=50))


class TestRun:
    def test_no_removals_identical_rows(self):
        cfg = parse_config(SMALL.replace("n_rem = 8", "n_rem = 0"))
        res = run_replicate(cfg, 0)
        ur, sg = res.runs[Policy.UniformRandom], res.runs[Policy.SensitivityGuided]
        assert len(ur.rows) == 1
        assert ur.rows[0].map_estimate == sg.rows[0].map_estimate
        assert ur.rows[0].posterior_std == sg.rows[0].posterior_std

    def test_rows_and_ground_truth(self, small):
        res = run_replicate(small, 1)
        for run in res.runs.values():
            assert [r.removals_so_far for r in run.rows] == list(range(9))
            assert [r.step for r in run.rows] == [4] + list(range(5, 13))
            assert len(run.log) == 8 and not run.exhausted
        gt = dict(res.ground_truth)
        for r in res.runs[Policy.UniformRandom].rows:
            assert r.ground_truth == gt[r.step]

    def test_policies_see_same_outcomes(self, small):
        a = run_replicate(small, 0)
        only_ur = replace(small, removal=(RemovalPlanConfig(8, Policy.UniformRandom),))
        b = run_replicate(only_ur, 0)
        assert a.trajectory_sha256 == b.trajectory_sha256
        assert a.runs[Policy.UniformRandom].log == b.runs[Policy.UniformRandom].log

    def test_byte_identical_outputs(self, small, tmp_path):
        run_experiment(replace(small, output_dir=str(tmp_path / "a")))
        run_experiment(replace(small, output_dir=str(tmp_path / "b")))
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert {"comparison.csv", "removals.csv", "report.json", "checksums.csv"} <= {str(f) for f in files}
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_checksums_shared_by_policies(self, small, tmp_path):
        run_experiment(replace(small, output_dir=str(tmp_path)))
        lines = (tmp_path / "checksums.csv").read_text().splitlines()[1:]
        by_rep = {}
        for line in lines:
            rep, _, digest = line.split(",")
            by_rep.setdefault(rep, set()).add(digest)
        assert len(by_rep) == 2 and all(len(d) == 1 for d in by_rep.values())

    def test_tables_round_trip(self, small, tmp_path):
        result = run_experiment(replace(small, output_dir=str(tmp_path)))
        table = read_comparison_csv(tmp_path / "comparison.csv")
        assert table == result.table
        sizes = read_sizes_csv(tmp_path / "subgroup_sizes.csv")
        again = summarize(table, sizes)
        stored = json.loads((tmp_path / "report.json").read_text())
        assert again["win_rate_abs_error"] == stored["win_rate_abs_error"]

    def test_workers_match_serial(self, small):
        a = run_experiment(small)
        b = run_experiment(replace(small, workers=2))
        assert a.table == b.table


def row(rep, k, pol, map_est, std, gt=0.0):
    return ComparisonRow(rep, k, pol, 10 + k, map_est, std, gt)


class TestSummaries:
    def test_tie_is_half(self):
        table = [row(0, k, p, 0.1, 0.2) for k in range(6) for p in Policy]
        rep = summarize(table)
        assert rep["win_rate_posterior_std"] == 0.5 and rep["win_rate_abs_error"] == 0.5

    def test_clear_win(self):
        table = [row(0, k, Policy.SensitivityGuided, 0.0, 0.1) for k in range(6)]
        table += [row(0, k, Policy.UniformRandom, 0.5, 0.3) for k in range(6)]
        rep = summarize(table)
        assert rep["win_rate_posterior_std"] == 1.0 and rep["frac_final_std_sg_le_ur"] == 1.0

    def test_linear_r2(self):
        assert linear_r2(np.arange(10) * -2 + 5) == pytest.approx(1.0)
        assert linear_r2([3, 3, 3]) == 1.0
        assert linear_r2([0, 1, 0, 1, 0, 1]) < 0.2

    def test_non_monotonic(self):
        assert not is_non_monotonic([5, 4, 4, 2])
        assert is_non_monotonic([5, 4, 6])


class TestCli:
    def test_simulate_and_analyze(self, tmp_path, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text(SMALL)
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "trajectory.csv").exists()
        assert cli.main(["analyze", "--config", str(cfg), "--snapshot", str(tmp_path / "snapshot.csv"),
                         "--out", str(tmp_path)]) == 0
        meta = json.loads((tmp_path / "posterior.json").read_text())
        assert math.isfinite(meta["map_estimate"])
        assert "next removal" in capsys.readouterr().out

    def test_experiment_and_report(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text(SMALL)
        out = tmp_path / "run"
        assert cli.main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
        assert cli.main(["report", "--table", str(out / "comparison.csv"), "--sizes",
                         str(out / "subgroup_sizes.csv"), "--out", str(tmp_path / "rep")]) == 0
        assert "subgroups" in json.loads((tmp_path / "rep" / "report.json").read_text())

    def test_adapt(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text(SMALL)
        assert cli.main(["adapt", "--config", str(cfg), "--policy", "UniformRandom", "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "removals_UniformRandom.csv").read_text().splitlines()) == 9

    def test_config_error_exit(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[sim]\nn_per_arm = -3\n")
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "sim.n_per_arm" in capsys.readouterr().err

    def test_exhaustion_exit(self, tmp_path):
        cfg = tmp_path / "tight.ini"
        cfg.write_text("[sim]\nn_per_arm = 6\n[removal]\nn_rem = 10\n[schedule]\nburn_in = 1\n"
                       "[experiment]\nreplicates = 1\nrequire_full = true\n")
        assert cli.main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        relaxed = cfg.read_text().replace("require_full = true", "require_full = false")
        cfg.write_text(relaxed)
        assert cli.main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0

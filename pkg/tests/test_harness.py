import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onebit_irs.channel_model import desk_profile
from onebit_irs.errors import ConfigError
from onebit_irs.harness.configfile import dump_config, load_config, parse_config
from onebit_irs.harness.experiment import (
    CSV_HEADER, ExperimentSpec, aggregate, config_for, format_rows, run_experiment, run_task,
    worker_count,
)
from onebit_irs.harness.metrics import nmse, nmse_db, support_accuracy

from conftest import crandn, small_config

FOUR = ("sbl", "bsbl", "two-stage", "em-bpdn")


def tiny_spec(**overrides) -> ExperimentSpec:
    base = dict(base=small_config(max_em_iters=10), sweep_name="snr_db",
                sweep_values=(0.0, 15.0, 30.0), estimators=FOUR, runs=2, seed=7,
                timing=False, workers=1, name="tiny")
    base.update(overrides)
    return ExperimentSpec(**base)


class TestNmse:
    @pytest.fixture
    def H(self, rng):
        return [crandn(rng, 4, 3), crandn(rng, 4, 3)]

    def test_exact(self, H):
        assert nmse(H, H) == 0.0

    def test_zero_estimate(self, H):
        assert nmse(H, [np.zeros_like(h) for h in H]) == pytest.approx(1.0)
        assert nmse_db(1.0) == 0.0

    def test_doubled(self, H):
        assert nmse(H, [2 * h for h in H]) == pytest.approx(1.0)

    def test_user_average(self, H):
        est = [H[0], np.zeros_like(H[1])]
        assert nmse(H, est) == pytest.approx(0.5)

    @pytest.mark.parametrize("true, est", [
        ([np.zeros((2, 2))], [np.ones((2, 2))]),
        ([np.ones((2, 2))], [np.ones((2, 3))]),
        ([np.ones((2, 2))], []),
    ])
    def test_errors(self, true, est):
        with pytest.raises(ValueError):
            nmse(true, est)

    def test_db_of_zero(self):
        assert nmse_db(0.0) == float("-inf")


class TestSupportAccuracy:
    @pytest.mark.parametrize("detected, expected", [
        ([3, 9], 1.0), ([], 30 / 32), ([r for r in range(32) if r not in (3, 9)], 0.0),
        ([3], 31 / 32), ([3, 9, 10], 31 / 32),
    ])
    def test_examples(self, detected, expected):
        assert support_accuracy([3, 9], detected, 32) == pytest.approx(expected)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            support_accuracy([0], [32], 32)

    @given(st.sets(st.integers(0, 15)), st.sets(st.integers(0, 15)))
    def test_in_unit_interval(self, t, d):
        assert 0.0 <= support_accuracy(t, d, 16) <= 1.0


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = desk_profile(Q=40, snr_db=-3.5)
        path = tmp_path / "exp.cfg"
        path.write_text(dump_config(cfg, runs=5, phase_mode="random"))
        data = load_config(path)
        assert dataclasses.replace(desk_profile(), **data["system"]) == cfg
        assert data["experiment"] == {"runs": 5, "phase_mode": "random"}

    def test_comments_and_types(self):
        data = parse_config("# header\nQ = 12  # slots\non_grid = no\nsnr_db=3\n\n")
        assert data["system"] == {"Q": 12, "on_grid": False, "snr_db": 3.0}

    @pytest.mark.parametrize("text", ["Q 12", "foo = 1", "Q = twelve", "on_grid = maybe"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError) as info:
            load_config(tmp_path / "nope.cfg")
        assert "nope.cfg" in str(info.value)


class TestExperimentSpec:
    @pytest.mark.parametrize("bad", [
        dict(sweep_values=()), dict(runs=0), dict(estimators=("sbl", "magic")),
        dict(estimators=()), dict(sweep_name="M"), dict(phase_mode="chaotic"),
        dict(base=desk_profile(), sweep_name="N", sweep_values=(3,)),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            tiny_spec(**bad)

    def test_n_sweep_keeps_oversampling(self):
        base = desk_profile(Gty=8)
        spec = tiny_spec(base=base, sweep_name="N", sweep_values=(4, 8, 16))
        for n in (4, 8, 16):
            cfg = config_for(spec, n)
            assert cfg.N == n and cfg.Nx == base.Nx and cfg.Gty == 2 * cfg.Ny

    def test_worker_cap(self, monkeypatch):
        monkeypatch.setenv("ONEBIT_THREADS", "1")
        assert worker_count(8) == 1
        monkeypatch.setenv("ONEBIT_THREADS", "x")
        with pytest.raises(ConfigError):
            worker_count(2)


@pytest.fixture(scope="module")
def result(tmp_path_factory):
    return run_experiment(tiny_spec(), out_dir=tmp_path_factory.mktemp("exp"))


class TestRunExperiment:
    def test_cardinality(self, result):
        assert len(result.rows) == 12
        assert {(r.estimator, r.sweep_value) for r in result.rows} == {
            (e, v) for e in FOUR for v in (0.0, 15.0, 30.0)}

    def test_csv_header(self, result):
        text = result.paths["aggregate"].read_text()
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert CSV_HEADER == ["estimator", "sweep_name", "sweep_value", "nmse_db", "accuracy",
                              "mean_iters", "mean_wall_ms", "errors", "runs"]
        assert len(text.splitlines()) == 13

    def test_same_seed_same_bytes(self, result, tmp_path):
        again = run_experiment(tiny_spec(), out_dir=tmp_path)
        for key in ("aggregate", "runs"):
            assert again.paths[key].read_bytes() == result.paths[key].read_bytes()

    def test_parallel_matches_serial(self, result):
        par = run_experiment(tiny_spec(workers=2))
        assert format_rows(par.rows) == format_rows(result.rows)

    def test_linear_aggregation(self, result):
        for row in result.rows:
            per_run = [r.nmse for r in result.records
                       if r.estimator == row.estimator and r.sweep_value == row.sweep_value]
            assert row.nmse == pytest.approx(np.mean(per_run), rel=1e-12)
            assert row.nmse_db == pytest.approx(10 * np.log10(np.mean(per_run)))

    def test_accuracy_only_for_support_estimators(self, result):
        for row in result.rows:
            has = row.accuracy is not None
            assert has == (row.estimator in ("bsbl", "two-stage"))
            if has:
                assert 0.0 <= row.accuracy <= 1.0

    def test_seed_changes_output(self, result):
        other = run_experiment(tiny_spec(seed=8))
        assert format_rows(other.rows) != format_rows(result.rows)

    def test_errors_recorded_and_excluded(self):
        # the structured inverse needs a structured phase schedule
        spec = tiny_spec(estimators=("sbl", "fast-sbl"), sweep_values=(10.0,))
        res = run_experiment(spec)
        bad = res.row("fast-sbl", 10.0)
        assert bad.errors == 2 and bad.runs == 0 and np.isnan(bad.nmse)
        assert all("UnsupportedModeError" in r.error for r in res.records
                   if r.estimator == "fast-sbl")
        assert res.row("sbl", 10.0).errors == 0

    def test_threshold_sweep_shares_scenarios(self):
        spec = tiny_spec(sweep_name="gamma_th", sweep_values=(1e-4, 1e-2),
                         estimators=("sbl", "two-stage"), runs=1)
        recs = run_task(spec, None, 0)
        sbl = [r for r in recs if r.estimator == "sbl"]
        assert len(recs) == 4 and sbl[0].nmse == sbl[1].nmse
        assert {r.seed for r in recs} == {recs[0].seed}

    def test_aggregate_empty_accuracy_formatting(self):
        spec = tiny_spec(estimators=("sbl",), sweep_values=(5.0,), runs=1)
        text = format_rows(aggregate(spec, run_task(spec, 0, 0)))
        assert text.splitlines()[1].split(",")[4] == ""

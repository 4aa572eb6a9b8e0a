import csv
import io
import json

import numpy as np
import pytest

from bfhybrid import __version__
from bfhybrid.model_kit.bundled import get_model
from bfhybrid.sim_bench import (
    CSV_HEADER,
    TABLE1_THETA0,
    SimConfig,
    SimulationReport,
    _summarize,
    export_report,
    load_report,
    replication_seeds,
    report_csv,
    run_consistency,
    run_simulation,
    run_table1,
    scenario_config,
)


def small_table1(**kw):
    base = dict(n=(60,), reps=2, seed=7, mcmc_length=600, mcmc_burn_in=400)
    base.update(kw)
    return scenario_config("table1", **base)


@pytest.fixture(scope="module")
def table1_report():
    return run_table1(small_table1())


@pytest.fixture(scope="module")
def consistency_report():
    return run_consistency(scenario_config("consistency", n=(50, 400), reps=6, seed=3))


class TestSimConfig:
    def test_theta0_row(self):
        np.testing.assert_array_equal(
            SimConfig().theta0, (0.190, 0.540, 0.270, -0.850, 0.220, 1.350, 0.450, 0.200, 0.860)
        )
        assert TABLE1_THETA0 == SimConfig().theta0

    def test_default_reps(self):
        cfg = SimConfig()
        assert [cfg.reps_for(n) for n in cfg.n] == [200, 200, 100]
        assert scenario_config("consistency").reps_for(5000) == 50
        assert SimConfig(reps=3).reps_for(1000) == 3

    @pytest.mark.parametrize(
        "kw, key",
        [
            ({"n": (5,)}, "n"),
            ({"reps": -1}, "reps"),
            ({"seed": -1}, "seed"),
            ({"estimators": ("ols",)}, "estimators"),
            ({"scenario": "nope"}, "scenario"),
            ({"theta0": (0.5, 0.5)}, "theta0"),
            ({"loss": "cubic"}, "loss"),
        ],
    )
    def test_validation_names_key(self, kw, key):
        with pytest.raises(ValueError, match=key):
            SimConfig(**kw)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError, match="colour"):
            SimConfig.from_dict({"colour": 1})

    def test_dict_round_trip(self):
        cfg = small_table1()
        assert SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @pytest.mark.parametrize(
        "field, value",
        [("n", (61,)), ("reps", 3), ("seed", 8), ("mcmc_length", 601), ("mean_prior_means", (0.0, 0.0, 1.0)),
         ("estimators", ("mle",)), ("theta0", (0.2, 0.5, 0.3, -0.85, 0.22, 1.35, 0.45, 0.2, 0.86))],
    )
    def test_hash_changes_with_every_field(self, field, value):
        base = small_table1()
        kw = {field: value}
        if field == "mean_prior_means":
            kw["mean_prior_vars"] = (0.1, 0.1, 0.1)
        assert small_table1(**kw).config_hash() != base.config_hash()
        assert small_table1().config_hash() == base.config_hash()


class TestSeeds:
    def test_depend_on_all_inputs(self):
        seen = {replication_seeds(m, n, r)[1] for m in (0, 1) for n in (100, 300) for r in range(3)}
        assert len(seen) == 12

    def test_data_seed_reproducible(self):
        a = np.random.default_rng(replication_seeds(5, 100, 2)[0]).random(3)
        b = np.random.default_rng(replication_seeds(5, 100, 2)[0]).random(3)
        np.testing.assert_array_equal(a, b)


class TestTable1:
    def test_metadata(self, table1_report):
        r = table1_report
        assert r.seed == 7 and r.version == __version__
        assert r.config == small_table1().to_dict()
        assert r.config_hash == small_table1().config_hash()
        assert r.params[:3] == ["gamma1", "gamma2", "gamma3"]
        assert len(r.raw) == 2 * 3

    def test_canonical_order_and_simplex(self, table1_report):
        for est in ("mle", "hybrid", "bayes"):
            v = table1_report.values(est, 60)
            assert v.shape == (2, 9)
            assert np.all(np.diff(v[:, 3:6], axis=1) >= 0)
            np.testing.assert_allclose(v[:, :3].sum(axis=1), 1.0, atol=1e-12)
            assert np.all(v[:, 6:] > 0)

    def test_summary_matches_raw(self, table1_report):
        for est in ("mle", "hybrid", "bayes"):
            v = table1_report.values(est, 60)
            np.testing.assert_allclose(table1_report.sd(est, 60), v.std(axis=0, ddof=1), rtol=0, atol=1e-10)
            np.testing.assert_allclose(table1_report.mean(est, 60), v.mean(axis=0), rtol=0, atol=1e-10)

    def test_rerun_byte_identical(self, table1_report):
        assert run_table1(small_table1()).to_json() == table1_report.to_json()

    def test_workers_do_not_change_bytes(self, table1_report):
        assert run_table1(small_table1(), workers=2).to_json() == table1_report.to_json()

    def test_bayes_diagnostics_recorded(self, table1_report):
        rows = [r for r in table1_report.raw if r["estimator"] == "bayes"]
        assert all("acceptance" in r["diagnostics"] and "min_ess" in r["diagnostics"] for r in rows)

    def test_wrong_scenario(self):
        with pytest.raises(ValueError, match="scenario"):
            run_table1(scenario_config("consistency"))


class TestFailureAccounting:
    def _raw(self, statuses):
        return [
            {"n": 10, "rep": i, "estimator": "mle", "status": s, "values": [1.0 + i] if s == "ok" else []}
            for i, s in enumerate(statuses)
        ]

    def test_excluded_and_counted(self):
        summary, failures, flagged = _summarize(self._raw(["ok"] * 9 + ["failed"]), ["a"], ("mle",), (10,))
        assert failures["mle"]["10"] == 1
        assert summary["mle"]["10"]["a"]["count"] == 9
        assert not flagged

    def test_flag_above_ten_percent(self):
        _, failures, flagged = _summarize(self._raw(["ok"] * 8 + ["failed"] * 2), ["a"], ("mle",), (10,))
        assert failures["mle"]["10"] == 2 and flagged


class TestConsistency:
    def test_mle_beta_exact_when_max_below_one(self, consistency_report):
        for row in consistency_report.raw:
            if row["estimator"] in ("mle", "hybrid"):
                assert row["diagnostics"]["abs_error"][1] == 0.0

    def test_bayes_beta_error_tends_to_one(self, consistency_report):
        # all y lie in [0, 1] at beta0 = 1, so the posterior mean is 2(n+1)/(n+2) up to O(2^-n)
        med = [consistency_report.summary["bayes"][str(n)]["beta"]["median_abs_error"] for n in (50, 400)]
        np.testing.assert_allclose(med, [50 / 52, 400 / 402], rtol=1e-12)

    def test_hybrid_alpha_error_shrinks(self, consistency_report):
        med = [consistency_report.summary["hybrid"][str(n)]["alpha"]["median_abs_error"] for n in (50, 400)]
        assert med[1] <= med[0]

    def test_four_combinations(self, consistency_report):
        assert set(consistency_report.summary) == {"mle", "bayes", "hybrid", "reverse_hybrid"}


class TestCustom:
    def test_gauss2_mle_is_sample_moments(self):
        cfg = scenario_config("custom", model="gauss2", theta0=(1.0, 2.0), n=(40,), reps=3, seed=1, estimators=("mle",))
        rep = run_simulation(cfg)
        model = get_model("gauss2")
        assert rep.params == ["mu", "sigma2"]
        for row in rep.raw:
            x = model.sample(np.array([1.0, 2.0]), 40, np.random.default_rng(replication_seeds(1, 40, row["rep"])[0]))
            np.testing.assert_allclose(row["values"], [x.mean(), x.var()], rtol=1e-7)

    def test_requires_model(self):
        with pytest.raises(ValueError, match="model"):
            scenario_config("custom")


class TestExport:
    def test_json_round_trip(self, table1_report, tmp_path):
        path = export_report(table1_report, tmp_path / "r.json")
        back = load_report(path)
        assert back == table1_report
        assert back.to_json() == table1_report.to_json()

    def test_csv_header_and_rows(self, table1_report, tmp_path):
        path = export_report(table1_report, tmp_path / "r.csv")
        rows = list(csv.reader(io.StringIO(path.read_text())))
        assert tuple(rows[0]) == CSV_HEADER == ("estimator", "param", "mean", "sd", "n", "reps", "seed")
        assert len(rows) == 1 + 3 * 9
        first = rows[1]
        assert first[0] == "mle" and first[1] == "gamma1" and first[4] == "60" and first[6] == "7"
        np.testing.assert_allclose(float(first[2]), table1_report.mean("mle", 60)[0], rtol=0, atol=0)

    def test_unknown_format(self, table1_report, tmp_path):
        with pytest.raises(ValueError, match="format"):
            export_report(table1_report, tmp_path / "r.txt")

    def test_csv_function_matches_file(self, table1_report, tmp_path):
        path = export_report(table1_report, tmp_path / "out.dat", fmt="csv")
        assert path.read_text() == report_csv(table1_report)

    def test_report_from_dict_ignores_wall_time(self, table1_report):
        d = json.loads(table1_report.to_json())
        assert "wall_time" not in d
        assert SimulationReport.from_dict(d).to_json() == table1_report.to_json()

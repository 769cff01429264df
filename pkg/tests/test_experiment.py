import csv
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from bdmfilter.cli import main
from bdmfilter.experiment import (
    ConfigError,
    ExperimentConfig,
    emit_plots,
    lambda_tag,
    rmse,
    run_campaign,
    run_single,
)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRmse:
    def test_identical(self, rng):
        x = rng.standard_normal((20, 5))
        per, agg = rmse(x, x)
        assert agg == 0.0 and np.all(per == 0.0)

    def test_constant_offset(self, rng):
        x = rng.standard_normal((30, 5))
        y = x.copy()
        y[:, 2] += 3.0
        assert rmse(y, x, components=(0, 2))[1] == pytest.approx(3.0)
        assert rmse(y, x)[1] == pytest.approx(3.0)
        assert rmse(y, x, components=(1,))[1] == 0.0

    def test_hand_recomputation(self, rng):
        est, tru = rng.standard_normal((13, 5)), rng.standard_normal((13, 5))
        per, agg = rmse(est, tru, components=(0, 2))
        ref = []
        for e, t in zip(est.tolist(), tru.tolist()):
            ref.append(math.sqrt((e[0] - t[0]) ** 2 + (e[2] - t[2]) ** 2))
        assert_allclose(per, ref, rtol=1e-14)
        assert agg == pytest.approx(math.sqrt(sum(v * v for v in ref) / len(ref)), rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            rmse(np.zeros((3, 5)), np.zeros((4, 5)))


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert (c.runs, c.steps, c.zeta_t, c.eta1, c.eta2) == (100, 400, 1.0, 0.1, 1.75e-4)
        assert c.x0 == pytest.approx((0.0, 10.0, 0.0, -5.0, 3 * math.pi / 180))
        assert (c.sensors, c.sensor_spacing, c.r_var) == (4, 350.0, 4.0)
        assert (c.Lambda, c.sigma_o, c.onset, c.offset) == (90.0, 0.4, 100, 130)
        assert (c.tau, c.theta_prior, c.sigma_tilde_scale, c.sigma_breve_scale, c.sigma0) == (
            1e-4, 0.5, 1000.0, 0.1, 1e-3)
        assert (c.alpha, c.beta, c.kappa) == (1.0, 2.0, 0.0)
        assert (c.n_mc1, c.n_mc2, c.n_mc3, c.n_mc4) == (100, 100, 100, 100)
        assert c.lambdas == (0.2, 0.4, 0.6, 0.8)

    @pytest.mark.parametrize("field,value", [
        ("runs", 0), ("lambdas", (0.5, 1.5)), ("case", "sometimes"), ("filters", ("bdm", "kf")),
        ("tau", 0.0), ("theta_prior", 2.0), ("steps", 2.5), ("onset", 200),
    ])
    def test_invalid_fields_named(self, field, value):
        name = "lambda" if field == "lambdas" else field
        with pytest.raises(ConfigError, match=f"field '{name}'"):
            ExperimentConfig(**{field: value})

    def test_from_dict_lambda_alias_and_unknown(self):
        assert ExperimentConfig.from_dict({"lambda": [0.3]}).lambdas == (0.3,)
        with pytest.raises(ConfigError, match="unknown field"):
            ExperimentConfig.from_dict({"lamda": [0.3]})

    def test_json_error_location(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{\n  "runs": 3,\n  "steps": ,\n}\n')
        with pytest.raises(ConfigError, match="line 3, column"):
            ExperimentConfig.from_file(p)

    def test_file_overrides_and_round_trip(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"runs": 3, "lambda": [0.4], "eta1": 0.2}))
        c = ExperimentConfig.from_file(p, runs=5, steps=None)
        assert (c.runs, c.lambdas, c.eta1, c.steps) == (5, (0.4,), 0.2, 400)
        assert ExperimentConfig.from_dict(c.to_dict()) == c

    def test_lambda_tag(self):
        assert lambda_tag(0.8) == "0.8" and lambda_tag(1) == "1.0"


def small(tmp_path, **kw):
    base = dict(case="persistent", lambdas=(0.8,), runs=3, steps=40, seed=7, out=str(tmp_path))
    base.update(kw)
    return ExperimentConfig(**base)


class TestCampaign:
    def test_documented_files(self, tmp_path):
        cfg = ExperimentConfig(case="persistent", lambdas=(0.8,), runs=25, steps=60, seed=7, out=str(tmp_path))
        run_campaign(cfg)
        for name in ("rmse_box_bdm_0.8.csv", "rmse_box_ukf_0.8.csv", "timing.csv", "plot.gp",
                     "rmse_time_bdm_0.8.csv", "summary.csv", "config.json"):
            assert (tmp_path / name).exists(), name
        rows = read_csv(tmp_path / "rmse_box_bdm_0.8.csv")
        assert [int(r["run"]) for r in rows] == list(range(25))
        assert all(float(r["state_rmse"]) >= 0 for r in rows)
        assert len(read_csv(tmp_path / "rmse_time_ukf_0.8.csv")) == 60

    def test_single_run_box_is_degenerate(self, tmp_path):
        camp = run_campaign(small(tmp_path, runs=1))
        summary = read_csv(tmp_path / "summary.csv")
        for row in summary:
            r = camp.select(row["filter"], 0.8)[0]
            assert float(row["median_state_rmse"]) == r.state_rmse
            assert float(row["mean_state_rmse"]) == r.state_rmse

    def test_run_results(self, tmp_path):
        cfg = small(tmp_path)
        res = run_single(cfg, 0.8, 1)
        assert [r.filter for r in res] == ["bdm", "ukf"]
        for r in res:
            assert r.pos_series.shape == (40,) and np.all(r.pos_series >= 0)
            assert r.state_rmse >= r.pos_rmse >= 0
        assert res[1].vb_iters_max == 0 and res[0].vb_iters_max >= 1

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_campaign(small(a, lambdas=(0.4, 0.8), runs=4, workers=1, pcrb=True, n_mc1=20, n_mc2=20,
                           n_mc3=20, n_mc4=20))
        run_campaign(small(b, lambdas=(0.4, 0.8), runs=4, workers=2, pcrb=True, n_mc1=20, n_mc2=20,
                           n_mc3=20, n_mc4=20))
        csvs = sorted(p.name for p in a.glob("*.csv"))
        assert csvs == sorted(p.name for p in b.glob("*.csv"))
        for name in csvs:
            if name != "timing.csv":
                assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert (a / "plot.gp").read_bytes() == (b / "plot.gp").read_bytes()

    def test_filter_subset(self, tmp_path):
        run_campaign(small(tmp_path, filters=("ukf",)))
        assert not list(tmp_path.glob("rmse_box_bdm_*"))

    def test_persistent_bias_median_ordering(self, tmp_path):
        camp = run_campaign(ExperimentConfig(case="persistent", lambdas=(0.8,), runs=25, seed=7,
                                             out=str(tmp_path)), write=False)
        med = {f: np.median([r.state_rmse for r in camp.select(f, 0.8)]) for f in ("bdm", "ukf")}
        assert med["bdm"] < med["ukf"]

    @pytest.mark.xfail(strict=True, reason="without biases the variational loop still flags some nominal "
                                           "residuals, so the BDM RMSE distribution sits above the UKF's")
    def test_no_bias_distributions_overlap(self, tmp_path):
        camp = run_campaign(ExperimentConfig(case="none", lambdas=(0.0,), runs=25, seed=7,
                                             out=str(tmp_path)), write=False)
        bdm = [r.state_rmse for r in camp.select("bdm", 0.0)]
        ukf = [r.state_rmse for r in camp.select("ukf", 0.0)]
        assert stats.wilcoxon(bdm, ukf).pvalue >= 0.05


class TestPlots:
    def test_nothing_to_plot(self, tmp_path):
        with pytest.raises(ValueError, match="nothing to plot"):
            emit_plots(tmp_path, [], [0.8])
        with pytest.raises(ValueError, match="nothing to plot"):
            run_campaign(small(tmp_path, filters=()))

    def test_missing_inputs(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="rmse_box_bdm_0.8.csv"):
            emit_plots(tmp_path, ["bdm"], [0.8])

    def test_four_box_panels(self, tmp_path):
        cfg = small(tmp_path, lambdas=(0.2, 0.4, 0.6, 0.8), runs=2, steps=20, pcrb=True,
                    n_mc1=10, n_mc2=10, n_mc3=10, n_mc4=10)
        run_campaign(cfg)
        script = (tmp_path / "plot.gp").read_text()
        assert "set multiplot layout 1,4" in script
        for tag in ("0.2", "0.4", "0.6", "0.8"):
            assert f"'rmse_box_bdm_{tag}.csv'" in script
            assert f"'pcrb_{tag}.csv'" in script
        # every file referenced by the script exists
        import re
        for name in set(re.findall(r"'([\w.]+\.csv)'", script)):
            assert (tmp_path / name).exists(), name


class TestCli:
    def test_run_and_plot(self, tmp_path, capsys):
        out = tmp_path / "c"
        rc = main(["run", "--case", "persistent", "--lambda", "0.8", "--runs", "2", "--steps", "30",
                   "--seed", "7", "--out", str(out), "--filters", "bdm,ukf"])
        assert rc == 0
        assert (out / "rmse_box_bdm_0.8.csv").exists()
        (out / "plot.gp").unlink()
        assert main(["plot", "--out", str(out)]) == 0
        assert (out / "plot.gp").exists()
        assert "plot.gp" in capsys.readouterr().out

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"case": "momentary", "lambda": [0.4], "runs": 5, "steps": 20,
                                   "filters": ["ukf"]}))
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--runs", "2", "--out", str(out)]) == 0
        assert len(read_csv(out / "rmse_box_ukf_0.4.csv")) == 2
        saved = json.loads((out / "config.json").read_text())
        assert saved["case"] == "momentary" and saved["runs"] == 2

    def test_pcrb_command(self, tmp_path):
        out = tmp_path / "p"
        assert main(["pcrb", "--case", "momentary", "--lambda", "0.2", "0.8", "--steps", "20",
                     "--out", str(out)]) == 0
        rows = read_csv(out / "pcrb_0.8.csv")
        assert len(rows) == 21 and float(rows[0]["pos_bound"]) > 0

    def test_errors(self, tmp_path, capsys):
        assert main(["run", "--filters", "", "--runs", "1", "--out", str(tmp_path)]) == 2
        assert "nothing to plot" in capsys.readouterr().err
        assert main(["run", "--lambda", "1.5", "--out", str(tmp_path)]) == 2
        assert "field 'lambda'" in capsys.readouterr().err
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["run", "--config", str(bad)]) == 2
        assert "line 1" in capsys.readouterr().err
        with pytest.raises(SystemExit):
            main(["run", "--case", "sometimes"])

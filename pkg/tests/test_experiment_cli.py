import csv
import json

import numpy as np
import pytest
import yaml

from evomcmc import (ConfigError, ExperimentConfig, InvalidArgument, build_histogram,
                     compare_to_prediction, predict_limit, run_chain, run_suite)
from evomcmc import cli
from evomcmc.experiment import FrequencyHistogram, chain_parameters

LN6 = float(np.log(6.0))
SMALL = dict(n=[20], steps=200_000, burn_in=10_000, thinning=50, bins=20)


def small_config(**kw):
    return ExperimentConfig.from_mapping({**SMALL, **kw})


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.kernel == "inverse_fitness"
        assert (cfg.steps, cfg.burn_in, cfg.thinning, cfg.bins) == (10**7, 10**6, 100, 200)
        assert cfg.alpha == [0.3, 0.7]

    def test_lambda_alias_roundtrip(self):
        cfg = ExperimentConfig.from_mapping({"lambda": 0.5, "n": 50})
        assert cfg.lam == 0.5 and cfg.n == [50]
        d = cfg.to_dict()
        assert d["lambda"] == 0.5 and "lam" not in d
        assert ExperimentConfig.from_mapping(d) == cfg

    def test_from_file_with_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"lambda": 0.25, "n": [10, 20], "seed": 7}))
        cfg = ExperimentConfig.from_file(path, {"seed": 9})
        assert cfg.lam == 0.25 and cfg.n == [10, 20] and cfg.seed == 9

    @pytest.mark.parametrize("bad", [
        {"burn_in": 10, "steps": 10}, {"thinning": 0}, {"n": [0]}, {"bins": 1},
        {"prior_scaling": "other"}, {"lambda": 1.5}, {"lambda": -1, "prior_scaling": "fixed"},
        {"phi": [0.0, 1.0, 2.0]}, {"alpha": [1.0]}, {"allele": 3}, {"kernel": "nope"},
        {"steps": 2.5}, {"unknown_key": 1}, {"seed": -1},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(bad)

    def test_bad_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(path)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(tmp_path / "missing.yaml")

    def test_kernel_fields(self):
        cfg = ExperimentConfig.from_mapping({"kernel": "breed_many", "m_distribution": 2,
                                             "t_distribution": {"values": [0, 1],
                                                                "probs": [0.5, 0.5]}})
        kc = cfg.kernel_config
        assert kc.kind == "breed_many"
        np.testing.assert_allclose(cfg.t_distribution.probs, [0.5, 0.5])


class TestScalingWiring:
    def test_lambda0_scaled(self):
        for n in (1, 7, 1000):
            alpha, w = chain_parameters(small_config(**{"lambda": 0}), n)
            np.testing.assert_array_equal(alpha[0], n * np.array([0.3, 0.7]))
            np.testing.assert_allclose(w, [1.0, 1 / 6], rtol=1e-15)

    def test_lambda1_scaled(self):
        alpha, _ = chain_parameters(small_config(**{"lambda": 1}), 1000)
        np.testing.assert_array_equal(alpha[0], [0.3, 0.7])

    def test_fixed_prior(self):
        alpha, w = chain_parameters(small_config(**{"lambda": 0.5}, prior_scaling="fixed"), 400)
        np.testing.assert_array_equal(alpha[0], [0.3, 0.7])
        assert w[1] == pytest.approx(np.exp(-LN6 / 20), rel=1e-15)

    def test_hook_recorded_on_chain(self):
        rec = run_chain(small_config(**{"lambda": 0}, steps=1000, burn_in=0, thinning=10), 20,
                        np.random.default_rng(0))
        assert rec.alpha_used == [[6.0, 14.0]]
        assert rec.counts.shape == (100, 1, 2)
        assert np.all(rec.counts.sum(axis=2) == 20)
        np.testing.assert_array_equal(rec.record_steps[:2], [10, 20])


class TestBuildHistogram:
    def test_constant_half(self):
        h = build_histogram(np.full(50, 0.5), bins=10)
        assert h.masses[5] == 1.0 and h.masses.sum() == 1.0

    def test_alternating_ends(self):
        h = build_histogram(np.tile([0.0, 1.0], 25), bins=10)
        assert h.masses[0] == 0.5 and h.masses[-1] == 0.5
        assert h.masses[1:-1].sum() == 0.0

    def test_counts_input(self):
        counts = np.array([[3, 7], [5, 5], [10, 0]])
        h = build_histogram(counts, bins=4)
        np.testing.assert_array_equal(h.masses, [0.0, 1 / 3, 1 / 3, 1 / 3])
        assert h.n == 10 and h.mean == pytest.approx(0.6)
        h2 = build_histogram(counts, bins=4, allele=1)
        np.testing.assert_array_equal(h2.masses, [1 / 3, 0.0, 2 / 3, 0.0])

    def test_joint(self):
        counts = np.array([[[1, 3], [3, 1]], [[3, 1], [1, 3]]])
        h = build_histogram(counts, bins=4, locus=(0, 1))
        assert h.masses.shape == (4, 4)
        assert h.masses[1, 3] == 0.5 and h.masses[3, 1] == 0.5

    def test_mass_sums(self):
        rng = np.random.default_rng(0)
        for bins in (2, 7, 200):
            h = build_histogram(rng.uniform(size=1001), bins=bins)
            assert abs(h.masses.sum() - 1) < 1e-12

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            build_histogram(np.array([]), bins=10)
        with pytest.raises(InvalidArgument):
            build_histogram(np.array([0.5]), bins=1)
        with pytest.raises(InvalidArgument):
            build_histogram(np.array([[1, 2], [2, 2]]), bins=4)


class TestCompare:
    def _point_hist(self, mean, sd):
        return FrequencyHistogram(np.linspace(0, 1, 11), np.eye(10)[9], 10_000, 0, 0, 1000,
                                  mean, sd, sd / 30)

    def test_point_example(self):
        pred = predict_limit(dict(K=2, alpha=[0.3, 0.7], phi=[0, LN6], lam=0))
        rep = compare_to_prediction(self._point_hist(0.9003, 0.003), pred, 0.01)
        assert rep.passed
        assert rep.mean_error == pytest.approx(3e-4, abs=1e-12)
        assert rep.distance == pytest.approx(np.hypot(3e-4, 0.003))
        assert not compare_to_prediction(self._point_hist(0.92, 0.003), pred, 0.01).passed

    def test_dirichlet_vs_flat_run(self):
        cfg = ExperimentConfig.from_mapping(dict(
            K=2, alpha=[2, 2], phi=[0, 0], prior_scaling="fixed", n=[100], steps=10_000_000,
            burn_in=100_000, thinning=100, replicates=4, bins=10, seed=1, **{"lambda": 1}))
        run = run_suite(cfg)["per_run"][0]
        assert run["comparison"]["kind"] == "density"
        assert run["comparison"]["tv"] < 0.05

    def test_bimodal_product_run(self):
        cfg = ExperimentConfig.from_mapping(dict(
            K=2, L=2, alpha=[[0.25, 0.25], [0.25, 0.25]], phi=[4, 2, 2, 4], prior_scaling="scaled",
            n=[100], steps=4_000_000, burn_in=400_000, thinning=100, replicates=4, bins=20,
            seed=3, **{"lambda": 0.5}))
        comp = run_suite(cfg)["per_run"][0]["comparison"]
        lo, hi = (2 - np.sqrt(2)) / 4, (2 + np.sqrt(2)) / 4
        np.testing.assert_allclose(comp["atoms"], [[lo, hi], [hi, lo]], atol=1e-8)
        # both modes are populated and sit near their atoms
        assert min(comp["cell_mass"]) > 0.2
        np.testing.assert_allclose(comp["cell_mean"], comp["atoms"], atol=0.05)

    def test_shape_errors(self):
        pred = predict_limit(dict(K=2, alpha=[0.3, 0.7], phi=[0, LN6], lam=0))
        joint = build_histogram(np.array([[[1, 1], [1, 1]]]), bins=4, locus=(0, 1))
        with pytest.raises(InvalidArgument):
            compare_to_prediction(joint, pred)
        mix = predict_limit(dict(K=2, L=2, alpha=[0.25, 0.25], phi=[4, 2, 2, 4], lam=0.5))
        with pytest.raises(InvalidArgument):
            compare_to_prediction(build_histogram(np.full(4, 0.5), bins=4), mix)


class TestRunSuite:
    def test_flat_fitness_mean(self):
        cfg = small_config(phi=[0, 0], alpha=[0.3, 0.7], steps=2_000_000, thinning=20, seed=11)
        run = run_suite(cfg)["per_run"][0]
        assert abs(run["mean"] - 0.3) < 4 * run["stderr"]

    def test_summary_and_files(self, tmp_path):
        cfg = small_config(n=[10, 20], trajectory=True, replicates=2)
        s = run_suite(cfg, out_dir=str(tmp_path))
        assert set(s) >= {"config_echo", "prediction", "per_run", "seed", "version"}
        assert [r["n"] for r in s["per_run"]] == [10, 20]
        assert all({"n", "mean", "sd", "distance", "pass"} <= set(r) for r in s["per_run"])
        doc = json.loads((tmp_path / "summary.json").read_text())
        assert doc["budget"]["thinning"] == 50
        rows = list(csv.reader(open(tmp_path / "hist_n10.csv", encoding="utf-8")))
        assert rows[0] == ["bin_left", "bin_right", "mass"] and len(rows) == 21
        assert abs(sum(float(r[2]) for r in rows[1:]) - 1) < 1e-12
        # floats carry 17 significant digits, so they read back exactly
        h = build_histogram(np.zeros(3) + 0.1, bins=20)
        h.to_csv(tmp_path / "h.csv")
        back = FrequencyHistogram.from_csv(tmp_path / "h.csv")
        np.testing.assert_array_equal(back.edges, h.edges)
        traj = list(csv.reader(open(tmp_path / "traj_n20_r2.csv", encoding="utf-8")))
        assert traj[0] == ["step", "n_1", "n_2"]
        assert int(traj[1][0]) == 10_050 and int(traj[1][1]) + int(traj[1][2]) == 20

    def test_determinism_across_workers(self, tmp_path):
        cfg = small_config(n=[10, 15, 20], replicates=2, steps=100_000, seed=123)
        outs = []
        for workers in (1, 3):
            d = tmp_path / f"w{workers}"
            s = run_suite(cfg, workers=workers, out_dir=str(d))
            outs.append((s, {p.name: p.read_bytes() for p in d.glob("hist_*.csv")}))
        assert outs[0][1] == outs[1][1] and len(outs[0][1]) == 3
        for a, b in zip(outs[0][0]["per_run"], outs[1][0]["per_run"]):
            assert a["mean"] == b["mean"] and a["distance"] == b["distance"]

    def test_seed_changes_output(self):
        a = run_suite(small_config(seed=1))["per_run"][0]["mean"]
        b = run_suite(small_config(seed=2))["per_run"][0]["mean"]
        assert a != b


class TestCli:
    def test_predict(self, capsys):
        code = cli.main(["predict", "--lambda", "0", "--n", "[100]"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        np.testing.assert_allclose(doc["r_star"], [0.9, 0.1], atol=1e-12)

    def test_run_with_file(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({**SMALL, "lambda": 0, "threshold": 1.0}))
        code = cli.main(["run", str(path), "--out_dir", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "summary.json").exists()

    def test_comparison_failure(self, capsys):
        code = cli.main(["run", "--lambda", "0", "--n", "[20]", "--steps", "20000",
                         "--burn_in", "1000", "--threshold", "1e-9"])
        assert code == 2

    @pytest.mark.parametrize("argv", [["run", "--thinning", "0"], ["predict", "--lambda", "[oops"],
                                      ["run", "/nonexistent/config.yaml"], ["bogus"]])
    def test_config_errors(self, argv, capsys):
        assert cli.main(argv) == 1

    def test_internal_error(self, monkeypatch, capsys):
        def boom(*a, **k):
            raise RuntimeError("boom")
        monkeypatch.setattr(cli, "run_suite", boom)
        assert cli.main(["run", "--n", "[5]"]) == 3
        assert "boom" in capsys.readouterr().err

    def test_oracle(self, capsys):
        code = cli.main(["oracle", "--n", "[3]", "--alpha", "[1, 1]", "--phi", f"[0, {np.log(2)}]",
                         "--kernel", "single_tournament", "--prior_scaling", "fixed"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        entry = doc["oracle"][0]
        probs = [s["probability"] for s in entry["stationary"]]
        np.testing.assert_allclose(probs, np.array([8, 4, 2, 1]) / 15, atol=1e-14)
        assert entry["full_matrix"]["detailed_balance_violation"] < 1e-12

    def test_compare_roundtrip(self, tmp_path, capsys):
        assert cli.main(["predict", "--lambda", "0", "--out_dir", str(tmp_path)]) == 0
        h = build_histogram(np.full(100, 0.9), bins=200)
        h.to_csv(tmp_path / "h.csv")
        pred = str(tmp_path / "prediction.json")
        assert cli.main(["compare", str(tmp_path / "h.csv"), pred, "--threshold", "0.01"]) == 0
        build_histogram(np.full(100, 0.5), bins=200).to_csv(tmp_path / "bad.csv")
        assert cli.main(["compare", str(tmp_path / "bad.csv"), pred]) == 2

    def test_prediction_json_roundtrip(self):
        for cfg in (dict(lam=0), dict(lam=0.5), dict(lam=1.0, prior_scaling="fixed")):
            pred = predict_limit(dict(K=2, alpha=[0.3, 0.7], phi=[0, LN6], **cfg))
            back = cli.prediction_from_json(json.loads(json.dumps(pred.to_json())))
            assert back.kind == pred.kind
            assert back.frequency_limit() == pytest.approx(pred.frequency_limit(), abs=1e-12) \
                if pred.kind == "point" else back.density.z == pytest.approx(pred.density.z)

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from beamcfo.harness import (
    ExperimentConfig,
    load_config,
    paper_preset,
    run_analytic,
    run_bounds,
    run_mse_sweep,
    run_ser_sweep,
    save_config,
    trial_rng,
    write_manifest,
)

FAST = dict(M=16, K=2, N=16, Ncp=8, L=4, P=8, trials=4, snr_db=(10.0, 20.0), crb_draws=3)


class TestConfig:
    def test_round_trip_lossless(self, tmp_path):
        cfg = ExperimentConfig(
            **FAST, fd=0.3, xi_min=-0.05, xi_max=0.07, seed=42, estimator="plain"
        )
        path = tmp_path / "exp.ini"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        path = tmp_path / "exp.ini"
        save_config(cfg, path)
        text = path.read_text().replace("[run]", "[run]\nbogus = 1")
        path.write_text(text)
        with pytest.raises(ValueError, match="bogus"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[nonsense]\na = 1\n")
        with pytest.raises(ValueError, match="nonsense"):
            load_config(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(trials=0)
        with pytest.raises(ValueError):
            ExperimentConfig(estimator="magic")
        with pytest.raises(ValueError):
            ExperimentConfig(xi_min=0.2, xi_max=0.1)

    def test_paper_preset(self):
        cfg = paper_preset()
        assert (cfg.M, cfg.K, cfg.d_tilde) == (64, 4, 0.45)
        assert (cfg.N, cfg.Ncp, cfg.Nb, cfg.L) == (64, 16, 4, 8)
        assert cfg.fd == 0.4 and (cfg.xi_min, cfg.xi_max) == (-0.1, 0.1)


class TestRngStreams:
    def test_counter_streams_independent_of_order(self):
        a = trial_rng(7, 3, 11).standard_normal(4)
        _ = trial_rng(7, 0, 0).standard_normal(100)
        b = trial_rng(7, 3, 11).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams(self):
        a = trial_rng(7, 0, 1).standard_normal(4)
        b = trial_rng(7, 1, 0).standard_normal(4)
        assert not np.allclose(a, b)


class TestMseSweep:
    def test_noiseless_single_trial_consistency(self):
        # array large enough that the scattering-leakage floor sits below 1e-6
        cfg = ExperimentConfig(
            M=256,
            K=1,
            N=32,
            Ncp=8,
            L=4,
            P=16,
            fd=0.1,
            trials=1,
            snr_db=(300.0,),
            estimator="plain",
        )
        table = run_mse_sweep(cfg)
        mse_fd = [r for r in table.rows if r.metric == "mse_fd"][0]
        assert mse_fd.value < 1e-6

    def test_seeded_reproducibility(self):
        cfg = ExperimentConfig(**FAST)
        assert run_mse_sweep(cfg).to_csv() == run_mse_sweep(cfg).to_csv()

    def test_worker_count_invariance(self):
        cfg1 = ExperimentConfig(**FAST, workers=1)
        cfg2 = ExperimentConfig(**FAST, workers=2)
        assert run_mse_sweep(cfg1).to_csv() == run_mse_sweep(cfg2).to_csv()

    def test_trial_accounting(self):
        cfg = ExperimentConfig(**FAST)
        table = run_mse_sweep(cfg)
        for snr in cfg.snr_db:
            for est in ("plain", "calibrated"):
                rows = [
                    r for r in table.rows if r.snr_db == snr and r.estimator == est
                ]
                fails = [r for r in rows if r.metric == "failures"][0]
                succ = [r for r in rows if r.metric == "mse_fd"][0]
                assert succ.n + int(fails.value) == cfg.trials

    def test_floor_separation_partly_calibrated(self):
        # mismatch floor visible at high SNR: plain estimator stuck well above
        cfg = ExperimentConfig(
            M=32, K=4, N=32, Ncp=8, L=4, P=16, trials=12, snr_db=(30.0,), fd=0.4
        )
        table = run_mse_sweep(cfg)
        plain = [r for r in table.rows if r.metric == "mse_fd" and r.estimator == "plain"][0]
        cal = [r for r in table.rows if r.metric == "mse_fd" and r.estimator == "calibrated"][0]
        assert plain.value > cal.value


class TestSerSweep:
    def test_requires_data_blocks(self):
        with pytest.raises(ValueError):
            run_ser_sweep(ExperimentConfig(**FAST, Nb=1))

    def test_ideal_rows_and_reproducibility(self):
        cfg = ExperimentConfig(**FAST, Nb=2, estimator="calibrated", seed=3)
        t1 = run_ser_sweep(cfg)
        labels = {r.estimator for r in t1.rows}
        assert labels == {"calibrated", "ideal-calibrated"}
        assert t1.to_csv() == run_ser_sweep(cfg).to_csv()

    def test_noiseless_ideal_zero_ser(self):
        cfg = ExperimentConfig(
            M=32,
            K=1,
            N=32,
            Ncp=8,
            L=4,
            P=8,
            Nb=2,
            fd=0.2,
            trials=2,
            snr_db=(300.0,),
            estimator="plain",
        )
        table = run_ser_sweep(cfg)
        ideal = [r for r in table.rows if r.estimator == "ideal-plain"][0]
        assert ideal.value == 0.0


class TestBounds:
    def test_crb_monotone_in_snr(self):
        cfg = ExperimentConfig(
            M=8, K=2, N=8, Ncp=4, L=2, P=8, trials=1, snr_db=(5.0, 15.0, 25.0), crb_draws=4
        )
        table = run_bounds(cfg)
        vals = [r.value for r in table.sorted_rows() if r.metric == "crb_fd"]
        assert vals[0] > vals[1] > vals[2]

    def test_asymptote_rows_match_formula(self):
        from beamcfo import asymptotic_mse

        cfg = ExperimentConfig(M=8, K=1, N=8, Ncp=4, L=2, P=8, trials=1, snr_db=(10.0,), crb_draws=2)
        table = run_analytic(cfg)
        row = [r for r in table.rows if r.metric == "asymptotic_mse_fd"][0]
        assert row.value == pytest.approx(asymptotic_mse(8, 8, 0.1)[0])


class TestCli:
    def _run(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "beamcfo.cli", *args],
            capture_output=True,
            text=True,
            timeout=600,
        )

    def test_zeta_command(self, tmp_path):
        out = self._run("zeta", "--out", str(tmp_path))
        assert out.returncode == 0, out.stderr
        csv = (tmp_path / "zeta.csv").read_text()
        assert csv.startswith("route,constant,k,")
        manifest = json.loads((tmp_path / "zeta_manifest.json").read_text())
        assert manifest["command"] == "zeta"
        assert len(manifest["config_sha256"]) == 64

    def test_mse_byte_identical_across_workers(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        ini = tmp_path / "exp.ini"
        save_config(cfg, ini)
        outs = []
        for workers, sub in ((1, "a"), (2, "b")):
            d = tmp_path / sub
            out = self._run(
                "mse", "--config", str(ini), "--out", str(d), "--workers", str(workers)
            )
            assert out.returncode == 0, out.stderr
            outs.append((d / "mse.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_paper_flag_conflicts_with_config(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        ini = tmp_path / "exp.ini"
        save_config(cfg, ini)
        out = self._run("mse", "--config", str(ini), "--paper", "--out", str(tmp_path))
        assert out.returncode != 0

    def test_manifest_records_seed_override(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        ini = tmp_path / "exp.ini"
        save_config(cfg, ini)
        out = self._run("mse", "--config", str(ini), "--seed", "99", "--out", str(tmp_path))
        assert out.returncode == 0, out.stderr
        manifest = json.loads((tmp_path / "mse_manifest.json").read_text())
        assert manifest["seed"] == 99
        assert manifest["config"]["seed"] == 99

"""Configuration, orchestration, CSV and CLI tests."""

import numpy as np
import pytest

from sparselink.config import ConfigError, ExperimentConfig, parse_config
from sparselink.harness import (
    run_ber_sweep,
    run_link_trial,
    run_nmse_sweep,
    run_precoder_design,
    run_sparsity_report,
)


def desk_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.snr_db = (20.0,)
    cfg.trials = 2
    cfg.payload_symbols = 2
    cfg.max_iters = 20  # unit tests don't need a deeply converged precoder
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


class TestConfigParsing:
    def test_round_trip_of_documented_keys(self):
        text = """
        # comment
        channel.n_tx = 8
        channel.n_subcarriers = 512
        precoder.kind = common
        link.snr_db = 5, 10, 15
        run.trials = 7
        run.estimators = ls, antialias
        """
        cfg = parse_config(text)
        assert cfg.n_tx == 8
        assert cfg.n_subcarriers == 512
        assert cfg.precoder_kind == "common"
        assert cfg.snr_db == (5.0, 10.0, 15.0)
        assert cfg.trials == 7
        assert cfg.estimators == ("ls", "antialias")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("run.bogus = 1")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="expected"):
            parse_config("just some words")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("run.trials = many")


class TestValidation:
    def test_stage_labelled_messages(self):
        cases = [
            ({"n_streams": 9}, "precoder"),
            ({"bits_per_symbol": 7}, "link"),
            ({"snr_db": ()}, "link"),
            ({"trials": 0}, "run"),
            ({"seed": -1}, "run"),
            ({"srs_streams_per_symbol": 7}, "run"),
            ({"csit_estimator": "psychic"}, "run"),
            ({"max_delay_spread": 500}, "channel"),
        ]
        for overrides, stage in cases:
            cfg = desk_config(**overrides)
            with pytest.raises(ConfigError, match=f"^{stage}"):
                cfg.validate()

    def test_sparse_dmrs_identifiability(self):
        # svd precoder has full-width taps: comb DMRS cannot identify it
        cfg = desk_config(precoder_kind="svd_per_subcarrier", csir_mode="sparse_fdm")
        with pytest.raises(ConfigError, match="sparse DMRS"):
            cfg.validate()
        cfg.csir_mode = "full_dmrs_lmmse"
        cfg.validate()

    def test_srs_identifiability(self):
        cfg = desk_config(max_delay_spread=40)  # 40 * 8 > 256
        with pytest.raises(ConfigError, match="SRS"):
            cfg.validate()
        cfg.csit_estimator = "perfect"
        cfg.csir_mode = "full_dmrs_lmmse"  # comb DMRS is equally out of reach
        cfg.validate()


class TestLinkTrial:
    def test_genie_mode_is_error_free(self):
        cfg = desk_config(
            csit_estimator="perfect", csir_mode="perfect",
            snr_db=(40.0,), bits_per_symbol=4, payload_symbols=8,
        )
        cfg.validate()
        res = run_link_trial(cfg, 40.0, 0)
        assert res.ber == 0.0
        assert res.nmse_csit == 0.0 and res.nmse_csir == 0.0

    def test_dense_constellation_fails_at_low_snr(self):
        cfg = desk_config(bits_per_symbol=12, snr_db=(0.0,), payload_symbols=2)
        cfg.validate()
        res = run_link_trial(cfg, 0.0, 0)
        assert res.ber > 0.1

    def test_identical_seeds_identical_results(self):
        cfg = desk_config()
        cfg.validate()
        a = run_link_trial(cfg, 20.0, 1)
        b = run_link_trial(cfg, 20.0, 1)
        for field in ("ber", "nmse_csit", "nmse_csir", "evm", "cross_entropy"):
            assert getattr(a, field) == getattr(b, field)

    def test_overhead_bookkeeping(self):
        cfg = desk_config()
        cfg.validate()
        res = run_link_trial(cfg, 20.0, 0)
        d_eff = cfg.max_delay_spread + cfg.d_v - 1
        assert res.m_bar == -(-cfg.n_streams * d_eff // cfg.n_subcarriers)
        assert res.dmrs_symbols_conventional == cfg.n_streams
        assert res.dmrs_symbols == 1

    def test_debug_intermediates(self):
        cfg = desk_config()
        cfg.validate()
        _, inter = run_link_trial(cfg, 20.0, 0, collect=True)
        for key in ("channel", "csit_estimate", "precoder_delay", "effective",
                    "csir_estimate", "decorrelators", "bits", "stream_estimates", "bit_probs"):
            assert key in inter


class TestBerSweep:
    def test_row_accounting_and_aggregates(self, tmp_path):
        cfg = desk_config(snr_db=(10.0, 20.0), trials=2, out=str(tmp_path / "ber.csv"))
        rows = run_ber_sweep(cfg)
        assert len(rows) == 2 * 2 + 2
        for snr in (10.0, 20.0):
            trial_bers = [r[4] for r in rows if r[0] == "trial" and r[1] == snr]
            agg = [r[4] for r in rows if r[0] == "aggregate" and r[1] == snr][0]
            assert abs(agg - np.mean(trial_bers)) <= 1e-15

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = desk_config(threads=1, out=str(out1))
        run_ber_sweep(cfg)
        cfg = desk_config(threads=4, out=str(out2))
        run_ber_sweep(cfg)
        assert out1.read_bytes() == out2.read_bytes()

    def test_partial_flush_on_trial_failure(self, tmp_path, monkeypatch):
        import sparselink.harness as harness_mod

        real = harness_mod.run_link_trial

        def flaky(cfg, snr, trial, collect=False):
            if trial == 1:
                raise RuntimeError("synthetic failure")
            return real(cfg, snr, trial, collect)

        monkeypatch.setattr(harness_mod, "run_link_trial", flaky)
        out = tmp_path / "partial.csv"
        cfg = desk_config(trials=3, out=str(out))
        with pytest.raises(harness_mod.StageError, match="partial results flushed"):
            harness_mod.run_ber_sweep(cfg)
        lines = out.read_text().splitlines()
        assert sum(line.startswith("error") for line in lines) == 1
        assert sum(line.startswith("trial") for line in lines) == 2
        assert sum(line.startswith("aggregate") for line in lines) == 1

    def test_ber_decreases_with_snr(self, tmp_path):
        # fixed pipeline, paired noise across SNR points via per-trial streams
        cfg = desk_config(
            snr_db=(9.0, 15.0, 21.0), trials=20, bits_per_symbol=8,
            payload_symbols=2, out=str(tmp_path / "mono.csv"),
        )
        rows = run_ber_sweep(cfg)
        aggs = {r[1]: r[4] for r in rows if r[0] == "aggregate"}
        assert aggs[15.0] <= aggs[9.0]
        assert aggs[21.0] <= aggs[15.0]


class TestNmseSweep:
    def test_schema_and_noiseless_exactness(self, tmp_path):
        out = tmp_path / "nmse.csv"
        cfg = desk_config(
            snr_db=(300.0, 10.0), trials=3, estimators=("antialias", "ls"),
            out=str(out),
        )
        rows = run_nmse_sweep(cfg)
        header = out.read_text().splitlines()[0]
        assert header == "snr_db,estimator,nmse_mean,nmse_std,trials,seed"
        near_noiseless = [r for r in rows if r[0] == 300.0 and r[1] == "antialias"][0]
        assert near_noiseless[2] <= 1e-18
        for row in rows:
            assert row[4] == 3 and row[5] == cfg.seed

    def test_estimator_ordering_at_10db(self, tmp_path):
        cfg = desk_config(
            profile="exponential", decay_taps=18.0, rays_per_cluster=(8,),
            snr_db=(10.0,), trials=100,
            estimators=("ls", "antialias", "omp", "gamsse"),
            out=str(tmp_path / "nmse.csv"),
        )
        rows = run_nmse_sweep(cfg)
        means = {r[1]: r[2] for r in rows}
        assert means["gamsse"] <= means["antialias"] <= means["omp"]
        assert means["omp"] <= 1.05 * means["ls"]


class TestSparsityReport:
    def test_common_precoder_keeps_channel_support(self, tmp_path):
        cfg = desk_config(precoder_kind="common", out=str(tmp_path / "taps.csv"))
        _, window_rows, occupancy = run_sparsity_report(cfg)
        by_window = {r[0]: r for r in window_rows}
        d = cfg.max_delay_spread
        assert by_window[d][3] <= 1e-10  # effective channel fits in D taps
        assert "SRS schedule" in occupancy

    def test_svd_precoder_leaks(self, tmp_path):
        cfg = desk_config(
            precoder_kind="svd_per_subcarrier", csir_mode="full_dmrs_lmmse",
            profile="exponential", decay_taps=18.0, rays_per_cluster=(8,),
            sparsity_windows=(18,), out=str(tmp_path / "taps.csv"),
        )
        _, window_rows, _ = run_sparsity_report(cfg)
        assert window_rows[0][3] > 0.05

    def test_bcd_precoder_fits_effective_window(self, tmp_path):
        cfg = desk_config(out=str(tmp_path / "taps.csv"))
        _, window_rows, _ = run_sparsity_report(cfg)
        d_eff = cfg.max_delay_spread + cfg.d_v - 1
        by_window = {r[0]: r for r in window_rows}
        assert by_window[d_eff][3] <= 1e-10


class TestPrecoderDesign:
    def test_writes_taps_and_trace(self, tmp_path):
        out = tmp_path / "design.csv"
        cfg = desk_config(out=str(out), max_iters=5)
        prec, trace = run_precoder_design(cfg)
        assert out.exists()
        assert (tmp_path / "design.csv.trace.csv").exists()
        assert trace.n_iters >= 1
        assert np.all(np.diff(trace.objective) <= 1e-9 * np.abs(trace.objective[:-1]))
        from sparselink.channel import load_channel_csv

        kind, blocks = load_channel_csv(out)
        assert kind == "precoder_delay"
        assert np.array_equal(blocks, prec.blocks)


class TestCli:
    def test_ber_sweep_and_exit_codes(self, tmp_path):
        from sparselink.cli import main

        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text(
            "link.snr_db = 20\nrun.trials = 1\nlink.payload_symbols = 1\n"
            f"run.out = {tmp_path / 'out.csv'}\n"
        )
        assert main(["ber-sweep", str(cfg_file)]) == 0
        assert (tmp_path / "out.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("run.trials = 0\n")
        from sparselink.cli import main

        assert main(["ber-sweep", str(cfg_file)]) == 2
        assert main(["ber-sweep", str(tmp_path / "missing.cfg")]) == 2

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        import sparselink.harness as harness_mod
        from sparselink.cli import main

        def boom(cfg, snr, trial, collect=False):
            raise harness_mod.StageError("precoder", RuntimeError("synthetic"))

        monkeypatch.setattr(harness_mod, "run_link_trial", boom)
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("link.snr_db = 20\nrun.trials = 1\n"
                            f"run.out = {tmp_path / 'out.csv'}\n")
        assert main(["ber-sweep", str(cfg_file)]) == 3

    def test_overrides_and_other_commands(self, tmp_path):
        from sparselink.cli import main

        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("link.snr_db = 10\nrun.trials = 2\n")
        out = tmp_path / "n.csv"
        code = main(["nmse-sweep", str(cfg_file), "--trials", "1", "--out", str(out), "--seed", "5"])
        assert code == 0
        text = out.read_text()
        assert ",1," in text and text.strip().endswith(",5")
        assert main(["sparsity-report", str(cfg_file), "--out", str(tmp_path / "s.csv")]) == 0
        assert main(["precoder-design", str(cfg_file), "--out", str(tmp_path / "p.csv")]) == 0

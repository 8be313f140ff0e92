"""Seeded Monte-Carlo orchestration: link trials, sweeps and CSV emission.

Reproducibility contract: every trial owns a counter-based NumPy Philox
bit generator keyed by ``base_seed + trial_index`` and consumes it in a
fixed stage order (channel, SRS noise, DMRS noise, payload bits, payload
noise), so results are identical for any thread count and any execution
order.  CSVs are RFC-4180 style with floats printed as 17-significant-
digit scientific notation; wall-clock time is kept on the in-memory
result objects only so output files stay byte-reproducible.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import chanest, link, pilot, precoder as prec_mod
from .channel import (
    FreqChannel,
    delay_support_report,
    effective_channel,
    freq_to_delay,
    gen_clustered_channel,
    per_tap_variance,
)
from .config import ExperimentConfig
from .precoder import effective_delay_spread


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage '{stage}': {err}")
        self.stage = stage


@dataclass
class LinkResult:
    snr_db: float
    trial: int
    seed: int
    ber: float
    nmse_csit: float
    nmse_csir: float
    evm: float
    cross_entropy: float
    srs_symbols: int
    dmrs_symbols: int
    dmrs_symbols_conventional: int
    m_bar: int
    wallclock: float


STAGE_CHANNEL, STAGE_SRS, STAGE_DMRS, STAGE_BITS, STAGE_PAYLOAD = range(5)


def trial_rng(base_seed: int, trial: int, stage: int = 0) -> np.random.Generator:
    """Philox4x64 stream for one (trial, stage) pair.

    Streams are separated by placing each stage 2^128 apart on the Philox
    counter, so a stage's draws do not depend on how much randomness the
    other stages consumed (e.g. the payload bits of a trial are the same
    whether CSIR came from dense or comb pilots).
    """
    bitgen = np.random.Philox(key=np.uint64(base_seed + trial), counter=stage << 128)
    return np.random.Generator(bitgen)


def _design_precoder(cfg: ExperimentConfig, h_hat: FreqChannel, noise_var: float):
    kind = cfg.precoder_kind
    if kind == "svd_per_subcarrier":
        return prec_mod.svd_per_subcarrier(h_hat, cfg.n_streams, cfg.power)
    if kind == "common":
        return prec_mod.common_covariance_precoder(h_hat, cfg.n_streams, cfg.power)
    if kind == "evm_bcd":
        p, _, _ = prec_mod.evm_bcd_precoder(
            h_hat, cfg.n_streams, cfg.d_v, cfg.power, noise_var,
            max_iters=cfg.max_iters, tol=cfg.tol,
        )
        return p
    if kind == "evm_bcd_unrolled":
        p, _, _ = prec_mod.evm_bcd_unrolled(
            h_hat, cfg.n_streams, cfg.d_v, cfg.power, noise_var,
            n_iters=cfg.unrolled_iters, multipliers=cfg.multipliers or None,
        )
        return p
    raise ValueError(f"unknown precoder kind {kind!r}")


def _estimator_config(cfg: ExperimentConfig, kind: str, window: int, noise_var: float,
                      n_obs: int, streams_per_symbol: int):
    reg = cfg.lasso_reg
    if reg is None:
        # half the expected group-correlation of pure noise with one comb atom
        reg = 0.5 * np.sqrt(noise_var * n_obs / streams_per_symbol)
    return chanest.EstimatorConfig(
        kind=kind,
        window=window,
        omp_residual_tol=cfg.omp_residual_tol,
        lasso_reg=reg,
    )


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as err:  # noqa: BLE001 - re-raised with stage context
        raise StageError(name, err) from err


def run_link_trial(cfg: ExperimentConfig, snr_db: float, trial: int, collect: bool = False):
    """One full SRS -> CSIT -> precoder -> DMRS -> CSIR -> payload -> BER pass.

    Returns a :class:`LinkResult`, or ``(LinkResult, intermediates)`` when
    ``collect`` is true.
    """
    t0 = time.perf_counter()
    seed = cfg.seed + trial
    noise_var = cfg.noise_var_at(snr_db)
    params = cfg.channel_params()
    inter: dict = {}

    h = _stage("channel", gen_clustered_channel, params, trial_rng(cfg.seed, trial, STAGE_CHANNEL))

    if cfg.csit_estimator == "perfect":
        h_hat, nmse_csit = h, 0.0
        srs_symbols = 0
    else:
        sched = pilot.build_schedule(cfg.n_subcarriers, cfg.srs_streams_per_symbol, cfg.n_rx, "dft")
        obs = _stage(
            "srs", pilot.observe_pilots, h, sched, cfg.uplink_noise_var(),
            trial_rng(cfg.seed, trial, STAGE_SRS),
        )
        est_cfg = _estimator_config(cfg, cfg.csit_estimator, cfg.max_delay_spread, obs.noise_var,
                                    cfg.n_tx, cfg.srs_streams_per_symbol)
        tap_var = per_tap_variance(params, cfg.max_delay_spread)
        est = _stage("csit", chanest.estimate, obs, est_cfg, tap_var)
        h_hat, nmse_csit = est.freq, chanest.nmse(est.freq, h)
        srs_symbols = sched.n_symbols

    prec = _stage("precoder", _design_precoder, cfg, h_hat, noise_var)
    h_e = effective_channel(h, prec)

    dmrs_rng = trial_rng(cfg.seed, trial, STAGE_DMRS)
    if cfg.csir_mode == "perfect":
        h_e_hat, nmse_csir = h_e, 0.0
        dmrs_symbols = 0
    elif cfg.csir_mode == "full_dmrs_lmmse":
        r_p = pilot.dft_cover(cfg.n_streams)
        y_p = _stage("dmrs", pilot.observe_dmrs_full, h_e, r_p, noise_var, dmrs_rng)
        h_e_hat = _stage("csir", chanest.lmmse_dmrs_full, y_p, r_p, noise_var)
        nmse_csir = chanest.nmse(h_e_hat, h_e)
        dmrs_symbols = cfg.n_streams
    else:
        sched = pilot.build_schedule(cfg.n_subcarriers, cfg.dmrs_streams_per_symbol, cfg.n_streams, "dft")
        obs = _stage("dmrs", pilot.observe_pilots, h_e.transposed(), sched, noise_var, dmrs_rng)
        est_cfg = _estimator_config(cfg, cfg.csir_estimator, cfg.csir_window(), noise_var,
                                    cfg.n_rx, cfg.dmrs_streams_per_symbol)
        tap_var_e = None
        if cfg.csir_estimator == "gamsse":
            x_e = freq_to_delay(h_e.transposed(), est_cfg.window)
            tap_var_e = np.mean(np.abs(x_e.data) ** 2, axis=(1, 2))
        est = _stage("csir", chanest.estimate, obs, est_cfg, tap_var_e)
        h_e_hat = est.freq.transposed()
        nmse_csir = chanest.nmse(h_e_hat, h_e)
        dmrs_symbols = sched.n_symbols

    bits = link.random_bits(
        trial_rng(cfg.seed, trial, STAGE_BITS),
        (cfg.payload_symbols, cfg.n_subcarriers, cfg.n_streams, cfg.bits_per_symbol),
    )
    y_d = _stage(
        "payload", link.transmit_payload, h, prec, bits, noise_var,
        trial_rng(cfg.seed, trial, STAGE_PAYLOAD),
    )
    r_hat, u = _stage("equalise", link.lmmse_decorrelate, h_e_hat, noise_var, y_d)
    v_post = np.maximum(link.post_eq_noise_var(u, h_e_hat, noise_var), 1e-30)
    probs = _stage("demap", link.soft_demap, r_hat, v_post[None, :, :], cfg.bits_per_symbol)
    decided = link.hard_decision(probs)

    r_ref = link.qam_modulate(bits)
    evm = float(np.sqrt(np.mean(np.abs(r_hat - r_ref) ** 2) / np.mean(np.abs(r_ref) ** 2)))
    d_eff = min(effective_delay_spread(cfg.max_delay_spread, cfg.precoder_taps()), cfg.n_subcarriers)
    m_bar = -(-cfg.n_streams * d_eff // cfg.n_subcarriers)

    result = LinkResult(
        snr_db=snr_db,
        trial=trial,
        seed=seed,
        ber=link.ber(bits, decided),
        nmse_csit=nmse_csit,
        nmse_csir=nmse_csir,
        evm=evm,
        cross_entropy=link.cross_entropy(bits, probs),
        srs_symbols=srs_symbols,
        dmrs_symbols=dmrs_symbols,
        dmrs_symbols_conventional=cfg.n_streams,
        m_bar=m_bar,
        wallclock=time.perf_counter() - t0,
    )
    if collect:
        inter.update(
            channel=h.data, csit_estimate=h_hat.data, precoder_delay=prec.w_delay,
            effective=h_e.data, csir_estimate=np.asarray(h_e_hat.data),
            decorrelators=u, bits=bits, stream_estimates=r_hat, bit_probs=probs,
        )
        return result, inter
    return result


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17e}"
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _parallel_map(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


BER_HEADER = (
    "row", "snr_db", "trial", "seed", "ber", "nmse_csit", "nmse_csir", "evm",
    "cross_entropy", "srs_symbols", "dmrs_symbols", "dmrs_symbols_conventional", "m_bar",
)


def run_ber_sweep(cfg: ExperimentConfig, out_path=None, debug_dir=None):
    """Full BER sweep; one row per (snr, trial) plus one aggregate row per snr.

    Returns the list of result rows; writes ``cfg.out`` (or ``out_path``).
    If any trial fails, the rows computed so far are still flushed (failed
    trials appear as ``error`` rows with NaN metrics) and the first failure
    is re-raised afterwards.
    """
    cfg.validate()
    tasks = [(snr, trial) for snr in cfg.snr_db for trial in range(cfg.trials)]

    def work(task):
        snr, trial = task
        try:
            if debug_dir is not None:
                res, inter = run_link_trial(cfg, snr, trial, collect=True)
                _dump_debug(debug_dir, snr, trial, inter)
                return res
            return run_link_trial(cfg, snr, trial)
        except Exception as err:  # noqa: BLE001 - reported as an error row
            return err

    results = _parallel_map(work, tasks, cfg.threads)
    by_task = dict(zip(tasks, results))
    failures = [(t, r) for t, r in zip(tasks, results) if isinstance(r, Exception)]

    nan = float("nan")
    rows = []
    for snr in cfg.snr_db:
        per_trial = [by_task[(snr, t)] for t in range(cfg.trials)]
        good = [r for r in per_trial if not isinstance(r, Exception)]
        for trial, r in enumerate(per_trial):
            if isinstance(r, Exception):
                rows.append(("error", snr, trial, cfg.seed + trial,
                             nan, nan, nan, nan, nan, 0, 0, 0, 0))
            else:
                rows.append((
                    "trial", r.snr_db, r.trial, r.seed, r.ber, r.nmse_csit, r.nmse_csir,
                    r.evm, r.cross_entropy, r.srs_symbols, r.dmrs_symbols,
                    r.dmrs_symbols_conventional, r.m_bar,
                ))
        if good:
            rows.append((
                "aggregate", snr, -1, cfg.seed,
                float(np.mean([r.ber for r in good])),
                float(np.mean([r.nmse_csit for r in good])),
                float(np.mean([r.nmse_csir for r in good])),
                float(np.mean([r.evm for r in good])),
                float(np.mean([r.cross_entropy for r in good])),
                good[0].srs_symbols, good[0].dmrs_symbols,
                good[0].dmrs_symbols_conventional, good[0].m_bar,
            ))
    _write_csv(out_path or cfg.out, BER_HEADER, rows)
    if failures:
        (snr, trial), err = failures[0]
        summary = RuntimeError(
            f"{len(failures)} trial(s) failed, partial results flushed; "
            f"first failure at snr={snr} trial={trial}: {err}"
        )
        raise StageError("sweep", summary) from err
    return rows


def _dump_debug(debug_dir, snr, trial, inter):
    import os

    os.makedirs(debug_dir, exist_ok=True)
    fname = os.path.join(debug_dir, f"trial_snr{snr:g}_t{trial}.npz")
    np.savez(fname, **inter)


NMSE_HEADER = ("snr_db", "estimator", "nmse_mean", "nmse_std", "trials", "seed")


def run_nmse_sweep(cfg: ExperimentConfig, out_path=None):
    """Uplink-pilot NMSE of every configured estimator over the SNR grid."""
    cfg.validate()
    params = cfg.channel_params()
    tap_var = per_tap_variance(params, cfg.max_delay_spread)

    def work(task):
        snr, trial = task
        noise_var = 10.0 ** (-snr / 10.0)
        h = gen_clustered_channel(params, trial_rng(cfg.seed, trial, STAGE_CHANNEL))
        sched = pilot.build_schedule(cfg.n_subcarriers, cfg.srs_streams_per_symbol, cfg.n_rx, "dft")
        obs = pilot.observe_pilots(h, sched, noise_var, trial_rng(cfg.seed, trial, STAGE_SRS))
        out = {}
        for kind in cfg.estimators:
            est_cfg = _estimator_config(cfg, kind, cfg.max_delay_spread, noise_var,
                                        cfg.n_tx, cfg.srs_streams_per_symbol)
            est = chanest.estimate(obs, est_cfg, tap_var)
            out[kind] = chanest.nmse(est.freq, h)
        return out

    tasks = [(snr, trial) for snr in cfg.snr_db for trial in range(cfg.trials)]
    results = dict(zip(tasks, _parallel_map(work, tasks, cfg.threads)))

    rows = []
    for snr in cfg.snr_db:
        for kind in cfg.estimators:
            vals = np.array([results[(snr, t)][kind] for t in range(cfg.trials)])
            std = float(np.std(vals, ddof=1)) if cfg.trials > 1 else 0.0
            rows.append((snr, kind, float(np.mean(vals)), std, cfg.trials, cfg.seed))
    _write_csv(out_path or cfg.out, NMSE_HEADER, rows)
    return rows


TAP_HEADER = ("tap", "channel", "precoder", "effective")
WINDOW_HEADER = ("window", "channel_nmse", "precoder_nmse", "effective_nmse")


def run_sparsity_report(cfg: ExperimentConfig, out_path=None):
    """Per-tap delay profiles of channel, precoder and effective channel.

    Writes the per-tap energy fractions to the output CSV and truncation
    NMSE values at the configured windows to ``<out>.windows.csv``;
    returns ``(tap_rows, window_rows, occupancy_text)``.
    """
    cfg.validate()
    rng = trial_rng(cfg.seed, 0)
    k = cfg.n_subcarriers
    h = gen_clustered_channel(cfg.channel_params(), rng)
    prec = _design_precoder(cfg, h, cfg.noise_var_at(cfg.snr_db[-1]))
    h_e = effective_channel(h, prec)

    x_h = freq_to_delay(h, k)
    x_v = freq_to_delay(FreqChannel(prec.expand_freq()), k)
    x_e = freq_to_delay(h_e, k)

    def profile(x):
        e = np.sum(np.abs(x.data) ** 2, axis=(1, 2))
        return e / e.sum()

    p_h, p_v, p_e = profile(x_h), profile(x_v), profile(x_e)
    tap_rows = [(d, float(p_h[d]), float(p_v[d]), float(p_e[d])) for d in range(k)]

    windows = cfg.sparsity_windows or (cfg.max_delay_spread, cfg.csir_window())
    window_rows = []
    for w in sorted(set(int(w) for w in windows)):
        window_rows.append((
            w,
            delay_support_report(x_h, w).truncation_nmse,
            delay_support_report(x_v, w).truncation_nmse,
            delay_support_report(x_e, w).truncation_nmse,
        ))

    out = out_path or cfg.out
    _write_csv(out, TAP_HEADER, tap_rows)
    _write_csv(str(out) + ".windows.csv", WINDOW_HEADER, window_rows)

    srs = pilot.build_schedule(k, cfg.srs_streams_per_symbol, cfg.n_rx, "dft")
    dmrs = pilot.build_schedule(k, cfg.dmrs_streams_per_symbol, cfg.n_streams, "dft")
    occupancy = (
        "SRS schedule:\n" + srs.occupancy_grid() + "\nDMRS schedule:\n" + dmrs.occupancy_grid()
    )
    return tap_rows, window_rows, occupancy


TRACE_HEADER = ("iteration", "objective", "mismatch", "noise_penalty", "multiplier")


def run_precoder_design(cfg: ExperimentConfig, out_path=None):
    """Design one precoder; dump its delay taps and the BCD objective trace."""
    cfg.validate()
    rng = trial_rng(cfg.seed, 0)
    h = gen_clustered_channel(cfg.channel_params(), rng)
    noise_var = cfg.noise_var_at(cfg.snr_db[-1])
    if cfg.precoder_kind == "evm_bcd_unrolled":
        prec, _, trace = prec_mod.evm_bcd_unrolled(
            h, cfg.n_streams, cfg.d_v, cfg.power, noise_var,
            n_iters=cfg.unrolled_iters, multipliers=cfg.multipliers or None,
        )
    else:
        prec, _, trace = prec_mod.evm_bcd_precoder(
            h, cfg.n_streams, cfg.d_v, cfg.power, noise_var,
            max_iters=cfg.max_iters, tol=cfg.tol,
        )
    out = out_path or cfg.out
    from .channel import save_channel_csv

    save_channel_csv(out, prec.blocks, kind="precoder_delay")
    rows = [
        (i, trace.objective[i], trace.mismatch[i], trace.noise_penalty[i], trace.multipliers[i])
        for i in range(trace.n_iters)
    ]
    _write_csv(str(out) + ".trace.csv", TRACE_HEADER, rows)
    return prec, trace

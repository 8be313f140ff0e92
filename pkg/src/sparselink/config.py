"""Flat key=value experiment configuration with section prefixes.

A config file is plain text: one ``section.key = value`` per line, ``#``
comments, blank lines ignored.  Sections are ``channel.*``, ``precoder.*``,
``link.*`` and ``run.*``; every key has a default so files only list what
they change.  All cross-field preconditions are checked up front by
``validate`` so runs fail before any computation starts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .channel import ChannelParams, default_params, exponential_params
from .precoder import effective_delay_spread

PRECODER_KINDS = ("svd_per_subcarrier", "common", "evm_bcd", "evm_bcd_unrolled")
CSIT_KINDS = ("ls", "antialias", "omp", "lasso", "gamsse", "perfect")
CSIR_MODES = ("full_dmrs_lmmse", "sparse_fdm", "perfect")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _parse_list(value: str, cast):
    return tuple(cast(tok) for tok in value.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    # channel.*
    n_tx: int = 4
    n_rx: int = 4
    n_subcarriers: int = 256
    max_delay_spread: int = 18
    profile: str = "default"
    decay_taps: float = 6.0
    cluster_delays: tuple = ()
    cluster_powers: tuple = ()
    rays_per_cluster: tuple = ()
    angle_spread: float = 0.2
    # precoder.*
    precoder_kind: str = "evm_bcd"
    n_streams: int = 2
    d_v: int = 14
    power: float = 1.0
    max_iters: int = 300
    tol: float = 1e-6
    unrolled_iters: int = 3
    multipliers: tuple = ()
    # link.*
    bits_per_symbol: int = 4
    snr_db: tuple = (10.0, 20.0, 30.0)
    uplink_snr_db: float = 20.0
    payload_symbols: int = 4
    # run.*
    trials: int = 50
    seed: int = 0
    out: str = "result.csv"
    threads: int = 1
    srs_streams_per_symbol: int = 8
    dmrs_streams_per_symbol: int = 8
    csit_estimator: str = "antialias"
    csir_mode: str = "sparse_fdm"
    csir_estimator: str = "antialias"
    estimators: tuple = ("ls", "antialias", "omp", "lasso", "gamsse")
    sparsity_windows: tuple = ()
    lasso_reg: float | None = None
    omp_residual_tol: float = 1.0

    def channel_params(self) -> ChannelParams:
        if self.profile == "default":
            return default_params(self.n_tx, self.n_rx, self.n_subcarriers, self.max_delay_spread)
        if self.profile == "exponential":
            rays = self.rays_per_cluster[0] if self.rays_per_cluster else 4
            return exponential_params(
                self.n_tx, self.n_rx, self.n_subcarriers, self.max_delay_spread,
                self.decay_taps, rays,
            )
        if self.profile == "explicit":
            return ChannelParams(
                n_tx=self.n_tx,
                n_rx=self.n_rx,
                n_subcarriers=self.n_subcarriers,
                cluster_delays=self.cluster_delays,
                cluster_powers=self.cluster_powers,
                rays_per_cluster=self.rays_per_cluster or (1,) * len(self.cluster_delays),
                angle_spread=self.angle_spread,
                max_delay_spread=self.max_delay_spread,
            )
        raise ConfigError(f"channel: unknown profile {self.profile!r}")

    def precoder_taps(self) -> int:
        """Delay support of the configured precoder kind."""
        if self.precoder_kind == "common":
            return 1
        if self.precoder_kind == "svd_per_subcarrier":
            return self.n_subcarriers
        return self.d_v

    def csir_window(self) -> int:
        """Delay window the receiver must estimate for the effective channel."""
        return min(
            effective_delay_spread(self.max_delay_spread, self.precoder_taps()),
            self.n_subcarriers,
        )

    def noise_var_at(self, snr_db: float) -> float:
        return self.power * 10.0 ** (-snr_db / 10.0)

    def uplink_noise_var(self) -> float:
        return 10.0 ** (-self.uplink_snr_db / 10.0)

    def validate(self):
        k = self.n_subcarriers
        try:
            self.channel_params()
        except (ValueError, TypeError) as err:
            raise ConfigError(f"channel: {err}") from err

        if self.precoder_kind not in PRECODER_KINDS:
            raise ConfigError(f"precoder: unknown kind {self.precoder_kind!r}")
        if not 1 <= self.n_streams <= min(self.n_tx, self.n_rx):
            raise ConfigError("precoder: n_streams must be in [1, min(n_tx, n_rx)]")
        if self.d_v < 1 or self.d_v > k:
            raise ConfigError("precoder: d_v must be in [1, K]")
        if self.power <= 0:
            raise ConfigError("precoder: power must be > 0")
        if self.max_iters < 1 or self.unrolled_iters < 1:
            raise ConfigError("precoder: iteration budgets must be >= 1")

        if self.bits_per_symbol % 2 != 0 or not 2 <= self.bits_per_symbol <= 12:
            raise ConfigError("link: bits_per_symbol must be even and within [2, 12]")
        if len(self.snr_db) == 0:
            raise ConfigError("link: snr_db grid must be non-empty")
        if self.payload_symbols < 1:
            raise ConfigError("link: payload_symbols must be >= 1")

        if self.trials < 1:
            raise ConfigError("run: trials must be >= 1")
        if self.seed < 0:
            raise ConfigError("run: seed must be >= 0")
        if self.threads < 1:
            raise ConfigError("run: threads must be >= 1")
        for name, a in (
            ("srs_streams_per_symbol", self.srs_streams_per_symbol),
            ("dmrs_streams_per_symbol", self.dmrs_streams_per_symbol),
        ):
            if a < 1 or k % a != 0:
                raise ConfigError(f"run: {name} must be >= 1 and divide K")
        if self.csit_estimator not in CSIT_KINDS:
            raise ConfigError(f"run: unknown csit_estimator {self.csit_estimator!r}")
        if self.csir_mode not in CSIR_MODES:
            raise ConfigError(f"run: unknown csir_mode {self.csir_mode!r}")
        if self.csir_estimator not in CSIT_KINDS[:-1]:
            raise ConfigError(f"run: unknown csir_estimator {self.csir_estimator!r}")
        for est in self.estimators:
            if est not in CSIT_KINDS[:-1]:
                raise ConfigError(f"run: unknown estimator {est!r} in estimators list")
        if self.lasso_reg is not None and self.lasso_reg < 0:
            raise ConfigError("run: lasso_reg must be >= 0")
        if self.omp_residual_tol <= 0:
            raise ConfigError("run: omp_residual_tol must be > 0")

        if self.csit_estimator != "perfect":
            if self.max_delay_spread * self.srs_streams_per_symbol > k:
                raise ConfigError(
                    "run: SRS not identifiable, max_delay_spread * srs_streams_per_symbol exceeds K"
                )
        if self.csir_mode == "sparse_fdm":
            if self.csir_window() * self.dmrs_streams_per_symbol > k:
                raise ConfigError(
                    "run: sparse DMRS not identifiable, effective delay window "
                    f"({self.csir_window()}) * dmrs_streams_per_symbol exceeds K"
                )
        return self


_PARSERS = {
    "channel.n_tx": ("n_tx", int),
    "channel.n_rx": ("n_rx", int),
    "channel.n_subcarriers": ("n_subcarriers", int),
    "channel.max_delay_spread": ("max_delay_spread", int),
    "channel.profile": ("profile", str),
    "channel.decay_taps": ("decay_taps", float),
    "channel.cluster_delays": ("cluster_delays", lambda v: _parse_list(v, int)),
    "channel.cluster_powers": ("cluster_powers", lambda v: _parse_list(v, float)),
    "channel.rays_per_cluster": ("rays_per_cluster", lambda v: _parse_list(v, int)),
    "channel.angle_spread": ("angle_spread", float),
    "precoder.kind": ("precoder_kind", str),
    "precoder.n_streams": ("n_streams", int),
    "precoder.d_v": ("d_v", int),
    "precoder.power": ("power", float),
    "precoder.max_iters": ("max_iters", int),
    "precoder.tol": ("tol", float),
    "precoder.unrolled_iters": ("unrolled_iters", int),
    "precoder.multipliers": ("multipliers", lambda v: _parse_list(v, float)),
    "link.bits_per_symbol": ("bits_per_symbol", int),
    "link.snr_db": ("snr_db", lambda v: _parse_list(v, float)),
    "link.uplink_snr_db": ("uplink_snr_db", float),
    "link.payload_symbols": ("payload_symbols", int),
    "run.trials": ("trials", int),
    "run.seed": ("seed", int),
    "run.out": ("out", str),
    "run.threads": ("threads", int),
    "run.srs_streams_per_symbol": ("srs_streams_per_symbol", int),
    "run.dmrs_streams_per_symbol": ("dmrs_streams_per_symbol", int),
    "run.csit_estimator": ("csit_estimator", str),
    "run.csir_mode": ("csir_mode", str),
    "run.csir_estimator": ("csir_estimator", str),
    "run.estimators": ("estimators", lambda v: _parse_list(v, str)),
    "run.sparsity_windows": ("sparsity_windows", lambda v: _parse_list(v, int)),
    "run.lasso_reg": ("lasso_reg", float),
    "run.omp_residual_tol": ("omp_residual_tol", float),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown keys and malformed lines raise ConfigError."""
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if value == "":
            continue
        attr, cast = _PARSERS[key]
        try:
            setattr(cfg, attr, cast(value))
        except (ValueError, TypeError) as err:
            raise ConfigError(f"line {lineno}: bad value for {key}: {err}") from err
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())

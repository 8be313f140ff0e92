"""MIMO-OFDM link simulation with delay-domain sparse precoding.

The package splits along the signal path: :mod:`~sparselink.channel`
generates clustered wideband channels and converts between frequency and
delay domains, :mod:`~sparselink.pilot` builds comb pilot schedules and
synthesises observations, :mod:`~sparselink.chanest` recovers channels
from those observations, :mod:`~sparselink.precoder` designs precoders
(including the EVM-minimising block-coordinate solver whose delay-tap
constraint keeps the effective channel sparse), :mod:`~sparselink.link`
handles QAM and equalisation, and :mod:`~sparselink.harness` runs seeded
Monte-Carlo experiments behind the CLI.
"""

from .channel import (
    ChannelParams,
    DelayChannel,
    FreqChannel,
    delay_support_report,
    delay_to_freq,
    effective_channel,
    freq_to_delay,
    gen_clustered_channel,
    per_tap_variance,
)
from .chanest import (
    ChannelEstimate,
    EstimatorConfig,
    antialias_estimate,
    gamsse_estimate,
    lasso_estimate,
    lmmse_dmrs_full,
    ls_estimate,
    nmse,
    omp_estimate,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .harness import LinkResult, run_ber_sweep, run_link_trial, run_nmse_sweep
from .link import ber, cross_entropy, hard_decision, qam_modulate, soft_demap, transmit_payload
from .pilot import PilotSchedule, build_schedule, fdm_pattern, max_streams_per_symbol, observe_pilots
from .precoder import (
    BcdTrace,
    Decorrelators,
    SparsePrecoder,
    common_covariance_precoder,
    effective_delay_spread,
    evm_bcd_precoder,
    evm_objective,
    svd_per_subcarrier,
    update_decorrelators,
    update_delay_precoder,
)

__version__ = "0.1.0"

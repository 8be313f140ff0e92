"""Clustered wideband MIMO channel generation and frequency/delay transforms.

Conventions used throughout the package:

* The DFT is unitary: ``F[k, d] = exp(-2j*pi*k*d/K) / sqrt(K)``, so
  ``F^H F = I`` and Parseval holds exactly.
* All subcarrier and delay-tap indices are 0-based.
* Frequency-domain channels are stored as ``(K, n_rx, n_cols)`` complex
  arrays (one matrix per subcarrier); delay-domain channels as
  ``(d_taps, n_rx, n_cols)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def unitary_dft(k: int, d: int) -> np.ndarray:
    """First ``d`` columns of the unitary K-point DFT matrix, shape (k, d)."""
    rows = np.arange(k)[:, None]
    cols = np.arange(d)[None, :]
    return np.exp(-2j * np.pi * rows * cols / k) / np.sqrt(k)


@dataclass
class FreqChannel:
    """Per-subcarrier channel matrices stacked along axis 0, (K, n_rx, n_cols)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"FreqChannel data must be 3-d, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("FreqChannel contains non-finite entries")

    @property
    def n_subcarriers(self) -> int:
        return self.data.shape[0]

    @property
    def n_rx(self) -> int:
        return self.data.shape[1]

    @property
    def n_cols(self) -> int:
        return self.data.shape[2]

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))

    def transposed(self) -> "FreqChannel":
        """Swap the rx/column axes of every per-subcarrier matrix."""
        return FreqChannel(self.data.transpose(0, 2, 1).copy())


@dataclass
class DelayChannel:
    """Truncated delay-domain channel, (d_taps, n_rx, n_cols)."""

    data: np.ndarray
    d_taps: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"DelayChannel data must be 3-d, got shape {self.data.shape}")
        if self.d_taps == 0:
            self.d_taps = self.data.shape[0]
        if self.d_taps != self.data.shape[0]:
            raise ValueError("d_taps does not match data")

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


@dataclass
class ChannelParams:
    """Geometry of the clustered ray channel.

    Delays are integer taps so that the generated channel has exact
    delay-domain support on ``cluster_delays``; all delays must be below
    ``max_delay_spread`` which itself must not exceed ``n_subcarriers``.
    """

    n_tx: int
    n_rx: int
    n_subcarriers: int
    cluster_delays: tuple = (0,)
    cluster_powers: tuple = (1.0,)
    rays_per_cluster: tuple = (1,)
    angle_spread: float = 0.2
    max_delay_spread: int = 1

    n_clusters: int = field(init=False)

    def __post_init__(self):
        self.cluster_delays = tuple(int(t) for t in np.atleast_1d(self.cluster_delays))
        self.cluster_powers = tuple(float(p) for p in np.atleast_1d(self.cluster_powers))
        rays = np.atleast_1d(self.rays_per_cluster)
        if rays.size == 1:
            rays = np.repeat(rays, len(self.cluster_delays))
        self.rays_per_cluster = tuple(int(r) for r in rays)
        self.n_clusters = len(self.cluster_delays)
        self._validate()

    def _validate(self):
        if min(self.n_tx, self.n_rx) < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.n_clusters < 1:
            raise ValueError("need at least one cluster")
        if len(self.cluster_powers) != self.n_clusters or len(self.rays_per_cluster) != self.n_clusters:
            raise ValueError("cluster_delays, cluster_powers and rays_per_cluster must have equal length")
        if any(r < 1 for r in self.rays_per_cluster):
            raise ValueError("rays_per_cluster entries must be >= 1")
        if self.max_delay_spread > self.n_subcarriers:
            raise ValueError("max_delay_spread cannot exceed the subcarrier count")
        if any(t < 0 or t >= self.max_delay_spread for t in self.cluster_delays):
            raise ValueError("every cluster delay must satisfy 0 <= delay < max_delay_spread")
        if abs(sum(self.cluster_powers) - 1.0) > 1e-12:
            raise ValueError("cluster powers must sum to 1")
        if any(p < 0 for p in self.cluster_powers):
            raise ValueError("cluster powers must be non-negative")


def default_params(n_tx: int, n_rx: int, n_subcarriers: int, max_delay_spread: int) -> ChannelParams:
    """Three-cluster profile with delays spread over the window, powers 0.6/0.3/0.1."""
    d = max_delay_spread
    return ChannelParams(
        n_tx=n_tx,
        n_rx=n_rx,
        n_subcarriers=n_subcarriers,
        cluster_delays=(0, d // 4, (3 * d) // 4),
        cluster_powers=(0.6, 0.3, 0.1),
        rays_per_cluster=(4, 4, 4),
        max_delay_spread=d,
    )


def exponential_params(
    n_tx: int,
    n_rx: int,
    n_subcarriers: int,
    max_delay_spread: int,
    decay_taps: float = 6.0,
    rays_per_tap: int = 4,
) -> ChannelParams:
    """Dense rich-scattering profile: one cluster per tap, exponential powers."""
    d = max_delay_spread
    powers = np.exp(-np.arange(d) / decay_taps)
    powers /= powers.sum()
    # re-normalise exactly so the sum-to-1 invariant holds to 1e-12
    powers[-1] += 1.0 - powers.sum()
    return ChannelParams(
        n_tx=n_tx,
        n_rx=n_rx,
        n_subcarriers=n_subcarriers,
        cluster_delays=tuple(range(d)),
        cluster_powers=tuple(powers),
        rays_per_cluster=(rays_per_tap,) * d,
        max_delay_spread=d,
    )


def _steering(n: int, angles: np.ndarray) -> np.ndarray:
    """Unit-norm ULA steering vectors at half-wavelength spacing, (n, len(angles))."""
    elem = np.arange(n)[:, None]
    return np.exp(1j * np.pi * elem * np.sin(angles)[None, :]) / np.sqrt(n)


def gen_clustered_channel(params: ChannelParams, seed) -> FreqChannel:
    """Draw one clustered channel realisation.

    Each cluster contributes rays with a common integer tap delay, complex
    Gaussian gains scaled so the cluster carries its configured power
    fraction, and ULA steering vectors with ray angles uniform within
    ``angle_spread`` of a random cluster centre.  The per-entry average
    power is 1, i.e. ``E||H_k||_F^2 = n_rx * n_tx``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = params.n_subcarriers
    n_total_rays = sum(params.rays_per_cluster)
    scale = np.sqrt(params.n_rx * params.n_tx / n_total_rays)

    h = np.zeros((k, params.n_rx, params.n_tx), dtype=np.complex128)
    phase_grid = np.arange(k)
    for delay, power, n_ray in zip(params.cluster_delays, params.cluster_powers, params.rays_per_cluster):
        center_rx, center_tx = rng.uniform(-np.pi / 2, np.pi / 2, size=2)
        aoa = center_rx + rng.uniform(-params.angle_spread, params.angle_spread, size=n_ray)
        aod = center_tx + rng.uniform(-params.angle_spread, params.angle_spread, size=n_ray)
        # per-ray variance power * n_total_rays / n_ray keeps the cluster's
        # energy fraction at `power` regardless of how rays are shared out
        gain_std = np.sqrt(power * n_total_rays / n_ray / 2.0)
        gains = gain_std * (rng.standard_normal(n_ray) + 1j * rng.standard_normal(n_ray))
        a_rx = _steering(params.n_rx, aoa)
        a_tx = _steering(params.n_tx, aod)
        cluster_mat = np.einsum("j,rj,tj->rt", gains, a_rx, a_tx.conj())
        phases = np.exp(-2j * np.pi * phase_grid * delay / k)
        h += scale * phases[:, None, None] * cluster_mat[None, :, :]
    return FreqChannel(h)


def per_tap_variance(params: ChannelParams, window: int) -> np.ndarray:
    """Per-entry variance of the delay-domain channel at each tap in ``window``.

    Used by the genie-aided MMSE estimator.  A cluster at tap ``t`` with
    power fraction ``p`` contributes variance ``K * p`` to that tap under
    the unitary DFT convention.
    """
    var = np.zeros(window)
    for delay, power in zip(params.cluster_delays, params.cluster_powers):
        if delay < window:
            var[delay] += params.n_subcarriers * power
    return var


def freq_to_delay(h: FreqChannel, d_taps: int) -> DelayChannel:
    """Project a frequency-domain channel onto its first ``d_taps`` delay taps."""
    k = h.n_subcarriers
    if not 1 <= d_taps <= k:
        raise ValueError(f"d_taps must be in [1, {k}], got {d_taps}")
    # x[d] = sum_k conj(F[k,d]) h[k] = sqrt(K) * ifft(h)[d]
    x = np.sqrt(k) * np.fft.ifft(h.data, axis=0)[:d_taps]
    return DelayChannel(x, d_taps)


def delay_to_freq(x: DelayChannel, n_subcarriers: int) -> FreqChannel:
    """Expand a delay-domain channel back to all ``n_subcarriers`` subcarriers."""
    if x.d_taps > n_subcarriers:
        raise ValueError("delay window exceeds the subcarrier count")
    padded = np.zeros((n_subcarriers,) + x.data.shape[1:], dtype=np.complex128)
    padded[: x.d_taps] = x.data
    h = np.fft.fft(padded, axis=0) / np.sqrt(n_subcarriers)
    return FreqChannel(h)


def effective_channel(h: FreqChannel, v) -> FreqChannel:
    """Compose channel and precoder per subcarrier: ``H_e[k] = H[k] V[k]``."""
    v_freq = v.expand_freq() if hasattr(v, "expand_freq") else np.asarray(v)
    if v_freq.shape[0] != h.n_subcarriers or v_freq.shape[1] != h.n_cols:
        raise ValueError(
            f"precoder shape {v_freq.shape} does not match channel {h.data.shape}"
        )
    return FreqChannel(np.einsum("krt,ktl->krl", h.data, v_freq))


@dataclass
class EnergySplit:
    """How much delay-domain energy falls inside/outside a truncation window."""

    in_window: float
    out_window: float
    truncation_nmse: float


def delay_support_report(x: DelayChannel, window: int) -> EnergySplit:
    """Energy split of ``x`` around the first ``window`` taps."""
    if not 0 < window <= x.d_taps:
        raise ValueError(f"window must be in (0, {x.d_taps}], got {window}")
    per_tap = np.sum(np.abs(x.data) ** 2, axis=(1, 2))
    total = float(per_tap.sum())
    if total == 0.0:
        return EnergySplit(0.0, 0.0, 0.0)
    inside = float(per_tap[:window].sum())
    outside = total - inside
    return EnergySplit(inside / total, outside / total, outside / total)


def save_channel_csv(path, data: np.ndarray, kind: str = "freq"):
    """Dump a channel array as a flat re,im CSV with a shape header line.

    Line 1 is ``kind,dim0,dim1,dim2``; every following line is the ``re,im``
    pair of one entry in row-major order.
    """
    arr = np.asarray(data, dtype=np.complex128)
    flat = arr.reshape(-1)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{kind},{arr.shape[0]},{arr.shape[1]},{arr.shape[2]}\n")
        for val in flat:
            fh.write(f"{val.real:.17e},{val.imag:.17e}\n")


def load_channel_csv(path):
    """Inverse of :func:`save_channel_csv`; returns ``(kind, array)``."""
    with open(path, "r", encoding="ascii") as fh:
        kind, *dims = fh.readline().strip().split(",")
        shape = tuple(int(d) for d in dims)
        vals = np.loadtxt(fh, delimiter=",")
    arr = (vals[:, 0] + 1j * vals[:, 1]).reshape(shape)
    return kind, arr

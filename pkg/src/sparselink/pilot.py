"""FDM pilot schedules and noisy pilot observation synthesis.

A schedule places ``n_streams`` orthogonal pilot streams on an OFDM grid:
stream ``n`` occupies symbol ``n // A`` on the subcarriers of residue class
``n % A`` and transmits the ``n``-th column of a unitary cover matrix as
its spatial signature.  The same machinery serves uplink sounding (streams
= receive antennas, observer = transmit array) and the sparse downlink
demodulation pilots (streams = spatial layers, observer = receive array);
for the downlink the caller passes the transposed effective channel so the
observation model ``y = H[k]^T s`` matches both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FreqChannel


def fdm_pattern(n_subcarriers: int, a_streams: int, stream: int) -> np.ndarray:
    """Subcarrier indices of residue class ``stream`` among ``a_streams`` combs."""
    if n_subcarriers % a_streams != 0:
        raise ValueError(f"streams per symbol ({a_streams}) must divide K ({n_subcarriers})")
    if not 0 <= stream < a_streams:
        raise ValueError(f"stream index {stream} outside [0, {a_streams})")
    return np.arange(stream, n_subcarriers, a_streams)


def max_streams_per_symbol(n_subcarriers: int, delay_spread: int) -> int:
    """Largest number of combs that keeps a ``delay_spread``-tap channel identifiable."""
    if not 1 <= delay_spread <= n_subcarriers:
        raise ValueError("delay spread must be in [1, K]")
    return n_subcarriers // delay_spread


def dft_cover(n: int) -> np.ndarray:
    """Unitary DFT matrix used as the default pilot cover."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


@dataclass
class PilotSchedule:
    """Comb allocation plus unitary cover for ``n_streams`` pilot streams."""

    n_subcarriers: int
    streams_per_symbol: int
    n_streams: int
    cover: np.ndarray

    def __post_init__(self):
        k, a = self.n_subcarriers, self.streams_per_symbol
        if k % a != 0:
            raise ValueError(f"streams per symbol ({a}) must divide K ({k})")
        self.cover = np.asarray(self.cover, dtype=np.complex128)
        if self.cover.shape != (self.n_streams, self.n_streams):
            raise ValueError("cover must be n_streams x n_streams")
        gram = self.cover.conj().T @ self.cover
        if np.max(np.abs(gram - np.eye(self.n_streams))) > 1e-12:
            raise ValueError("cover matrix must be unitary")

    @property
    def n_symbols(self) -> int:
        return -(-self.n_streams // self.streams_per_symbol)

    def omega(self, stream: int) -> np.ndarray:
        """Subcarriers occupied by ``stream`` (on its own OFDM symbol)."""
        return fdm_pattern(self.n_subcarriers, self.streams_per_symbol, stream % self.streams_per_symbol)

    def symbol_of(self, stream: int) -> int:
        return stream // self.streams_per_symbol

    def stream_at(self, symbol: int, subcarrier: int):
        """Stream transmitting on resource element (symbol, subcarrier), or None."""
        stream = symbol * self.streams_per_symbol + subcarrier % self.streams_per_symbol
        return stream if stream < self.n_streams else None

    def occupancy_grid(self) -> str:
        """Human-readable symbols x subcarriers map ('.' = empty)."""
        lines = []
        for m in range(self.n_symbols):
            cells = []
            for k in range(self.n_subcarriers):
                s = self.stream_at(m, k)
                cells.append("." if s is None else f"{s % 36:x}" if s < 36 else "*")
            lines.append(f"sym{m:2d} |" + "".join(cells) + "|")
        return "\n".join(lines)


@dataclass
class PilotObservation:
    """Received pilot grid, (n_symbols, K, n_obs_antennas), plus its schedule."""

    data: np.ndarray
    noise_var: float
    schedule: PilotSchedule

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.noise_var < 0:
            raise ValueError("noise variance must be >= 0")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("observation contains non-finite entries")


def build_schedule(n_subcarriers: int, streams_per_symbol: int, n_streams: int, cover_kind: str = "dft") -> PilotSchedule:
    """Create a schedule with an identity or DFT unitary cover."""
    if cover_kind == "identity":
        cover = np.eye(n_streams, dtype=np.complex128)
    elif cover_kind == "dft":
        cover = dft_cover(n_streams)
    else:
        raise ValueError(f"unknown cover kind {cover_kind!r}")
    return PilotSchedule(n_subcarriers, streams_per_symbol, n_streams, cover)


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given per-entry variance."""
    if variance == 0.0:
        return np.zeros(shape, dtype=np.complex128)
    std = np.sqrt(variance / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def observe_pilots(h: FreqChannel, sched: PilotSchedule, noise_var: float, seed) -> PilotObservation:
    """Synthesize ``y[m,k] = H[k]^T s[m,k] + z`` over the whole pilot grid.

    ``h`` must have ``n_rx == sched.n_streams``; the observer sees
    ``h.n_cols`` antennas.  Unoccupied resource elements carry noise only.
    """
    if h.n_rx != sched.n_streams:
        raise ValueError(
            f"channel stream axis ({h.n_rx}) does not match schedule streams ({sched.n_streams})"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k, n_obs = h.n_subcarriers, h.n_cols
    y = complex_noise(rng, (sched.n_symbols, k, n_obs), noise_var)
    for stream in range(sched.n_streams):
        m = sched.symbol_of(stream)
        omega = sched.omega(stream)
        # composite SIMO channel of this stream on its comb
        y[m, omega] += np.einsum("krc,r->kc", h.data[omega], sched.cover[:, stream])
    return PilotObservation(y, noise_var, sched)


def observe_dmrs_full(h_e: FreqChannel, r_p: np.ndarray, noise_var: float, seed) -> np.ndarray:
    """Dense L-symbol demodulation pilots: ``Y_p[k] = H_e[k] R_p + Z``.

    Returns a ``(K, n_rx, L)`` array; ``r_p`` must be an ``L x L`` unitary.
    """
    l = h_e.n_cols
    r_p = np.asarray(r_p, dtype=np.complex128)
    if r_p.shape != (l, l):
        raise ValueError("pilot matrix must be L x L")
    if np.max(np.abs(r_p.conj().T @ r_p - np.eye(l))) > 1e-8:
        raise ValueError("pilot matrix must be unitary")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = complex_noise(rng, h_e.data.shape, noise_var)
    return np.einsum("krl,lj->krj", h_e.data, r_p) + noise

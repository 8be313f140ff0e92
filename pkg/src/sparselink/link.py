"""QAM modulation, payload transmission, LMMSE equalisation and bit metrics.

Bits use the +/-1 convention (+1 is binary one) and are stored as
``(n_symbols, K, L, B)`` integer arrays.  Square QAM splits the ``B`` bits
evenly over the I and Q axes, each axis binary-reflected Gray coded with
the first (most significant) bit selecting the sign.  The soft demapper is
the per-axis max-log rule, so its hard decisions coincide with
minimum-distance detection.
"""

from __future__ import annotations

import numpy as np

from .channel import FreqChannel, effective_channel
from .pilot import complex_noise
from .precoder import mmse_decorrelator

LLR_CLIP = 40.0


def random_bits(rng: np.random.Generator, shape) -> np.ndarray:
    """Equiprobable +/-1 bits."""
    return (2 * rng.integers(0, 2, size=shape) - 1).astype(np.int8)


def _check_bits_per_symbol(b: int):
    if b % 2 != 0 or b < 2:
        raise ValueError(f"bits per symbol must be even and >= 2, got {b}")


def _axis_scale(q: int) -> float:
    # unit average symbol energy: each axis carries (4^q - 1) / 3 raw power
    return 1.0 / np.sqrt(2.0 * (4**q - 1) / 3.0)


def _gray_levels(q: int) -> np.ndarray:
    """Amplitude of each level index 0..2^q-1 (ascending odd integers)."""
    return 2.0 * np.arange(2**q) - (2**q - 1)


def _gray_bit_classes(q: int) -> np.ndarray:
    """(q, 2^q) array: bit j (MSB first) of the Gray label of each level."""
    idx = np.arange(2**q)
    gray = idx ^ (idx >> 1)
    return np.array([(gray >> (q - 1 - j)) & 1 for j in range(q)])


def _bits_to_levels(bits01: np.ndarray) -> np.ndarray:
    """Decode MSB-first Gray bits (..., q) to level indices."""
    binary = np.bitwise_xor.accumulate(bits01.astype(np.int64), axis=-1)
    q = bits01.shape[-1]
    weights = 1 << np.arange(q - 1, -1, -1)
    return binary @ weights


def qam_modulate(bits: np.ndarray) -> np.ndarray:
    """Map (..., B) +/-1 bits to unit-average-energy square QAM symbols."""
    bits = np.asarray(bits)
    b = bits.shape[-1]
    _check_bits_per_symbol(b)
    q = b // 2
    bits01 = (bits > 0).astype(np.int64)
    amps = _gray_levels(q)
    i_amp = amps[_bits_to_levels(bits01[..., :q])]
    q_amp = amps[_bits_to_levels(bits01[..., q:])]
    return _axis_scale(q) * (i_amp + 1j * q_amp)


def soft_demap(symbols: np.ndarray, noise_var, bits_per_symbol: int = 2) -> np.ndarray:
    """Per-bit probabilities P(bit = +1) via max-log LLRs, clipped to +/-40.

    ``noise_var`` is the complex noise variance per symbol; it may be a
    scalar or any array broadcastable against ``symbols``.  Returns an
    array of shape ``symbols.shape + (bits_per_symbol,)``, I-axis bits
    first.
    """
    _check_bits_per_symbol(bits_per_symbol)
    symbols = np.asarray(symbols)
    v = np.broadcast_to(np.asarray(noise_var, dtype=float), symbols.shape)
    if v.size and float(v.min()) <= 0.0:
        raise ValueError("noise variance must be > 0 for demapping")
    q = bits_per_symbol // 2
    llr = np.concatenate(
        [_axis_llr(symbols.real, v, q), _axis_llr(symbols.imag, v, q)], axis=-1
    )
    return 1.0 / (1.0 + np.exp(-llr))


def _axis_llr(y: np.ndarray, noise_var: np.ndarray, q: int) -> np.ndarray:
    """Max-log LLRs of one real axis, (..., q)."""
    levels = _axis_scale(q) * _gray_levels(q)
    classes = _gray_bit_classes(q)
    dist = (y[..., None] - levels) ** 2
    llr = np.empty(y.shape + (q,))
    for j in range(q):
        d0 = np.min(np.where(classes[j] == 0, dist, np.inf), axis=-1)
        d1 = np.min(np.where(classes[j] == 1, dist, np.inf), axis=-1)
        llr[..., j] = (d0 - d1) / noise_var
    return np.clip(llr, -LLR_CLIP, LLR_CLIP)


def hard_decision(probs: np.ndarray) -> np.ndarray:
    """Threshold P(bit = +1) at 0.5; exact ties decide -1."""
    return np.where(np.asarray(probs) > 0.5, 1, -1).astype(np.int8)


def ber(bits: np.ndarray, decided: np.ndarray) -> float:
    """Fraction of differing bits, ``mean(1 - b * b_hat) / 2``."""
    bits = np.asarray(bits)
    decided = np.asarray(decided)
    if bits.shape != decided.shape:
        raise ValueError(f"shape mismatch {bits.shape} vs {decided.shape}")
    return float(np.mean(1.0 - bits * decided) / 2.0)


def cross_entropy(bits: np.ndarray, probs: np.ndarray) -> float:
    """Mean negative log-likelihood of the +/-1 bits under P(bit = +1)."""
    p = np.clip(np.asarray(probs, dtype=float), 1e-12, 1.0 - 1e-12)
    ll = np.where(np.asarray(bits) > 0, np.log(p), np.log1p(-p))
    return float(-np.mean(ll))


def transmit_payload(h: FreqChannel, v, bits: np.ndarray, noise_var: float, seed) -> np.ndarray:
    """Precode, pass through the channel, add noise: ``y = H_k V_k r + z``."""
    bits = np.asarray(bits)
    if bits.ndim != 4 or bits.shape[1] != h.n_subcarriers:
        raise ValueError(f"bits must be (M, K, L, B) with K = {h.n_subcarriers}")
    r = qam_modulate(bits)
    h_e = effective_channel(h, v).data
    if h_e.shape[2] != bits.shape[2]:
        raise ValueError("stream count of bits does not match the precoder")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = np.einsum("krl,mkl->mkr", h_e, r)
    return y + complex_noise(rng, y.shape, noise_var)


def lmmse_decorrelate(h_e_hat, noise_var: float, y_d: np.ndarray):
    """Equalise payload observations with filters built from the channel estimate.

    Returns ``(stream_estimates, decorrelators)`` with shapes
    ``(M, K, L)`` and ``(K, n_rx, L)``.
    """
    h_e = np.asarray(h_e_hat.data if hasattr(h_e_hat, "data") else h_e_hat)
    u = mmse_decorrelator(h_e, noise_var)
    r_hat = np.einsum("krl,mkr->mkl", u.conj(), np.asarray(y_d))
    return r_hat, u


def post_eq_noise_var(u: np.ndarray, h_e_hat, noise_var: float) -> np.ndarray:
    """Per-stream residual variance after equalisation, (K, L).

    Sum of filtered thermal noise and the residual self/cross-stream
    interference ``||row_l(I - U^H H_e)||^2`` under unit symbol energy.
    """
    h_e = np.asarray(h_e_hat.data if hasattr(h_e_hat, "data") else h_e_hat)
    g = np.einsum("krl,krm->klm", u.conj(), h_e)
    eye = np.eye(g.shape[-1])
    interference = np.sum(np.abs(eye - g) ** 2, axis=2)
    filtered_noise = noise_var * np.sum(np.abs(u) ** 2, axis=1)
    return interference + filtered_noise

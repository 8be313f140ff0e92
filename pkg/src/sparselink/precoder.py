"""Precoder designs: per-subcarrier SVD, common covariance, and EVM-minimising BCD.

The sparse precoder lives in the delay domain as a ``(d_v * n_tx, L)``
matrix whose per-subcarrier expansion is ``V[k] = sum_d F[k, d] * W_d``
with ``W_d`` the d-th ``n_tx x L`` block.  The EVM solver alternates the
closed-form decorrelator update with a regularised least-squares update of
the delay-domain blocks, picking the power multiplier by bisection.  The
quadratic form of that update is block-Toeplitz across delay lags, so it
is assembled from a single FFT of the per-subcarrier ``H^H U U^H H``
sequence instead of a K-term sum of Kronecker products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FreqChannel, effective_channel, unitary_dft


class PowerSolveError(RuntimeError):
    """Raised when the power-constraint bisection cannot be completed."""


@dataclass
class SparsePrecoder:
    """Delay-domain precoder with exact support on the first ``d_v`` taps."""

    w_delay: np.ndarray
    d_v: int
    n_tx: int
    n_streams: int
    n_subcarriers: int
    power_budget: float

    def __post_init__(self):
        self.w_delay = np.asarray(self.w_delay, dtype=np.complex128)
        if self.w_delay.shape != (self.d_v * self.n_tx, self.n_streams):
            raise ValueError(
                f"w_delay shape {self.w_delay.shape} does not match "
                f"(d_v*n_tx, L) = ({self.d_v * self.n_tx}, {self.n_streams})"
            )
        budget = self.n_subcarriers * self.power_budget
        if self.power() > budget * (1 + 1e-6):
            raise ValueError(f"precoder power {self.power():.6e} exceeds budget {budget:.6e}")

    def power(self) -> float:
        return float(np.sum(np.abs(self.w_delay) ** 2))

    @property
    def blocks(self) -> np.ndarray:
        """Delay-tap view, (d_v, n_tx, n_streams)."""
        return self.w_delay.reshape(self.d_v, self.n_tx, self.n_streams)

    def expand_freq(self) -> np.ndarray:
        """Per-subcarrier precoders, (K, n_tx, n_streams)."""
        f_v = unitary_dft(self.n_subcarriers, self.d_v)
        return np.einsum("kd,dtl->ktl", f_v, self.blocks)


@dataclass
class Decorrelators:
    """Per-subcarrier receive filters, (K, n_rx, n_streams)."""

    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        if self.u.ndim != 3 or not np.all(np.isfinite(self.u)):
            raise ValueError("decorrelators must be a finite (K, n_rx, L) array")


@dataclass
class BcdTrace:
    """Objective history of one BCD run; mismatch + noise_penalty = objective."""

    objective: np.ndarray
    mismatch: np.ndarray
    noise_penalty: np.ndarray
    multipliers: np.ndarray
    powers: np.ndarray
    n_iters: int
    converged: bool


def effective_delay_spread(delay_spread: int, precoder_taps: int) -> int:
    """Support length of the channel/precoder convolution, D + D_v - 1."""
    if delay_spread < 1 or precoder_taps < 1:
        raise ValueError("delay spreads must be >= 1")
    return delay_spread + precoder_taps - 1


def _canonical_columns(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its first non-negligible entry is real positive."""
    v = v.copy()
    mags = np.abs(v)
    thresh = 1e-12 * np.maximum(mags.max(axis=-2, keepdims=True), 1e-300)
    first = np.argmax(mags > thresh, axis=-2)
    pivot = np.take_along_axis(v, first[..., None, :], axis=-2)[..., 0, :]
    phase = np.where(np.abs(pivot) > 0, pivot / np.maximum(np.abs(pivot), 1e-300), 1.0)
    return v * phase.conj()[..., None, :]


def _from_dense(v_freq: np.ndarray, power_budget: float) -> SparsePrecoder:
    """Wrap dense per-subcarrier precoders as a full-width delay-domain object."""
    k, n_tx, l = v_freq.shape
    w = np.sqrt(k) * np.fft.ifft(v_freq, axis=0)
    return SparsePrecoder(w.reshape(k * n_tx, l), k, n_tx, l, k, power_budget)


def svd_per_subcarrier(h: FreqChannel, n_streams: int, power_budget: float) -> SparsePrecoder:
    """Dominant right singular vectors per subcarrier, power P_T on every k.

    This is the conventional frequency-selective design; its delay-domain
    support is generically full width, which is exactly why it defeats
    comb-pilot estimation of the effective channel.
    """
    if n_streams > min(h.n_rx, h.n_cols):
        raise ValueError("stream count exceeds min(n_rx, n_tx)")
    _, _, vh = np.linalg.svd(h.data)
    v = _canonical_columns(vh.conj().transpose(0, 2, 1)[:, :, :n_streams])
    return _from_dense(np.sqrt(power_budget / n_streams) * v, power_budget)


def common_covariance_precoder(h: FreqChannel, n_streams: int, power_budget: float) -> SparsePrecoder:
    """Single-tap precoder from the top eigenvectors of ``sum_k H_k^H H_k``."""
    if n_streams > h.n_cols:
        raise ValueError("stream count exceeds n_tx")
    cov = np.einsum("krt,krs->ts", h.data.conj(), h.data)
    _, vecs = np.linalg.eigh(cov)
    v = _canonical_columns(vecs[:, ::-1][:, :n_streams])
    w = np.sqrt(h.n_subcarriers * power_budget / n_streams) * v
    return SparsePrecoder(w, 1, h.n_cols, n_streams, h.n_subcarriers, power_budget)


def mmse_decorrelator(h_e: np.ndarray, noise_var: float) -> np.ndarray:
    """Closed-form filters ``H_e (H_e^H H_e + noise_var I)^{-1}`` per subcarrier.

    At zero noise the inverse is replaced by an eigenvalue-floored
    pseudo-inverse so rank-deficient effective channels stay defined.
    """
    h_e = np.asarray(h_e, dtype=np.complex128)
    l = h_e.shape[2]
    gram = np.einsum("krl,krm->klm", h_e.conj(), h_e)
    if noise_var > 0:
        inv = np.linalg.solve(gram + noise_var * np.eye(l), _stacked_eye(gram))
    else:
        evals, evecs = np.linalg.eigh(gram)
        inv_evals = 1.0 / np.maximum(evals, 1e-12)
        inv = np.einsum("klm,km,knm->kln", evecs, inv_evals, evecs.conj())
    return np.einsum("krl,klm->krm", h_e, inv)


def _stacked_eye(gram: np.ndarray) -> np.ndarray:
    eye = np.eye(gram.shape[-1], dtype=np.complex128)
    return np.broadcast_to(eye, gram.shape).copy()


def update_decorrelators(h: FreqChannel, v: SparsePrecoder, noise_var: float) -> Decorrelators:
    """Optimal receive filters for the current precoder."""
    return Decorrelators(mmse_decorrelator(effective_channel(h, v).data, noise_var))


def evm_objective(h: FreqChannel, v: SparsePrecoder, u: Decorrelators, noise_var: float) -> float:
    """Residual stream distortion ``sum_k ||I - U_k^H H_e_k||_F^2 + noise_var ||U_k||_F^2``."""
    mismatch, penalty = evm_objective_parts(h, v, u, noise_var)
    return mismatch + penalty


def evm_objective_parts(h: FreqChannel, v: SparsePrecoder, u: Decorrelators, noise_var: float):
    h_e = effective_channel(h, v).data
    g = np.einsum("krl,krm->klm", u.u.conj(), h_e)
    eye = np.eye(g.shape[-1])
    mismatch = float(np.sum(np.abs(eye - g) ** 2))
    penalty = noise_var * float(np.sum(np.abs(u.u) ** 2))
    return mismatch, penalty


def _normal_equations(h: FreqChannel, u: Decorrelators, d_v: int):
    """Gram matrix and right-hand side of the delay-domain precoder update."""
    k, _, n_tx = h.data.shape
    t = np.einsum("krt,krl->ktl", h.data.conj(), u.u)
    m = np.einsum("ktl,ksl->kts", t, t.conj())
    c_hat = np.fft.fft(m, axis=0) / k
    diff = (np.arange(d_v)[None, :] - np.arange(d_v)[:, None]) % k
    gram = c_hat[diff].transpose(0, 2, 1, 3).reshape(d_v * n_tx, d_v * n_tx)
    gram = 0.5 * (gram + gram.conj().T)
    rhs = (np.sqrt(k) * np.fft.ifft(t, axis=0)[:d_v]).reshape(d_v * n_tx, -1)
    return gram, rhs


def update_delay_precoder(
    h: FreqChannel,
    u: Decorrelators,
    d_v: int,
    power_budget: float,
    fixed_multiplier: float | None = None,
):
    """Regularised LS update of the delay-domain precoder.

    Returns ``(precoder, multiplier)``.  With ``fixed_multiplier`` set, the
    solve uses that value and rescales the result onto the power budget
    (the deterministic unrolled mode); otherwise the multiplier is zero
    when the unconstrained solution is feasible and found by bisection on
    the monotone power curve when it is not.
    """
    if d_v < 1:
        raise ValueError("d_v must be >= 1")
    k, n_tx = h.n_subcarriers, h.n_cols
    budget = k * power_budget
    gram, rhs = _normal_equations(h, u, d_v)
    eye = np.eye(gram.shape[0])

    def solve_at(mult: float) -> np.ndarray:
        return np.linalg.solve(gram + mult * eye, rhs)

    if fixed_multiplier is not None:
        w = solve_at(fixed_multiplier)
        norm = np.linalg.norm(w)
        if norm > 0:
            w *= np.sqrt(budget) / norm
        prec = SparsePrecoder(w, d_v, n_tx, rhs.shape[1], k, power_budget)
        return prec, float(fixed_multiplier)

    # minimum-norm solve covers the rank-deficient case (full-width windows
    # make the quadratic form singular); it decides whether the power
    # constraint is active at all
    w0, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    if float(np.sum(np.abs(w0) ** 2)) <= budget:
        prec = SparsePrecoder(w0, d_v, n_tx, rhs.shape[1], k, power_budget)
        return prec, 0.0

    hi = 1.0
    for _ in range(200):
        if float(np.sum(np.abs(solve_at(hi)) ** 2)) <= budget:
            break
        hi *= 2.0
    else:
        raise PowerSolveError("could not bracket the power constraint multiplier")

    lo, w, power = 0.0, None, np.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        w = solve_at(mid)
        power = float(np.sum(np.abs(w) ** 2))
        if abs(power - budget) <= 1e-9 * budget:
            lo = hi = mid
            break
        if power > budget:
            lo = mid
        else:
            hi = mid
    if abs(power - budget) > 1e-6 * budget:
        # fall back to the feasible end of the bracket
        w = solve_at(hi)
        power = float(np.sum(np.abs(w) ** 2))
        if abs(power - budget) > 1e-6 * budget:
            raise PowerSolveError(
                f"bisection stalled: power {power:.6e} vs budget {budget:.6e}, "
                f"bracket [{lo:.3e}, {hi:.3e}]"
            )
        mid = hi
    prec = SparsePrecoder(w, d_v, n_tx, rhs.shape[1], k, power_budget)
    return prec, float(mid)


def _initial_precoder(h: FreqChannel, n_streams: int, d_v: int, power_budget: float) -> SparsePrecoder:
    """Common-covariance start embedded in the first delay tap, power on budget."""
    base = common_covariance_precoder(h, n_streams, power_budget)
    blocks = np.zeros((d_v, h.n_cols, n_streams), dtype=np.complex128)
    blocks[0] = base.blocks[0]
    w = blocks.reshape(d_v * h.n_cols, n_streams)
    norm = np.linalg.norm(w)
    if norm > 0:
        w *= np.sqrt(h.n_subcarriers * power_budget) / norm
    return SparsePrecoder(w, d_v, h.n_cols, n_streams, h.n_subcarriers, power_budget)


def evm_bcd_precoder(
    h: FreqChannel,
    n_streams: int,
    d_v: int,
    power_budget: float,
    noise_var: float,
    max_iters: int = 30,
    tol: float = 1e-6,
    multipliers=None,
):
    """Alternate decorrelator and delay-precoder updates until the EVM settles.

    Parameters
    ----------
    multipliers : sequence of float, optional
        Fixed power multipliers, one per iteration (the last value is
        reused if the list is short).  Supplying them switches off the
        bisection and power-rescales every iterate; the descent guarantee
        only applies to the bisection mode.

    Returns ``(precoder, decorrelators, trace)``; the decorrelators are
    refreshed for the returned precoder, so they are the exact minimisers
    given it.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    prec = _initial_precoder(h, n_streams, d_v, power_budget)
    objs, mism, pens, mults, powers = [], [], [], [], []
    converged = False
    for t in range(max_iters):
        u = update_decorrelators(h, prec, noise_var)
        fixed = None
        if multipliers is not None:
            fixed = float(multipliers[min(t, len(multipliers) - 1)])
        prec, mult = update_delay_precoder(h, u, d_v, power_budget, fixed_multiplier=fixed)
        mismatch, penalty = evm_objective_parts(h, prec, u, noise_var)
        objs.append(mismatch + penalty)
        mism.append(mismatch)
        pens.append(penalty)
        mults.append(mult)
        powers.append(prec.power())
        if t >= 1 and abs(objs[-2] - objs[-1]) <= tol * max(abs(objs[-2]), 1e-300):
            converged = True
            break
    u = update_decorrelators(h, prec, noise_var)
    trace = BcdTrace(
        objective=np.array(objs),
        mismatch=np.array(mism),
        noise_penalty=np.array(pens),
        multipliers=np.array(mults),
        powers=np.array(powers),
        n_iters=len(objs),
        converged=converged,
    )
    return prec, u, trace


def evm_bcd_unrolled(
    h: FreqChannel,
    n_streams: int,
    d_v: int,
    power_budget: float,
    noise_var: float,
    n_iters: int = 3,
    multipliers=None,
):
    """Fixed-iteration BCD (default 3 iterations), for deterministic inference."""
    return evm_bcd_precoder(
        h, n_streams, d_v, power_budget, noise_var,
        max_iters=n_iters, tol=0.0, multipliers=multipliers,
    )

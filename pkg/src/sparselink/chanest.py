"""Channel estimators operating on FDM pilot observations.

Every estimator follows the same outline: split the observation grid into
per-stream comb measurements, estimate each stream's composite channel,
remove the unitary cover, and return both frequency- and delay-domain
views.  The delay-domain comb dictionary for a stream on residue class
``a`` is the partial DFT restricted to that comb's rows; for a uniform
comb its Gram is exactly ``I / A``, which is what makes the anti-aliasing
projection a plain scaled adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DelayChannel, FreqChannel, delay_to_freq, freq_to_delay, unitary_dft


class EstimationError(RuntimeError):
    """Raised when an estimator's identifiability conditions are violated."""


@dataclass
class EstimatorConfig:
    kind: str = "antialias"
    window: int = 1
    omp_max_taps: int | None = None
    omp_residual_tol: float = 1.0
    lasso_reg: float = 0.0
    lasso_max_iter: int = 500
    lasso_tol: float = 1e-10

    KINDS = ("ls", "antialias", "omp", "lasso", "gamsse")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.omp_max_taps is not None and self.omp_max_taps > self.window:
            raise ValueError("omp_max_taps cannot exceed the window")
        if self.omp_residual_tol <= 0 or self.lasso_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.lasso_reg < 0:
            raise ValueError("lasso_reg must be >= 0")


@dataclass
class ChannelEstimate:
    """Estimated channel in both domains; ``freq`` is always the expansion of ``delay``."""

    freq: FreqChannel
    delay: DelayChannel
    posterior_tap_var: np.ndarray | None = None
    converged: bool = True
    iterations: int = 0
    # per-stream diagnostics: OMP residual norms / ISTA objective values
    traces: list | None = None


def nmse(estimate, truth) -> float:
    """Normalised squared error ``||est - truth||_F^2 / ||truth||_F^2``."""
    est = np.asarray(estimate.data if hasattr(estimate, "data") else estimate)
    ref = np.asarray(truth.data if hasattr(truth, "data") else truth)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    denom = float(np.sum(np.abs(ref) ** 2))
    if denom == 0.0:
        raise ValueError("truth has zero energy")
    return float(np.sum(np.abs(est - ref) ** 2)) / denom


def _stream_measurements(obs):
    """Yield (stream, omega, Y) with Y the (K/A, n_obs) comb observation."""
    sched = obs.schedule
    for stream in range(sched.n_streams):
        omega = sched.omega(stream)
        yield stream, omega, obs.data[sched.symbol_of(stream), omega, :]


def _decover_delay(composite: np.ndarray, cover: np.ndarray) -> np.ndarray:
    """Undo the unitary cover: composite (w, n_obs, n_streams) -> (w, n_streams, n_obs)."""
    return np.einsum("rn,dcn->drc", cover.conj(), composite)


def _assemble(composite_delay: np.ndarray, obs, **extra) -> ChannelEstimate:
    delay = DelayChannel(_decover_delay(composite_delay, obs.schedule.cover))
    freq = delay_to_freq(delay, obs.schedule.n_subcarriers)
    return ChannelEstimate(freq, delay, **extra)


def comb_dictionary(n_subcarriers: int, window: int, omega: np.ndarray) -> np.ndarray:
    """Partial DFT rows of one comb, shape (len(omega), window)."""
    return unitary_dft(n_subcarriers, window)[omega, :]


def antialias_estimate(obs, window: int) -> ChannelEstimate:
    """Delay-domain least squares on each comb (the anti-aliasing filter)."""
    sched = obs.schedule
    k, a = sched.n_subcarriers, sched.streams_per_symbol
    if window * a > k:
        raise EstimationError(
            f"window {window} not identifiable from K/A = {k}/{a} comb samples"
        )
    composite = np.empty((window, obs.data.shape[2], sched.n_streams), dtype=np.complex128)
    for stream, omega, y in _stream_measurements(obs):
        f_sel = comb_dictionary(k, window, omega)
        gram = f_sel.conj().T @ f_sel
        try:
            composite[:, :, stream] = np.linalg.solve(gram, f_sel.conj().T @ y)
        except np.linalg.LinAlgError as err:
            raise EstimationError("singular normal matrix in anti-aliasing solve") from err
    return _assemble(composite, obs)


def ls_estimate(obs) -> ChannelEstimate:
    """Per-subcarrier inversion on occupied combs, nearest-neighbour hold elsewhere."""
    sched = obs.schedule
    k, a = sched.n_subcarriers, sched.streams_per_symbol
    n_obs = obs.data.shape[2]
    composite_freq = np.empty((k, n_obs, sched.n_streams), dtype=np.complex128)
    grid = np.arange(k)
    for stream, omega, y in _stream_measurements(obs):
        residue = omega[0]
        # nearest comb position; exact midpoints resolve to the lower index
        slot = np.clip((grid - residue + (a + 1) // 2 - 1) // a, 0, len(omega) - 1)
        composite_freq[:, :, stream] = y[slot]
    freq = FreqChannel(np.einsum("rn,kcn->krc", sched.cover.conj(), composite_freq))
    delay = freq_to_delay(freq, k)
    return ChannelEstimate(freq, delay)


def omp_estimate(obs, cfg: EstimatorConfig) -> ChannelEstimate:
    """Simultaneous OMP over the comb dictionary, joint across observe antennas."""
    sched = obs.schedule
    k = sched.n_subcarriers
    window = cfg.window
    sigma = np.sqrt(obs.noise_var)
    composite = np.zeros((window, obs.data.shape[2], sched.n_streams), dtype=np.complex128)
    total_iters = 0
    traces = []
    for stream, omega, y in _stream_measurements(obs):
        f_sel = comb_dictionary(k, window, omega)
        max_taps = min(cfg.omp_max_taps or window, window, len(omega))
        stop_norm = cfg.omp_residual_tol * sigma * np.sqrt(y.size)
        support: list[int] = []
        residual = y.copy()
        norms = [float(np.linalg.norm(residual))]
        x = np.zeros((window, y.shape[1]), dtype=np.complex128)
        while len(support) < max_taps:
            res_norm = norms[-1]
            if res_norm <= stop_norm or res_norm <= 1e-12 * max(np.linalg.norm(y), 1.0):
                break
            scores = np.linalg.norm(f_sel.conj().T @ residual, axis=1)
            scores[support] = -1.0
            support.append(int(np.argmax(scores)))
            coeffs, *_ = np.linalg.lstsq(f_sel[:, support], y, rcond=None)
            residual = y - f_sel[:, support] @ coeffs
            norms.append(float(np.linalg.norm(residual)))
            total_iters += 1
        if support:
            x[support] = coeffs
        composite[:, :, stream] = x
        traces.append(np.array(norms))
    return _assemble(composite, obs, iterations=total_iters, traces=traces)


def _group_norms(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=1)


def lasso_estimate(obs, cfg: EstimatorConfig) -> ChannelEstimate:
    """Group-sparse LASSO via ISTA, one tap-group per delay across antennas.

    Minimises ``0.5 ||y - F x||_F^2 + lasso_reg * sum_d ||x[d, :]||_2`` per
    stream with step ``1 / lambda_max(F^H F)``; the objective is therefore
    non-increasing every iteration.
    """
    sched = obs.schedule
    k = sched.n_subcarriers
    window = cfg.window
    composite = np.zeros((window, obs.data.shape[2], sched.n_streams), dtype=np.complex128)
    converged = True
    worst_iters = 0
    traces = []
    for stream, omega, y in _stream_measurements(obs):
        f_sel = comb_dictionary(k, window, omega)
        lip = float(np.linalg.eigvalsh(f_sel.conj().T @ f_sel)[-1])
        step = 1.0 / lip
        x = np.zeros((window, y.shape[1]), dtype=np.complex128)
        objs = [_lasso_objective(f_sel, y, x, cfg.lasso_reg)]
        it = 0
        for it in range(1, cfg.lasso_max_iter + 1):
            grad = f_sel.conj().T @ (f_sel @ x - y)
            z = x - step * grad
            norms = _group_norms(z)
            shrink = np.maximum(0.0, 1.0 - step * cfg.lasso_reg / np.maximum(norms, 1e-300))
            x = z * shrink[:, None]
            objs.append(_lasso_objective(f_sel, y, x, cfg.lasso_reg))
            if abs(objs[-2] - objs[-1]) <= cfg.lasso_tol * max(abs(objs[-2]), 1e-300):
                break
        else:
            converged = False
        worst_iters = max(worst_iters, it)
        composite[:, :, stream] = x
        traces.append(np.array(objs))
    return _assemble(composite, obs, converged=converged, iterations=worst_iters, traces=traces)


def _lasso_objective(f_sel, y, x, reg) -> float:
    fit = 0.5 * float(np.sum(np.abs(y - f_sel @ x) ** 2))
    return fit + reg * float(np.sum(_group_norms(x)))


def gamsse_estimate(obs, true_tap_variance: np.ndarray) -> ChannelEstimate:
    """Genie-aided per-tap LMMSE shrinkage applied to the anti-aliasing estimate."""
    tap_var = np.asarray(true_tap_variance, dtype=float)
    window = tap_var.size
    base = antialias_estimate(obs, window)
    # exact per-tap error variance of the comb least squares
    sigma_ls = obs.noise_var * obs.schedule.streams_per_symbol
    shrink = np.divide(
        tap_var, tap_var + sigma_ls, out=np.zeros_like(tap_var), where=(tap_var + sigma_ls) > 0
    )
    delay = DelayChannel(base.delay.data * shrink[:, None, None])
    freq = delay_to_freq(delay, obs.schedule.n_subcarriers)
    posterior = np.divide(
        tap_var * sigma_ls, tap_var + sigma_ls, out=np.zeros_like(tap_var), where=(tap_var + sigma_ls) > 0
    )
    return ChannelEstimate(freq, delay, posterior_tap_var=posterior)


def lmmse_dmrs_full(y_p: np.ndarray, r_p: np.ndarray, noise_var: float) -> FreqChannel:
    """LMMSE estimate from dense L-symbol pilots: ``Y_p R_p^H / (1 + noise_var)``."""
    r_p = np.asarray(r_p, dtype=np.complex128)
    l = r_p.shape[0]
    if np.max(np.abs(r_p.conj().T @ r_p - np.eye(l))) > 1e-8:
        raise ValueError("pilot matrix must be unitary")
    return FreqChannel(np.einsum("krj,lj->krl", np.asarray(y_p), r_p.conj()) / (1.0 + noise_var))


def aliased_delay_profile(obs, stream: int) -> np.ndarray:
    """Full-width delay projection of one stream's comb observation, (K, n_obs).

    Uniform sub-sampling by A makes this exactly A replicas of the true
    delay profile at offsets ``r * K / A`` (replica ``r`` rotated by the
    unit phase ``exp(2j*pi*a*r/A)`` for residue class ``a``).
    """
    sched = obs.schedule
    k, a = sched.n_subcarriers, sched.streams_per_symbol
    omega = sched.omega(stream)
    masked = np.zeros((k, obs.data.shape[2]), dtype=np.complex128)
    masked[omega] = obs.data[sched.symbol_of(stream), omega, :]
    return a * np.sqrt(k) * np.fft.ifft(masked, axis=0)


def estimate(obs, cfg: EstimatorConfig, true_tap_variance: np.ndarray | None = None) -> ChannelEstimate:
    """Dispatch to the estimator selected by ``cfg.kind``."""
    if cfg.kind == "antialias":
        return antialias_estimate(obs, cfg.window)
    if cfg.kind == "ls":
        return ls_estimate(obs)
    if cfg.kind == "omp":
        return omp_estimate(obs, cfg)
    if cfg.kind == "lasso":
        return lasso_estimate(obs, cfg)
    if cfg.kind == "gamsse":
        if true_tap_variance is None:
            raise ValueError("gamsse requires the true per-tap variance")
        return gamsse_estimate(obs, true_tap_variance[: cfg.window])
    raise ValueError(f"unknown estimator kind {cfg.kind!r}")

"""Time-varying covariance model of late reverberation.

For one frequency bin the stacked observation ``x~_l`` (current frame plus
``stack_length - 1`` past frames, ``D = n_mics * stack_length`` entries) is
modeled as zero-mean complex Gaussian with covariance::

    R_l = sum_{d=0}^{L_d-1} v_{l-d} R~_d + R~_v

where ``v`` is the time-varying source variance, ``R~_d`` the spatial
covariance of tap ``d`` and ``R~_v`` a time-invariant noise covariance. By
causality, ``R~_d`` is nonzero only on its leading ``n_mics * (d + 1)`` block
(clipped to ``D``). ``stack_length = 1`` is the original-input model.

All arrays carry a leading frequency axis so that a batch of independent bins
is processed at once; frames are 0-based.
"""

from dataclasses import dataclass

import numpy as np

from .hermitian import hermitize, inv_logdet, psd_floor
from .stft import SpectrogramTensor

__all__ = [
    "ModelConfig",
    "FrequencyModel",
    "NumericalBreakdown",
    "METHOD_PRESETS",
    "config_for_method",
    "tap_block_size",
    "stack_observation",
    "stack_observations",
    "assemble_mixture_covariance",
    "precision_and_logdet",
    "negative_log_likelihood",
    "init_parameters",
    "renormalize_scale",
    "check_zero_pattern",
    "floor_covariances",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
COND_LIMIT = 1e12


class NumericalBreakdown(ArithmeticError):
    """Non-finite cost or singular covariance, with its location attached."""

    def __init__(self, message, frequency=None, frame=None):
        self.frequency = frequency
        self.frame = frame
        where = []
        if frequency is not None:
            where.append("frequency={}".format(frequency))
        if frame is not None:
            where.append("frame={}".format(frame))
        if where:
            message = "{} ({})".format(message, ", ".join(where))
        super().__init__(message)


@dataclass
class ModelConfig:
    """Model dimensions and optimizer settings.

    ``stack_length = 1`` selects the original-input model. For stacked inputs
    the tap blocks must fit, so ``tap_length <= stack_length``.
    """

    n_mics: int = 2
    tap_length: int = 6
    stack_length: int = 6
    n_iterations: int = 20
    pd_floor_rel: float = 1e-7
    variance_floor_rel: float = 1e-10

    def __post_init__(self):
        if self.n_mics < 1:
            raise ValueError("n_mics must be >= 1")
        if self.tap_length < 1:
            raise ValueError("tap_length must be >= 1")
        if self.stack_length < 1:
            raise ValueError("stack_length must be >= 1")
        if self.stack_length > 1 and self.tap_length > self.stack_length:
            raise ValueError(
                "tap_length ({}) must not exceed stack_length ({}) for stacked inputs".format(
                    self.tap_length, self.stack_length
                )
            )
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")

    @property
    def dim(self) -> int:
        return self.n_mics * self.stack_length


METHOD_PRESETS = {
    "proposed1": dict(tap_length=6, stack_length=1),
    "proposed2": dict(tap_length=6, stack_length=6),
    # single tap, late reverberation left to the time-invariant noise term
    "tiv": dict(tap_length=1, stack_length=6),
    "nctf_mono": dict(n_mics=1, tap_length=6, stack_length=1),
}


def config_for_method(method: str, **overrides) -> ModelConfig:
    """Build the :class:`ModelConfig` of a named method.

    ``proposed2`` keeps ``stack_length == tap_length`` when ``tap_length`` is
    overridden.
    """
    if method not in METHOD_PRESETS:
        raise ValueError("unknown method {!r}; choose from {}".format(method, sorted(METHOD_PRESETS)))
    kwargs = dict(METHOD_PRESETS[method])
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if method == "nctf_mono":
        overrides.pop("n_mics", None)
    if method == "proposed2" and "tap_length" in overrides:
        overrides.setdefault("stack_length", overrides["tap_length"])
    kwargs.update(overrides)
    cfg = ModelConfig(**kwargs)
    if method == "proposed1" and cfg.stack_length != 1:
        raise ValueError("proposed1 requires stack_length == 1")
    if method == "proposed2" and cfg.stack_length != cfg.tap_length:
        raise ValueError("proposed2 requires stack_length == tap_length")
    if method == "tiv" and (cfg.tap_length != 1 or cfg.stack_length < 2):
        raise ValueError("tiv requires tap_length == 1 and stack_length > 1")
    if method == "nctf_mono" and (cfg.n_mics != 1 or cfg.stack_length != 1):
        raise ValueError("nctf_mono requires n_mics == 1 and stack_length == 1")
    return cfg


def tap_block_size(d: int, n_mics: int, stack_length: int) -> int:
    """Size of the nonzero leading block of tap ``d``."""
    return min(n_mics * (d + 1), n_mics * stack_length)


@dataclass
class FrequencyModel:
    """Parameters of a batch of frequency bins.

    Attributes:
        source_variance: ``(F, T)`` nonnegative source variances.
        tap_covariances: ``(F, L_d, D, D)`` tap covariances with exact zeros
            outside each leading block.
        noise_covariance: ``(F, D, D)`` full PD noise covariance.
        n_mics: channels per frame in the stacked vector.
        frequencies: ``(F,)`` bin indices, used for error reporting.
        variance_floor: ``(F,)`` lower bound applied to ``source_variance``.
    """

    source_variance: np.ndarray
    tap_covariances: np.ndarray
    noise_covariance: np.ndarray
    n_mics: int
    frequencies: np.ndarray = None
    variance_floor: np.ndarray = None

    def __post_init__(self):
        n_freq = self.source_variance.shape[0]
        if self.frequencies is None:
            self.frequencies = np.arange(n_freq)
        if self.variance_floor is None:
            self.variance_floor = np.zeros(n_freq)

    @property
    def n_freq(self) -> int:
        return self.source_variance.shape[0]

    @property
    def n_frames(self) -> int:
        return self.source_variance.shape[1]

    @property
    def tap_length(self) -> int:
        return self.tap_covariances.shape[1]

    @property
    def dim(self) -> int:
        return self.noise_covariance.shape[-1]

    @property
    def stack_length(self) -> int:
        return self.dim // self.n_mics

    def block_size(self, d: int) -> int:
        return tap_block_size(d, self.n_mics, self.stack_length)

    def copy(self) -> "FrequencyModel":
        return FrequencyModel(
            self.source_variance.copy(),
            self.tap_covariances.copy(),
            self.noise_covariance.copy(),
            self.n_mics,
            self.frequencies.copy(),
            self.variance_floor.copy(),
        )

    def select(self, index) -> "FrequencyModel":
        """Sub-batch of bins (``index`` is an int, slice or index array)."""
        index = np.atleast_1d(np.arange(self.n_freq)[index])
        return FrequencyModel(
            self.source_variance[index].copy(),
            self.tap_covariances[index].copy(),
            self.noise_covariance[index].copy(),
            self.n_mics,
            self.frequencies[index].copy(),
            self.variance_floor[index].copy(),
        )

    @staticmethod
    def concatenate(models) -> "FrequencyModel":
        models = list(models)
        return FrequencyModel(
            np.concatenate([m.source_variance for m in models]),
            np.concatenate([m.tap_covariances for m in models]),
            np.concatenate([m.noise_covariance for m in models]),
            models[0].n_mics,
            np.concatenate([m.frequencies for m in models]),
            np.concatenate([m.variance_floor for m in models]),
        )


def stack_observation(s: SpectrogramTensor, l: int, k: int, stack_length: int) -> np.ndarray:
    """Stacked vector ``[x_l; x_{l-1}; ...; x_{l-L_x+1}]`` at frame ``l``, bin ``k``.

    Frames before the first one are zero.
    """
    x = s.coefficients
    if not 0 <= l < x.shape[0]:
        raise IndexError("frame {} out of range [0, {})".format(l, x.shape[0]))
    n_mics = x.shape[2]
    out = np.zeros(n_mics * stack_length, dtype=complex)
    for b in range(stack_length):
        if l - b >= 0:
            out[b * n_mics : (b + 1) * n_mics] = x[l - b, k]
    return out


def stack_observations(x: np.ndarray, stack_length: int) -> np.ndarray:
    """Stack all frames at once.

    Args:
        x: ``(T, K, M)`` STFT coefficients.
        stack_length: number of stacked frames ``L_x``.

    Returns:
        ``(K, T, M * L_x)`` stacked observations.
    """
    n_frames, n_bins, n_mics = x.shape
    out = np.zeros((n_bins, n_frames, n_mics * stack_length), dtype=complex)
    xt = np.transpose(x, (1, 0, 2))
    for b in range(stack_length):
        if b < n_frames:
            out[:, b:, b * n_mics : (b + 1) * n_mics] = xt[:, : n_frames - b]
    return out


def assemble_mixture_covariance(m: FrequencyModel, l: int = None) -> np.ndarray:
    """``R_l = sum_d v_{l-d} R~_d + R~_v``; out-of-range variances count as zero.

    Returns ``(F, T, D, D)`` for all frames, or ``(F, D, D)`` when ``l`` is given.
    """
    v = m.source_variance
    taps = m.tap_covariances
    if l is not None:
        r = m.noise_covariance.copy()
        for d in range(m.tap_length):
            if l - d >= 0:
                r += v[:, l - d, None, None] * taps[:, d]
        return r
    n_freq, n_frames, dim = m.n_freq, m.n_frames, m.dim
    n_taps = min(m.tap_length, n_frames)
    shifted = np.zeros((n_freq, n_frames, n_taps), dtype=np.complex128)
    for d in range(n_taps):
        shifted[:, d:, d] = v[:, : n_frames - d]
    r = shifted @ taps[:, :n_taps].reshape(n_freq, n_taps, dim * dim)
    r = r.reshape(n_freq, n_frames, dim, dim)
    r += m.noise_covariance[:, None]
    return r


def _eig_floor_cond(r: np.ndarray) -> np.ndarray:
    lamb, u = np.linalg.eigh(hermitize(r))
    lamb = np.maximum(lamb, lamb[..., -1:] / COND_LIMIT)
    return hermitize((u * lamb[..., None, :]) @ np.swapaxes(u, -1, -2).conj())


def precision_and_logdet(r: np.ndarray, frequencies=None):
    """Inverse and log-determinant of a stack of mixture covariances.

    Frames whose condition number may exceed ``1e12`` (detected by the bound
    ``cond(R) <= tr(R) tr(R^-1)``) are eigenvalue-floored at ``lambda_max / 1e12``
    before inversion.

    Returns:
        ``(precision, logdet, r_used)`` where ``r_used`` is the (possibly
        floored) covariance both outputs refer to.
    """
    finite = np.isfinite(r).all(axis=(-1, -2))
    if not np.all(finite):
        freq, frame = _locate(np.argwhere(~finite), frequencies)
        raise NumericalBreakdown("non-finite mixture covariance", freq, frame)
    p, logdet = inv_logdet(r)
    tr_r = np.real(np.trace(r, axis1=-2, axis2=-1))
    tr_p = np.real(np.trace(p, axis1=-2, axis2=-1))
    bad = ~(tr_r * tr_p < COND_LIMIT) | np.isnan(logdet)
    if np.any(bad):
        r = r.copy()
        r[bad] = _eig_floor_cond(r[bad])
        p[bad], logdet[bad] = inv_logdet(r[bad])
    return p, logdet, r


def _locate(idx, frequencies):
    if len(idx) == 0:
        return None, None
    first = tuple(idx[0])
    freq = first[0] if frequencies is None else int(frequencies[first[0]])
    frame = first[1] if len(first) > 1 else None
    return freq, frame


def _quadratic_terms(p: np.ndarray, observations: np.ndarray) -> np.ndarray:
    if observations.ndim == p.ndim:
        # empirical covariances: tr(P Rhat)
        return np.real(np.sum(p * np.swapaxes(observations, -1, -2), axis=(-1, -2)))
    w = (p @ observations[..., None])[..., 0]
    return np.real(np.sum(observations.conj() * w, axis=-1))


def negative_log_likelihood(m: FrequencyModel, observations: np.ndarray, precision=None) -> np.ndarray:
    """Per-bin cost ``sum_l x~^H R_l^-1 x~ + log det R_l`` (constant dropped).

    Args:
        m: model for ``F`` bins.
        observations: stacked vectors ``(F, T, D)`` or empirical covariances
            ``(F, T, D, D)``.
        precision: optional precomputed ``(P, logdet)`` for ``m``.

    Returns:
        ``(F,)`` array of costs.

    Raises:
        NumericalBreakdown: if a cost is not finite.
    """
    if precision is None:
        p, logdet, _ = precision_and_logdet(assemble_mixture_covariance(m), m.frequencies)
    else:
        p, logdet = precision
    frame_cost = _quadratic_terms(p, observations) + logdet
    cost = frame_cost.sum(axis=-1)
    if not np.all(np.isfinite(cost)):
        idx = np.argwhere(~np.isfinite(frame_cost))
        freq, frame = _locate(idx, m.frequencies)
        raise NumericalBreakdown("non-finite negative log-likelihood", freq, frame)
    return cost


def _reference_power(x: np.ndarray) -> np.ndarray:
    # x: (K, T, M) -> mean power per bin, 1.0 for silent bins
    power = np.mean(np.abs(x) ** 2, axis=(1, 2))
    return np.where(power > 0, power, 1.0)


def init_parameters(s, cfg: ModelConfig, k=None) -> FrequencyModel:
    """Initial parameters for bins ``k`` (all bins by default).

    Source variance is the channel-averaged power of the current frame,
    floored at ``variance_floor_rel`` times the bin's mean power. Tap ``d`` is
    ``0.1**d`` times the identity on its block; noise is ``1e-2`` times the
    mean power times the identity. Silent bins use a reference power of 1.

    Args:
        s: :class:`SpectrogramTensor` or a raw ``(T, K, M)`` array.
        cfg: model configuration; ``cfg.n_mics`` must match the channel count.
        k: bin index, slice or index array.
    """
    x = s.coefficients if isinstance(s, SpectrogramTensor) else np.asarray(s)
    if x.size == 0:
        raise ValueError("empty spectrogram")
    if x.shape[2] != cfg.n_mics:
        raise ValueError("spectrogram has {} channels, config expects {}".format(x.shape[2], cfg.n_mics))
    freqs = np.arange(x.shape[1])
    if k is not None:
        freqs = np.atleast_1d(freqs[k])
    xk = np.transpose(x[:, freqs], (1, 0, 2))
    n_freq, n_frames, _ = xk.shape
    ref = _reference_power(xk)
    floor = cfg.variance_floor_rel * ref
    v = np.maximum(np.mean(np.abs(xk) ** 2, axis=2), floor[:, None])
    dim = cfg.dim
    taps = np.zeros((n_freq, cfg.tap_length, dim, dim), dtype=complex)
    for d in range(cfg.tap_length):
        b = tap_block_size(d, cfg.n_mics, cfg.stack_length)
        taps[:, d, :b, :b] = (0.1**d) * np.eye(b)
    noise = 1e-2 * ref[:, None, None] * np.eye(dim)[None].astype(complex)
    return FrequencyModel(v, taps, noise, cfg.n_mics, freqs, floor)


def renormalize_scale(m: FrequencyModel) -> FrequencyModel:
    """Pin the scale ambiguity between ``v`` and the taps in place.

    Every tap is divided by ``c = tr(R~_0) / n_mics`` and ``v`` is multiplied
    by ``c``, leaving every mixture covariance unchanged.
    """
    c = np.real(np.trace(m.tap_covariances[:, 0], axis1=-2, axis2=-1)) / m.n_mics
    c = np.where(c > 0, c, 1.0)
    m.tap_covariances /= c[:, None, None, None]
    m.source_variance *= c[:, None]
    return m


def check_zero_pattern(m: FrequencyModel) -> bool:
    """True when every tap is exactly zero outside its leading block."""
    for d in range(m.tap_length):
        b = m.block_size(d)
        t = m.tap_covariances[:, d]
        if np.any(t[:, b:, :] != 0) or np.any(t[:, :, b:] != 0):
            return False
    return True


def floor_covariances(m: FrequencyModel, eps_rel: float) -> FrequencyModel:
    """PD-floor every tap block and the noise covariance in place."""
    for d in range(m.tap_length):
        b = m.block_size(d)
        m.tap_covariances[:, d, :b, :b] = psd_floor(m.tap_covariances[:, d, :b, :b], eps_rel)
    m.noise_covariance[:] = psd_floor(m.noise_covariance, eps_rel)
    return m


def _pack(a: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(a.shape[-1])
    return a[..., iu[0], iu[1]]


def _unpack(packed: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    out = np.zeros(packed.shape[:-1] + (n, n), dtype=complex)
    out[..., iu[0], iu[1]] = packed
    out[..., iu[1], iu[0]] = packed.conj()
    return out


def save_checkpoint(path, m: FrequencyModel) -> None:
    """Write a versioned ``.npz`` checkpoint.

    Keys: ``format_version``, ``n_mics``, ``dim``, ``tap_length``,
    ``frequencies``, ``variance_floor``, ``source_variance`` ``(F, T)``,
    ``noise_packed`` ``(F, D(D+1)/2)`` and ``tap{d}_packed``
    ``(F, b_d(b_d+1)/2)``, each the row-major upper triangle of a Hermitian
    matrix (for taps, of the leading ``b_d`` block only).
    """
    arrays = dict(
        format_version=np.int64(CHECKPOINT_VERSION),
        n_mics=np.int64(m.n_mics),
        dim=np.int64(m.dim),
        tap_length=np.int64(m.tap_length),
        frequencies=m.frequencies,
        variance_floor=m.variance_floor,
        source_variance=m.source_variance,
        noise_packed=_pack(m.noise_covariance),
    )
    for d in range(m.tap_length):
        b = m.block_size(d)
        arrays["tap{}_packed".format(d)] = _pack(m.tap_covariances[:, d, :b, :b])
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> FrequencyModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version {}".format(version))
        n_mics = int(data["n_mics"])
        dim = int(data["dim"])
        tap_length = int(data["tap_length"])
        v = data["source_variance"]
        taps = np.zeros((v.shape[0], tap_length, dim, dim), dtype=complex)
        for d in range(tap_length):
            b = tap_block_size(d, n_mics, dim // n_mics)
            taps[:, d, :b, :b] = _unpack(data["tap{}_packed".format(d)], b)
        return FrequencyModel(
            v,
            taps,
            _unpack(data["noise_packed"], dim),
            n_mics,
            data["frequencies"],
            data["variance_floor"],
        )

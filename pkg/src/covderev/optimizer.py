"""Majorization-minimization estimation of the reverberation covariance model.

Each update family minimizes the auxiliary function with the auxiliary
variables already substituted at their optimum, so only the accumulators

* ``G_d = sum_l v_{l-d} R_l^{-1}``
* ``J_d = sum_l v_{l-d} R_l^{-1} Rhat_l R_l^{-1}``
* ``E = sum_l R_l^{-1} Rhat_l R_l^{-1}`` (with ``F = sum_l R_l^{-1}``)

are formed. Observations are either stacked vectors ``(F, T, D)`` (then
``Rhat_l = x~_l x~_l^H``) or explicit empirical covariances ``(F, T, D, D)``.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .hermitian import hermitize, inverse_geometric_mean, psd_floor
from .model import (
    FrequencyModel,
    ModelConfig,
    NumericalBreakdown,
    assemble_mixture_covariance,
    check_zero_pattern,
    init_parameters,
    negative_log_likelihood,
    precision_and_logdet,
    renormalize_scale,
    stack_observations,
)
from .stft import SpectrogramTensor

__all__ = [
    "CostTrace",
    "update_source_variance",
    "update_tap_covariances",
    "update_noise_covariance",
    "accumulate",
    "iterate",
    "fit_observations",
    "write_cost_log",
]

logger = logging.getLogger(__name__)

FAMILIES = ("source_variance", "tap_covariances", "noise_covariance")


@dataclass
class CostTrace:
    """Negative log-likelihood history.

    Attributes:
        per_iteration: ``(n_iter + 1, F)``; row 0 is the initial cost.
        per_family: ``(n_iter, 3, F)``; cost after the variance, tap and
            noise updates of each iteration.
        frequencies: ``(F,)`` bin indices.
    """

    per_iteration: np.ndarray
    per_family: np.ndarray
    frequencies: np.ndarray = field(default=None)

    @property
    def total(self) -> np.ndarray:
        return self.per_iteration.sum(axis=1)

    @property
    def total_per_family(self) -> np.ndarray:
        return self.per_family.sum(axis=2)

    def steps(self) -> np.ndarray:
        """Flattened sequence of per-bin costs after every update family."""
        n_iter = self.per_family.shape[0]
        seq = [self.per_iteration[0]]
        for t in range(n_iter):
            seq.extend(self.per_family[t])
        return np.array(seq)

    @staticmethod
    def concatenate(traces) -> "CostTrace":
        traces = list(traces)
        return CostTrace(
            np.concatenate([t.per_iteration for t in traces], axis=1),
            np.concatenate([t.per_family for t in traces], axis=2),
            np.concatenate([t.frequencies for t in traces]),
        )


def _precision(m: FrequencyModel):
    p, logdet, _ = precision_and_logdet(assemble_mixture_covariance(m), m.frequencies)
    return p, logdet


def _whitened(p: np.ndarray, observations: np.ndarray) -> np.ndarray:
    """``R^{-1} Rhat R^{-1}`` per frame."""
    if observations.ndim == p.ndim:
        return p @ observations @ p
    w = (p @ observations[..., None])[..., 0]
    return w[..., :, None] * w[..., None, :].conj()


def _shifted_variances(m: FrequencyModel) -> np.ndarray:
    """``(F, T, L_d)`` array with entry ``[f, l, d] = v_{l-d}`` (zero before frame 0)."""
    n_frames = m.n_frames
    out = np.zeros((m.n_freq, n_frames, m.tap_length))
    for d in range(min(m.tap_length, n_frames)):
        out[:, d:, d] = m.source_variance[:, : n_frames - d]
    return out


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[:-2] + (a.shape[-1] * a.shape[-2],))


def _tap_traces(a: np.ndarray, m: FrequencyModel) -> np.ndarray:
    """``Re tr(a_l R~_d)`` for every frame ``l`` and tap ``d``, shape ``(F, T, L_d)``."""
    taps = _flat(m.tap_covariances).conj()  # tr(A B) = sum_ij A_ij conj(B_ij) for Hermitian B
    return np.real(_flat(a) @ np.swapaxes(taps, -1, -2))


def accumulate(m: FrequencyModel, observations: np.ndarray, precision=None) -> dict:
    """Accumulators ``G_d``, ``J_d`` (on each tap block), ``E`` and ``F``.

    Returns a dict with lists ``G`` and ``J`` (one ``(F, b_d, b_d)`` array per
    tap) and ``(F, D, D)`` arrays ``E`` and ``F``.
    """
    p, _ = _precision(m) if precision is None else precision
    z = _whitened(p, observations)
    return _accumulate(m, p, z)


def _accumulate(m, p, z, taps=True, noise=True):
    out = {}
    dim = m.dim
    if taps:
        weights = np.swapaxes(_shifted_variances(m), -1, -2).astype(complex)
        g = (weights @ _flat(p)).reshape(m.n_freq, m.tap_length, dim, dim)
        j = (weights @ _flat(z)).reshape(m.n_freq, m.tap_length, dim, dim)
        out["G"], out["J"] = [], []
        for d in range(m.tap_length):
            b = m.block_size(d)
            out["G"].append(hermitize(g[:, d, :b, :b]))
            out["J"].append(hermitize(j[:, d, :b, :b]))
    if noise:
        out["F"] = hermitize(p.sum(axis=1))
        out["E"] = hermitize(z.sum(axis=1))
    return out


def update_source_variance(m: FrequencyModel, observations: np.ndarray, precision=None) -> FrequencyModel:
    """Multiplicative update of the source variances.

    ``v_l <- v_l * sqrt(sum_d tr(R^-1 Rhat R^-1 R~_d)_{l+d} / sum_d tr(R^-1 R~_d)_{l+d})``
    with both sums restricted to existing frames, then floored.

    Raises:
        NumericalBreakdown: if a denominator vanishes (all taps zero).
    """
    p, _ = _precision(m) if precision is None else precision
    z = _whitened(p, observations)
    n_frames = m.n_frames
    tz = _tap_traces(z, m)
    tp = _tap_traces(p, m)
    num = np.zeros_like(m.source_variance)
    den = np.zeros_like(m.source_variance)
    for d in range(min(m.tap_length, n_frames)):
        num[:, : n_frames - d] += tz[:, d:, d]
        den[:, : n_frames - d] += tp[:, d:, d]
    if np.any(den <= 0):
        idx = np.argwhere(den <= 0)[0]
        raise NumericalBreakdown(
            "zero denominator in source variance update", int(m.frequencies[idx[0]]), int(idx[1])
        )
    out = m.copy()
    v = m.source_variance * np.sqrt(np.maximum(num, 0.0) / den)
    out.source_variance = np.maximum(v, m.variance_floor[:, None])
    return out


def update_tap_covariances(
    m: FrequencyModel,
    observations: np.ndarray,
    precision=None,
    pd_floor_rel: float = 1e-7,
    renormalize: bool = True,
) -> FrequencyModel:
    """Geometric-mean update ``R~_d <- G_d^{-1} # (R~_d J_d R~_d)`` on each tap block.

    Entries outside the block stay exactly zero. Bins where ``G_d`` is not
    positive definite keep their previous tap (logged). The result is
    PD-floored and, by default, scale-renormalized.
    """
    p, _ = _precision(m) if precision is None else precision
    z = _whitened(p, observations)
    acc = _accumulate(m, p, z, noise=False)
    out = m.copy()
    for d in range(m.tap_length):
        b = m.block_size(d)
        g = acc["G"][d]
        x = m.tap_covariances[:, d, :b, :b]
        c = hermitize(x @ acc["J"][d] @ x)
        ok = np.linalg.eigvalsh(g)[:, 0] > 0
        if not np.all(ok):
            logger.warning(
                "tap %d: G not positive definite at bins %s, tap left unchanged",
                d,
                m.frequencies[~ok].tolist(),
            )
        if np.any(ok):
            new = inverse_geometric_mean(g[ok], c[ok])
            out.tap_covariances[ok, d, :b, :b] = psd_floor(new, pd_floor_rel)
    if renormalize:
        renormalize_scale(out)
    return out


def update_noise_covariance(
    m: FrequencyModel, observations: np.ndarray, precision=None, pd_floor_rel: float = 1e-7
) -> FrequencyModel:
    """Geometric-mean update ``R~_v <- F^{-1} # (R~_v E R~_v)`` with ``F = sum_l R_l^{-1}``."""
    p, _ = _precision(m) if precision is None else precision
    z = _whitened(p, observations)
    acc = _accumulate(m, p, z, taps=False)
    x = m.noise_covariance
    c = hermitize(x @ acc["E"] @ x)
    out = m.copy()
    out.noise_covariance = psd_floor(inverse_geometric_mean(acc["F"], c), pd_floor_rel)
    return out


def fit_observations(m: FrequencyModel, observations: np.ndarray, n_iterations: int, pd_floor_rel: float = 1e-7, callback=None):
    """Run ``n_iterations`` MM rounds on a batch of bins.

    Update order per round: source variances, all taps (then scale
    renormalization), noise covariance. Each family inverts the mixture
    covariances assembled from the latest parameters once and reuses them;
    the same inverses give the cost of the state they were computed from.

    Args:
        m: initial model (not modified).
        observations: ``(F, T, D)`` vectors or ``(F, T, D, D)`` covariances.
        n_iterations: number of rounds.
        pd_floor_rel: relative eigenvalue floor for covariances.
        callback: optional ``callback(iteration, model)`` after each round.

    Returns:
        ``(model, CostTrace)``.
    """
    m = m.copy()
    per_iter = np.zeros((n_iterations + 1, m.n_freq))
    per_family = np.zeros((n_iterations, 3, m.n_freq))
    prec = _precision(m)
    per_iter[0] = negative_log_likelihood(m, observations, prec)
    for t in range(n_iterations):
        m = update_source_variance(m, observations, prec)
        prec = _precision(m)
        per_family[t, 0] = negative_log_likelihood(m, observations, prec)

        m = update_tap_covariances(m, observations, prec, pd_floor_rel)
        prec = _precision(m)
        per_family[t, 1] = negative_log_likelihood(m, observations, prec)

        m = update_noise_covariance(m, observations, prec, pd_floor_rel)
        prec = _precision(m)
        per_family[t, 2] = negative_log_likelihood(m, observations, prec)
        per_iter[t + 1] = per_family[t, 2]

        if not check_zero_pattern(m):
            raise AssertionError("tap zero pattern violated at iteration {}".format(t))
        if callback is not None:
            callback(t, m)
    return m, CostTrace(per_iter, per_family, m.frequencies.copy())


def iterate(s, cfg: ModelConfig, chunk_size: int = 32, callback=None):
    """Fit the model to every frequency bin of a spectrogram.

    Bins are processed independently in chunks of ``chunk_size``. If a chunk
    breaks down numerically, its bins are refitted one by one; failing bins
    keep their initialization and a :class:`NumericalBreakdown` naming the
    first failing bin is raised at the end, with the partial
    ``(model, trace)`` attached as ``exc.partial``.

    Args:
        s: :class:`SpectrogramTensor` or raw ``(T, K, M)`` coefficients.
        cfg: model configuration.
        chunk_size: bins per vectorized batch.
        callback: forwarded to :func:`fit_observations` per chunk.

    Returns:
        ``(model, CostTrace)`` covering all bins in order.
    """
    x = s.coefficients if isinstance(s, SpectrogramTensor) else np.asarray(s)
    obs_all = stack_observations(x, cfg.stack_length)
    n_bins = x.shape[1]
    models, traces, failures = [], [], []
    for start in range(0, n_bins, chunk_size):
        idx = np.arange(start, min(start + chunk_size, n_bins))
        try:
            m0 = init_parameters(x, cfg, idx)
            m, trace = fit_observations(m0, obs_all[idx], cfg.n_iterations, cfg.pd_floor_rel, callback)
            models.append(m)
            traces.append(trace)
        except NumericalBreakdown:
            for k in idx:
                m0 = init_parameters(x, cfg, [k])
                try:
                    m, trace = fit_observations(m0, obs_all[[k]], cfg.n_iterations, cfg.pd_floor_rel, callback)
                except NumericalBreakdown as e:
                    logger.error("bin %d failed: %s", k, e)
                    failures.append(e)
                    m = m0
                    trace = CostTrace(
                        np.full((cfg.n_iterations + 1, 1), np.nan),
                        np.full((cfg.n_iterations, 3, 1), np.nan),
                        np.array([k]),
                    )
                models.append(m)
                traces.append(trace)
    model = FrequencyModel.concatenate(models)
    trace = CostTrace.concatenate(traces)
    if failures:
        first = failures[0]
        err = NumericalBreakdown(
            "optimization failed at {} bin(s): {}".format(len(failures), first),
            first.frequency,
            first.frame,
        )
        err.partial = (model, trace)
        raise err
    return model, trace


def write_cost_log(path, trace: CostTrace) -> None:
    """CSV with columns ``iteration, frequency, cost, total`` for iterations 1..n."""
    total = trace.total
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "frequency", "cost", "total"])
        for t in range(1, trace.per_iteration.shape[0]):
            for j, k in enumerate(trace.frequencies):
                writer.writerow([t, int(k), "{:.10e}".format(trace.per_iteration[t, j]), "{:.10e}".format(total[t])])

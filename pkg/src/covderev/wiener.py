"""Time-varying multichannel Wiener filtering of the stacked observation."""

import numpy as np

from .model import FrequencyModel, assemble_mixture_covariance, precision_and_logdet, stack_observations
from .stft import SpectrogramTensor

__all__ = ["apply_filter", "filter_observations"]


def filter_observations(m: FrequencyModel, observations: np.ndarray) -> np.ndarray:
    """``y_l = v_l R~_0 R_l^{-1} x~_l`` truncated to the first ``n_mics`` entries.

    Args:
        m: fitted model for ``F`` bins.
        observations: ``(F, T, D)`` stacked vectors.

    Returns:
        ``(F, T, n_mics)`` filtered coefficients.
    """
    if observations.shape[:2] != m.source_variance.shape or observations.shape[2] != m.dim:
        raise ValueError(
            "observation geometry {} does not match model ({} bins, {} frames, dim {})".format(
                observations.shape, m.n_freq, m.n_frames, m.dim
            )
        )
    p, _, _ = precision_and_logdet(assemble_mixture_covariance(m), m.frequencies)
    w = (p @ observations[..., None])[..., 0]
    n = m.n_mics
    b = m.block_size(0)
    # the first n rows of R~_0 vanish beyond its leading block
    y = np.einsum("fij,ftj->fti", m.tap_covariances[:, 0, :n, :b], w[..., :b])
    return m.source_variance[..., None] * y


def apply_filter(models: FrequencyModel, s: SpectrogramTensor, chunk_size: int = 32) -> SpectrogramTensor:
    """Dereverberated spectrogram with the same geometry as ``s``.

    ``models`` must cover every bin of ``s`` in order (as returned by
    :func:`covderev.optimizer.iterate`).
    """
    x = s.coefficients
    n_frames, n_bins, n_mics = x.shape
    if models.n_freq != n_bins or models.n_frames != n_frames or models.n_mics != n_mics:
        raise ValueError(
            "model covers {} bins x {} frames x {} mics, spectrogram is {}".format(
                models.n_freq, models.n_frames, models.n_mics, x.shape
            )
        )
    out = np.zeros_like(x, dtype=complex)
    for start in range(0, n_bins, chunk_size):
        idx = np.arange(start, min(start + chunk_size, n_bins))
        obs = stack_observations(x[:, idx], models.stack_length)
        y = filter_observations(models.select(idx), obs)
        out[:, idx] = np.transpose(y, (1, 0, 2))
    return SpectrogramTensor(out, s.frame_size, s.hop, s.n_samples)

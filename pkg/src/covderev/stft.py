"""Multichannel STFT analysis/synthesis and WAV I/O.

Spectrogram layout is ``(n_frames, n_bins, n_channels)``. Both analysis and
synthesis use a periodic square-root Hann window, and the signal is
zero-padded by ``frame_size // 2`` samples on each side so that the frame
count depends only on the signal length.
"""

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

__all__ = [
    "Waveform",
    "SpectrogramTensor",
    "analyze",
    "synthesize",
    "sqrt_hann",
    "read_wav",
    "write_wav",
]


@dataclass
class Waveform:
    """Real multichannel signal, ``samples`` shaped ``(n_samples, n_channels)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise ValueError("samples must be 1-D or (n_samples, n_channels)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class SpectrogramTensor:
    """One-sided STFT coefficients ``(n_frames, frame_size // 2 + 1, n_channels)``.

    ``n_samples`` records the length of the analyzed signal so that
    :func:`synthesize` can strip the edge padding.
    """

    coefficients: np.ndarray
    frame_size: int
    hop: int
    n_samples: int

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if c.ndim != 3:
            raise ValueError("coefficients must be (n_frames, n_bins, n_channels)")
        if c.shape[1] != self.frame_size // 2 + 1:
            raise ValueError(
                "expected {} bins for frame_size {}, got {}".format(
                    self.frame_size // 2 + 1, self.frame_size, c.shape[1]
                )
            )
        self.coefficients = c

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[1]

    @property
    def n_channels(self) -> int:
        return self.coefficients.shape[2]


def sqrt_hann(frame_size: int) -> np.ndarray:
    n = np.arange(frame_size)
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / frame_size))


def _check_geometry(frame_size: int, hop: int) -> None:
    if frame_size <= 0 or frame_size % 2:
        raise ValueError("frame_size must be a positive even integer")
    if hop <= 0 or hop > frame_size:
        raise ValueError("hop must be in [1, frame_size], got {}".format(hop))
    if frame_size % hop:
        raise ValueError("hop must divide frame_size")


def _n_frames(n_samples: int, frame_size: int, hop: int) -> int:
    return int(np.ceil(n_samples / hop)) + 1


def analyze(w: Waveform, frame_size: int = 1024, hop: int = 512) -> SpectrogramTensor:
    """Short-time Fourier transform of every channel of ``w``."""
    _check_geometry(frame_size, hop)
    x = w.samples
    if x.shape[0] == 0:
        raise ValueError("cannot analyze an empty waveform")
    n_frames = _n_frames(x.shape[0], frame_size, hop)
    half = frame_size // 2
    padded_len = (n_frames - 1) * hop + frame_size
    padded = np.zeros((padded_len, x.shape[1]))
    padded[half : half + x.shape[0]] = x
    idx = np.arange(frame_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * sqrt_hann(frame_size)[None, :, None]
    spec = np.fft.rfft(frames, axis=1)
    return SpectrogramTensor(spec, frame_size, hop, x.shape[0])


def synthesize(s: SpectrogramTensor, sample_rate: int, length: int = None) -> Waveform:
    """Weighted overlap-add inverse of :func:`analyze`.

    Args:
        s (SpectrogramTensor): Spectrogram to invert.
        sample_rate (int): Sample rate attached to the output.
        length (int, optional): Output length. Defaults to ``s.n_samples``.
    """
    frame_size, hop = s.frame_size, s.hop
    _check_geometry(frame_size, hop)
    n_frames, _, n_channels = s.coefficients.shape
    if length is None:
        length = s.n_samples
    window = sqrt_hann(frame_size)
    frames = np.fft.irfft(s.coefficients, n=frame_size, axis=1) * window[None, :, None]
    padded_len = (n_frames - 1) * hop + frame_size
    out = np.zeros((padded_len, n_channels))
    norm = np.zeros(padded_len)
    for i in range(n_frames):
        out[i * hop : i * hop + frame_size] += frames[i]
        norm[i * hop : i * hop + frame_size] += window**2
    nonzero = norm > 1e-8
    out[nonzero] /= norm[nonzero, None]
    half = frame_size // 2
    samples = out[half : half + length]
    if samples.shape[0] < length:
        samples = np.concatenate([samples, np.zeros((length - samples.shape[0], n_channels))])
    return Waveform(samples, sample_rate)


def read_wav(path) -> Waveform:
    """Read a PCM16/PCM32/float WAV file into a float waveform in ``[-1, 1]``."""
    sample_rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    return Waveform(data, int(sample_rate))


def write_wav(path, w: Waveform, subtype: str = "float32") -> None:
    """Write ``w`` as 32-bit float (default) or 16-bit PCM (``subtype="pcm16"``)."""
    x = w.samples
    if x.shape[1] == 1:
        x = x[:, 0]
    if subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif subtype == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError("unsupported WAV subtype {!r}".format(subtype))
    wavfile.write(path, int(w.sample_rate), data)

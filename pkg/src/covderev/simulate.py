"""Reverberant, noisy multichannel mixture generation.

Source images are produced by convolving a dry source with multichannel room
impulse responses. In the time-varying scenario the response at each output
position is a blend of the responses at 0, 15 and 345 degrees::

    a(n) = (1 - |alpha_n|) a_0 + max(0, alpha_n) a_15 + max(0, -alpha_n) a_345

with ``alpha`` linearly interpolated between standard-normal anchors
``beta_b`` spaced ``segment_length`` samples apart.
"""

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy import signal

from .stft import Waveform, read_wav

__all__ = [
    "DIFFUSE_AZIMUTHS",
    "ImpulseResponseSet",
    "MotionLaw",
    "ScenarioConfig",
    "Scenario",
    "substream",
    "decay_envelope",
    "synth_rir",
    "load_rir_set",
    "time_varying_atf",
    "convolve_time_varying",
    "mix_noise",
    "diffuse_noise",
    "pink_noise",
    "speech_like_source",
    "simulate_scenario",
]

DIFFUSE_AZIMUTHS = (0, 15, 30, 45, 60, 75, 90, 270, 285, 300, 315, 330, 345)
MOTION_AZIMUTHS = (0, 15, 345)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named purpose (``"rir"``, ``"motion"``, ...)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass
class ImpulseResponseSet:
    """Multichannel impulse responses keyed by azimuth in degrees.

    Each response is ``(n_taps, n_mics)``; all share the same shape.
    """

    responses: Dict[int, np.ndarray]
    sample_rate: int
    synthetic: bool = False

    def __post_init__(self):
        shapes = {np.shape(r) for r in self.responses.values()}
        if len(shapes) != 1:
            raise ValueError("all impulse responses must share one shape, got {}".format(shapes))
        for az, r in self.responses.items():
            r = np.asarray(r, dtype=np.float64)
            if r.ndim == 1:
                r = r[:, None]
            if not np.all(np.isfinite(r)):
                raise ValueError("impulse response at azimuth {} is not finite".format(az))
            self.responses[az] = r

    @property
    def n_taps(self) -> int:
        return next(iter(self.responses.values())).shape[0]

    @property
    def n_mics(self) -> int:
        return next(iter(self.responses.values())).shape[1]

    def __getitem__(self, azimuth: int) -> np.ndarray:
        try:
            return self.responses[azimuth]
        except KeyError:
            raise KeyError("no impulse response for azimuth {}".format(azimuth)) from None


@dataclass
class MotionLaw:
    """Blending coefficient ``alpha`` interpolated between anchors ``betas``.

    ``alpha[b * L + l] = (L - l) / L * betas[b] + l / L * betas[b + 1]``.
    """

    betas: np.ndarray
    segment_length: int = 4800

    @classmethod
    def draw(cls, n_samples: int, rng: np.random.Generator, segment_length: int = 4800) -> "MotionLaw":
        n_anchors = int(np.ceil(n_samples / segment_length)) + 1
        return cls(rng.standard_normal(n_anchors), segment_length)

    @classmethod
    def static(cls, n_samples: int, segment_length: int = 4800) -> "MotionLaw":
        n_anchors = int(np.ceil(n_samples / segment_length)) + 1
        return cls(np.zeros(n_anchors), segment_length)

    def alpha(self, positions) -> np.ndarray:
        positions = np.asarray(positions)
        length = self.segment_length
        b = positions // length
        l = positions - b * length
        if np.any(b + 1 >= len(self.betas)):
            raise ValueError("position beyond the last motion anchor")
        return (length - l) / length * self.betas[b] + l / length * self.betas[b + 1]


def blend_weights(alpha):
    """Weights of the 0, 15 and 345 degree responses for coefficient ``alpha``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return 1.0 - np.abs(alpha), np.maximum(0.0, alpha), np.maximum(0.0, -alpha)


def decay_envelope(t, rt60: float) -> np.ndarray:
    """Amplitude envelope ``exp(-3 ln(10) t / rt60)``: -60 dB in power at ``t = rt60``."""
    return np.exp(-3.0 * np.log(10.0) * np.asarray(t) / rt60)


def synth_rir(
    rt60: float,
    n_mics: int,
    length: int,
    seed: int,
    sample_rate: int = 16000,
    azimuths=DIFFUSE_AZIMUTHS,
    drr_db: float = 0.0,
) -> ImpulseResponseSet:
    """Exponentially decaying noise responses with a unit direct path at tap 0.

    The tail (taps ``>= 1``) is white Gaussian noise under
    :func:`decay_envelope`, scaled so that the direct-to-reverberant energy
    ratio equals ``drr_db``. Every (azimuth, channel) pair draws from its own
    seeded stream.
    """
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    if length < 2:
        raise ValueError("length must be at least 2 taps")
    t = np.arange(1, length) / sample_rate
    env = decay_envelope(t, rt60)
    scale = np.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(env**2))
    responses = {}
    for az in azimuths:
        r = np.zeros((length, n_mics))
        r[0] = 1.0
        for m in range(n_mics):
            rng = substream(seed, "rir/az{}/mic{}".format(az, m))
            r[1:, m] = scale * env * rng.standard_normal(length - 1)
        responses[int(az)] = r
    return ImpulseResponseSet(responses, sample_rate, synthetic=True)


def load_rir_set(directory) -> ImpulseResponseSet:
    """Load ``az{deg:03d}.wav`` multichannel responses from ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(str(directory))
    responses, rate = {}, None
    for path in sorted(directory.glob("az*.wav")):
        w = read_wav(path)
        rate = w.sample_rate if rate is None else rate
        if w.sample_rate != rate:
            raise ValueError("mixed sample rates in {}".format(directory))
        responses[int(path.stem[2:])] = w.samples
    if not responses:
        raise FileNotFoundError("no az*.wav responses in {}".format(directory))
    n_taps = max(r.shape[0] for r in responses.values())
    responses = {az: np.pad(r, ((0, n_taps - r.shape[0]), (0, 0))) for az, r in responses.items()}
    return ImpulseResponseSet(responses, rate)


def time_varying_atf(irs: ImpulseResponseSet, law: MotionLaw, position: int) -> np.ndarray:
    """Blended ``(n_taps, n_mics)`` response at sample ``position``."""
    for az in MOTION_AZIMUTHS:
        irs[az]
    w0, w15, w345 = blend_weights(law.alpha(position))
    return w0 * irs[0] + w15 * irs[15] + w345 * irs[345]


def _motion_positions(n_samples: int, block: int) -> np.ndarray:
    n = np.arange(n_samples)
    return (n // block) * block


def convolve_time_varying(source: Waveform, irs: ImpulseResponseSet, law: MotionLaw = None, block: int = 256) -> Waveform:
    """Convolve a mono source with a time-varying multichannel response.

    ``out[n, m] = sum_i a_{m, i}(p(n)) source[n - i]`` where ``p(n)`` is ``n``
    rounded down to a multiple of ``block`` (``block=1`` blends per sample).
    With ``law=None`` the 0-degree response is used throughout. The output has
    the length of the source.
    """
    x = source.samples
    if x.shape[1] != 1:
        raise ValueError("source must be single-channel")
    x = x[:, 0]
    n = x.shape[0]
    if n < irs.n_taps:
        raise ValueError("source ({} samples) shorter than the impulse response ({})".format(n, irs.n_taps))
    if law is None:
        out = signal.fftconvolve(x[:, None], irs[0], axes=0)[:n]
        return Waveform(out, source.sample_rate)
    weights = blend_weights(law.alpha(_motion_positions(n, block)))
    out = np.zeros((n, irs.n_mics))
    for w, az in zip(weights, MOTION_AZIMUTHS):
        if np.any(w != 0):
            out += w[:, None] * signal.fftconvolve(x[:, None], irs[az], axes=0)[:n]
    return Waveform(out, source.sample_rate)


def mix_noise(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add ``noise`` scaled so the utterance-level SNR equals ``snr_db``.

    Noise shorter than the clean signal is looped; longer noise is truncated.
    """
    if clean.n_channels != noise.n_channels:
        raise ValueError("channel mismatch: {} vs {}".format(clean.n_channels, noise.n_channels))
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    n = clean.n_samples
    reps = int(np.ceil(n / noise.n_samples))
    v = np.tile(noise.samples, (reps, 1))[:n]
    p_signal = np.mean(clean.samples**2)
    p_noise = np.mean(v**2)
    if p_signal <= 0:
        raise ValueError("clean signal is silent; SNR undefined")
    if p_noise <= 0:
        raise ValueError("noise is silent")
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * v, clean.sample_rate)


def pink_noise(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with a 1/f power spectrum above 20 Hz (at 16 kHz), unit variance."""
    spec = np.fft.rfft(rng.standard_normal(n_samples))
    f = np.arange(spec.shape[0]) / n_samples
    spec /= np.sqrt(np.maximum(f, 20.0 / 16000.0))
    out = np.fft.irfft(spec, n=n_samples)
    return out / np.std(out)


def diffuse_noise(
    n_samples: int,
    irs: ImpulseResponseSet,
    rng: np.random.Generator,
    noise_source: Optional[Waveform] = None,
):
    """Approximately diffuse multichannel noise.

    When ``irs`` holds all 13 azimuths, independent excerpts of the noise
    source (or pink noise) are convolved with each azimuth's response and
    summed. Otherwise independent per-channel noise is returned.

    Returns:
        ``(noise, is_diffuse)``.
    """

    def excerpt():
        if noise_source is None:
            return pink_noise(n_samples, rng)
        src = noise_source.samples.mean(axis=1)
        if src.shape[0] <= n_samples:
            return np.tile(src, int(np.ceil(n_samples / src.shape[0])) + 1)[:n_samples]
        offset = int(rng.integers(0, src.shape[0] - n_samples))
        return src[offset : offset + n_samples]

    if all(az in irs.responses for az in DIFFUSE_AZIMUTHS):
        out = np.zeros((n_samples, irs.n_mics))
        for az in DIFFUSE_AZIMUTHS:
            out += signal.fftconvolve(excerpt()[:, None], irs[az], axes=0)[:n_samples]
        return Waveform(out, irs.sample_rate), True
    out = np.stack([excerpt() for _ in range(irs.n_mics)], axis=1)
    return Waveform(out, irs.sample_rate), False


def _resonator(freq: float, bandwidth: float, fs: int):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    return [1.0 - r], [1.0, -2 * r * np.cos(theta), r * r]


def speech_like_source(duration: float, sample_rate: int, seed: int) -> Waveform:
    """Nonstationary speech-like test signal.

    Alternates voiced syllables (glottal pulse train with drifting pitch
    through three formant resonators), unvoiced fricative bursts and pauses,
    so the short-time power varies strongly over time as in real speech.
    Peak amplitude is 0.5.
    """
    rng = substream(seed, "source")
    fs = sample_rate
    n_total = int(round(duration * fs))
    out = np.zeros(n_total)
    pos = int(0.1 * fs)
    while pos < n_total:
        kind = rng.choice(["voiced", "voiced", "voiced", "fricative", "pause"])
        if kind == "pause":
            pos += int(rng.uniform(0.05, 0.35) * fs)
            continue
        if kind == "voiced":
            n = int(rng.uniform(0.12, 0.32) * fs)
            f0 = rng.uniform(95, 210) * (1 + 0.15 * np.linspace(-1, 1, n) * rng.choice([-1, 1]))
            phase = np.cumsum(f0 / fs)
            pulses = np.diff(np.floor(phase), prepend=0.0)
            b, a = signal.butter(2, 900 / (fs / 2))
            seg = signal.lfilter(b, a, pulses)
            for f_lo, f_hi, bw in ((280, 850, 90), (850, 2300, 120), (2300, 3300, 180)):
                bb, aa = _resonator(rng.uniform(f_lo, f_hi), bw, fs)
                seg = seg + 0.6 * signal.lfilter(bb, aa, seg)
            seg += 0.02 * np.std(seg) * rng.standard_normal(n)
        else:
            n = int(rng.uniform(0.05, 0.15) * fs)
            b, a = signal.butter(4, rng.uniform(2500, 4500) / (fs / 2), btype="high")
            seg = 0.3 * signal.lfilter(b, a, rng.standard_normal(n))
        env = np.sin(np.pi * np.arange(n) / n) ** 0.5
        seg = seg * env * rng.uniform(0.3, 1.0) / (np.max(np.abs(seg)) + 1e-12)
        end = min(pos + n, n_total)
        out[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.0, 0.08) * fs)
    out *= 0.5 / (np.max(np.abs(out)) + 1e-12)
    return Waveform(out, fs)


@dataclass
class ScenarioConfig:
    """Mixture generation settings.

    ``source_paths`` empty means a synthetic speech-like source of
    ``duration`` seconds; ``rir_dir`` ``None`` means synthetic responses.
    """

    source_paths: List[str] = field(default_factory=list)
    rir_dir: Optional[str] = None
    noise_path: Optional[str] = None
    rt60: float = 0.61
    drr_db: float = 0.0
    rir_length: Optional[int] = None
    snr_db: float = 20.0
    scenario: str = "time-invariant"
    seed: int = 0
    n_mics: int = 2
    sample_rate: int = 16000
    duration: float = 10.0
    segment_length: int = 4800
    blend_block: int = 256

    def __post_init__(self):
        if self.scenario not in ("time-invariant", "time-varying"):
            raise ValueError("scenario must be 'time-invariant' or 'time-varying'")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.rir_dir is None and self.rt60 <= 0:
            raise ValueError("rt60 must be positive for synthetic responses")
        if self.blend_block < 1 or self.segment_length < 1:
            raise ValueError("blend_block and segment_length must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    mixture: Waveform
    reference: Waveform
    manifest: dict

    def manifest_json(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True)


def simulate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Generate one mixture and its dry reference.

    Randomness comes from named substreams of ``cfg.seed``: ``source``,
    ``rir``, ``motion`` and ``noise``.
    """
    if cfg.source_paths:
        parts = [read_wav(p) for p in cfg.source_paths]
        rate = parts[0].sample_rate
        if any(p.sample_rate != rate for p in parts):
            raise ValueError("source files have different sample rates")
        source = Waveform(np.concatenate([p.samples.mean(axis=1) for p in parts]), rate)
    else:
        source = speech_like_source(cfg.duration, cfg.sample_rate, cfg.seed)

    if cfg.rir_dir is not None:
        irs = load_rir_set(cfg.rir_dir)
        if irs.sample_rate != source.sample_rate:
            raise ValueError("impulse responses and source differ in sample rate")
    else:
        length = cfg.rir_length or int(round(1.25 * cfg.rt60 * source.sample_rate))
        irs = synth_rir(cfg.rt60, cfg.n_mics, length, cfg.seed, source.sample_rate, drr_db=cfg.drr_db)

    n = source.n_samples
    if cfg.scenario == "time-varying":
        law = MotionLaw.draw(n, substream(cfg.seed, "motion"), cfg.segment_length)
        image = convolve_time_varying(source, irs, law, cfg.blend_block)
    else:
        law = None
        image = convolve_time_varying(source, irs, None)

    noise_src = read_wav(cfg.noise_path) if cfg.noise_path else None
    noise, is_diffuse = diffuse_noise(n, irs, substream(cfg.seed, "noise"), noise_src)
    mixture = mix_noise(image, noise, cfg.snr_db)

    manifest = dict(
        config=cfg.to_dict(),
        n_samples=n,
        sample_rate=source.sample_rate,
        synthetic_rir=irs.synthetic,
        noise_model="diffuse" if is_diffuse else "uncorrelated",
        motion_betas=None if law is None else [float(b) for b in law.betas],
    )
    return Scenario(mixture, source, manifest)

"""Objective speech-quality measures: CD, LLR and FWSegSNR.

Settings follow the usual REVERB-challenge conventions: 25 ms Hamming frames
with a 10 ms shift, LPC order 12, 24 cepstral coefficients. Frames are
scored only where the reference is active (frame energy within 40 dB of the
loudest reference frame).
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal
from scipy.linalg import solve_toeplitz

from .stft import Waveform

__all__ = [
    "MetricsReport",
    "frame_signal",
    "lpc",
    "lpc_to_cepstrum",
    "align",
    "cepstrum_distance",
    "llr",
    "fwsegsnr",
    "evaluate",
    "mel_filterbank",
    "write_metrics_csv",
    "summarize",
]

FRAME_SEC = 0.025
SHIFT_SEC = 0.010
LPC_ORDER = 12
CEP_ORDER = 24
ACTIVE_DB = 40.0
CD_CLAMP = (0.0, 10.0)
SNR_CLAMP = (-10.0, 35.0)
N_BANDS = 25
GAMMA = 0.2
LLR_KEEP = 0.95


def _mono(x) -> np.ndarray:
    if isinstance(x, Waveform):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("metrics take single-channel signals")
        x = x[:, 0]
    return x


def _rate(*ws, default=16000) -> int:
    for w in ws:
        if isinstance(w, Waveform):
            return w.sample_rate
    return default


def frame_signal(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Hamming-windowed ``(n_frames, frame_len)`` frames of ``x``."""
    frame_len = int(round(FRAME_SEC * sample_rate))
    shift = int(round(SHIFT_SEC * sample_rate))
    if x.shape[0] < frame_len:
        raise ValueError("signal shorter than one {} ms frame".format(1000 * FRAME_SEC))
    n_frames = 1 + (x.shape[0] - frame_len) // shift
    idx = np.arange(frame_len)[None, :] + shift * np.arange(n_frames)[:, None]
    return x[idx] * np.hamming(frame_len)[None, :]


def _active(frames_ref: np.ndarray) -> np.ndarray:
    energy = np.sum(frames_ref**2, axis=1)
    if energy.max() <= 0:
        raise ValueError("reference signal is silent")
    return energy >= energy.max() * 10.0 ** (-ACTIVE_DB / 10.0)


def _autocorr(frame: np.ndarray, order: int) -> np.ndarray:
    n = frame.shape[0]
    return np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])


def lpc(r: np.ndarray) -> Optional[np.ndarray]:
    """LPC polynomial ``[1, a_1, ..., a_p]`` from autocorrelation ``r[0..p]``.

    Returns ``None`` for a silent or numerically unstable frame.
    """
    if r[0] <= 0:
        return None
    try:
        a = solve_toeplitz(r[:-1], -r[1:])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(a)):
        return None
    return np.concatenate([[1.0], a])


def lpc_to_cepstrum(a: np.ndarray, n_coef: int = CEP_ORDER) -> np.ndarray:
    """Cepstrum ``c_1..c_n`` of the all-pole model ``1 / A(z)`` (gain excluded)."""
    p = a.shape[0] - 1
    c = np.zeros(n_coef + 1)
    for n in range(1, n_coef + 1):
        acc = -a[n] if n <= p else 0.0
        for k in range(max(1, n - p), n):
            acc -= (k / n) * c[k] * a[n - k]
        c[n] = acc
    return c[1:]


def align(ref, est, max_lag: int = 1024) -> np.ndarray:
    """Shift ``est`` to the cross-correlation peak with ``ref`` (|lag| <= ``max_lag``)
    and trim/zero-pad it to the reference length."""
    ref = _mono(ref)
    est = _mono(est)
    n = ref.shape[0]
    xc = signal.correlate(est, ref, mode="full", method="fft")
    lags = np.arange(-n + 1, est.shape[0])
    keep = np.abs(lags) <= max_lag
    lag = int(lags[keep][np.argmax(xc[keep])]) if np.any(xc[keep] != 0) else 0
    if lag >= 0:
        shifted = est[lag:]
    else:
        shifted = np.concatenate([np.zeros(-lag), est])
    out = np.zeros(n)
    m = min(n, shifted.shape[0])
    out[:m] = shifted[:m]
    return out


def _prepare(ref, est, do_align):
    rate = _rate(ref, est)
    r = _mono(ref)
    e = align(r, est) if do_align else _fit_length(_mono(est), r.shape[0])
    fr = frame_signal(r, rate)
    fe = frame_signal(e, rate)
    return fr, fe, _active(fr), rate


def _fit_length(x, n):
    out = np.zeros(n)
    out[: min(n, x.shape[0])] = x[:n]
    return out


def cepstrum_distance(ref, est, do_align: bool = True) -> float:
    """Mean cepstral distance in dB over active frames, each clamped to ``[0, 10]``."""
    fr, fe, active, _ = _prepare(ref, est, do_align)
    values = []
    for i in np.flatnonzero(active):
        a_ref = lpc(_autocorr(fr[i], LPC_ORDER))
        a_est = lpc(_autocorr(fe[i], LPC_ORDER))
        if a_ref is None or a_est is None:
            values.append(CD_CLAMP[1])
            continue
        diff = lpc_to_cepstrum(a_ref) - lpc_to_cepstrum(a_est)
        cd = 10.0 / np.log(10.0) * np.sqrt(2.0 * np.sum(diff**2))
        values.append(min(max(cd, CD_CLAMP[0]), CD_CLAMP[1]))
    return float(np.mean(values))


def llr(ref, est, do_align: bool = True, return_skipped: bool = False):
    """Log-likelihood ratio averaged over the smallest 95 % of active frames.

    Frames where either LPC fit fails are skipped; pass ``return_skipped`` to
    also get their count.
    """
    fr, fe, active, _ = _prepare(ref, est, do_align)
    values, skipped = [], 0
    for i in np.flatnonzero(active):
        r_ref = _autocorr(fr[i], LPC_ORDER)
        a_ref = lpc(r_ref)
        a_est = lpc(_autocorr(fe[i], LPC_ORDER))
        if a_ref is None or a_est is None:
            skipped += 1
            continue
        toep = r_ref[np.abs(np.subtract.outer(np.arange(LPC_ORDER + 1), np.arange(LPC_ORDER + 1)))]
        num = a_est @ toep @ a_est
        den = a_ref @ toep @ a_ref
        values.append(max(np.log(num / den), 0.0))
    if not values:
        out = float("nan")
    else:
        values = np.sort(values)
        keep = max(1, int(round(LLR_KEEP * len(values))))
        out = float(np.mean(values[:keep]))
    return (out, skipped) if return_skipped else out


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, sample_rate: int, n_bands: int = N_BANDS) -> np.ndarray:
    """``(n_bands, n_fft // 2 + 1)`` triangular filters on a mel scale up to Nyquist."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_bands + 2))
    fb = np.zeros((n_bands, freqs.shape[0]))
    for j in range(n_bands):
        lo, c, hi = edges[j], edges[j + 1], edges[j + 2]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[j] = np.maximum(0.0, np.minimum(up, down))
    return fb


def fwsegsnr(ref, est, do_align: bool = True) -> float:
    """Frequency-weighted segmental SNR in dB.

    Per frame, magnitude spectra are normalized to unit sum, pooled into mel
    bands, and the band SNRs ``10 log10(S^2 / (S - S_est)^2)`` clamped to
    ``[-10, 35]`` dB are averaged with weights ``S^0.2``.
    """
    fr, fe, active, rate = _prepare(ref, est, do_align)
    n_fft = int(2 ** np.ceil(np.log2(fr.shape[1])))
    fb = mel_filterbank(n_fft, rate)
    spec_r = np.abs(np.fft.rfft(fr[active], n=n_fft, axis=1))
    spec_e = np.abs(np.fft.rfft(fe[active], n=n_fft, axis=1))
    spec_r /= np.sum(spec_r, axis=1, keepdims=True)
    sum_e = np.sum(spec_e, axis=1, keepdims=True)
    spec_e = np.divide(spec_e, sum_e, out=np.zeros_like(spec_e), where=sum_e > 0)
    band_r = spec_r @ fb.T
    band_e = spec_e @ fb.T
    err = (band_r - band_e) ** 2
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(band_r**2 / err)
    snr = np.clip(np.nan_to_num(snr, nan=SNR_CLAMP[0], posinf=SNR_CLAMP[1]), *SNR_CLAMP)
    weight = band_r**GAMMA
    seg = np.sum(weight * snr, axis=1) / np.sum(weight, axis=1)
    return float(np.mean(np.clip(seg, *SNR_CLAMP)))


@dataclass
class MetricsReport:
    cd_db: float
    llr: float
    fwsegsnr_db: float
    utterance: str = ""
    scenario: str = ""
    method: str = ""
    pesq: str = "n/a"


def evaluate(ref, est, utterance: str = "", scenario: str = "", method: str = "") -> MetricsReport:
    """All three measures after a single alignment of ``est`` to ``ref``."""
    r = _mono(ref)
    e = align(r, est)
    rate = _rate(ref, est)
    r = Waveform(r, rate)
    e = Waveform(e, rate)
    return MetricsReport(
        cepstrum_distance(r, e, do_align=False),
        llr(r, e, do_align=False),
        fwsegsnr(r, e, do_align=False),
        utterance,
        scenario,
        method,
    )


CSV_COLUMNS = ["utterance", "scenario", "method", "cd_db", "llr", "fwsegsnr_db", "pesq"]


def write_metrics_csv(path, reports) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [r.utterance, r.scenario, r.method, "{:.4f}".format(r.cd_db), "{:.4f}".format(r.llr),
                 "{:.4f}".format(r.fwsegsnr_db), r.pesq]
            )


def summarize(reports) -> dict:
    """Mean CD, LLR and FWSegSNR per ``(scenario, method)``."""
    groups = {}
    for r in reports:
        groups.setdefault((r.scenario, r.method), []).append(r)
    out = {}
    for key, rs in groups.items():
        out[key] = dict(
            cd_db=float(np.mean([r.cd_db for r in rs])),
            llr=float(np.mean([r.llr for r in rs])),
            fwsegsnr_db=float(np.mean([r.fwsegsnr_db for r in rs])),
            n=len(rs),
        )
    return out

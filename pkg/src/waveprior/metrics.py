"""Evaluation metrics: SI-SNR, PSNR, SI-SNR improvement, Schroeder RT60 and spectrograms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import get_window

CAP_DB = 100.0


@dataclass
class MetricReport:
    si_snr_db: float
    psnr_db: float
    si_snri_db: Optional[float] = None
    clip: str = ""

    def as_dict(self) -> dict:
        out = {"clip": self.clip, "si_snr_db": self.si_snr_db, "psnr_db": self.psnr_db}
        if self.si_snri_db is not None:
            out["si_snri_db"] = self.si_snri_db
        return out


def _pair(s, s_hat) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    s_hat = np.asarray(s_hat, dtype=np.float64).reshape(-1)
    if s.shape != s_hat.shape:
        raise ValueError(f"reference and estimate lengths differ: {s.size} vs {s_hat.size}")
    return s, s_hat


def si_snr(s, s_hat) -> float:
    """Scale-invariant SNR in dB of ``s_hat`` against reference ``s``.

    No mean removal is applied. Returns +100 dB when the residual is
    numerically zero relative to the projected target.
    """
    s, s_hat = _pair(s, s_hat)
    ref_energy = np.dot(s, s)
    if ref_energy == 0.0:
        raise ValueError("si_snr: reference is all zeros, projection undefined")
    target = (np.dot(s, s_hat) / ref_energy) * s
    err = s_hat - target
    t_energy = np.dot(target, target)
    e_energy = np.dot(err, err)
    if e_energy < 1e-20 * t_energy:
        return CAP_DB
    if t_energy == 0.0:
        return -CAP_DB
    return float(10.0 * np.log10(t_energy / e_energy))


def psnr(s, s_hat) -> float:
    """PSNR in dB, peak taken as max(s) - min(s) of the reference; capped at +100 dB."""
    s, s_hat = _pair(s, s_hat)
    peak = s.max() - s.min()
    if peak == 0.0:
        raise ValueError("psnr: reference is constant, peak range is zero")
    mse = np.mean((s - s_hat) ** 2)
    if mse < 1e-20 * peak * peak:
        return CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def si_snr_improvement(clean, corrupted, estimate) -> float:
    return si_snr(clean, estimate) - si_snr(clean, corrupted)


def evaluate(reference, estimate, corrupted=None, clip: str = "") -> MetricReport:
    sisnri = None if corrupted is None else si_snr_improvement(reference, corrupted, estimate)
    return MetricReport(si_snr(reference, estimate), psnr(reference, estimate), sisnri, clip)


def schroeder_curve(rir) -> np.ndarray:
    """Energy decay curve in dB, normalised to 0 dB at t = 0."""
    energy = np.asarray(rir, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def estimate_rt60(rir, sample_rate: int = 16000) -> float:
    """Reverberation time from the Schroeder decay curve.

    A line is fitted to the -5 dB .. -25 dB span of the decay curve and
    extrapolated to 60 dB (three times T20). The -25 dB point must be reached
    before the last 10% of the response; later than that the curve is shaped
    by truncation rather than by decay.
    """
    rir = np.asarray(rir, dtype=np.float64).reshape(-1)
    if not np.any(rir):
        raise ValueError("estimate_rt60: impulse response has no energy")
    edc = schroeder_curve(rir)
    below25 = np.flatnonzero(edc <= -25.0)
    if below25.size == 0 or below25[0] >= 0.9 * rir.size:
        raise ValueError("estimate_rt60: insufficient decay (energy decay curve never reaches -25 dB)")
    start = np.flatnonzero(edc <= -5.0)[0]
    stop = below25[0]
    idx = np.arange(start, stop + 1)
    slope, _ = np.polyfit(idx / sample_rate, edc[idx], 1)
    if slope >= 0:
        raise ValueError("estimate_rt60: insufficient decay (non-negative decay slope)")
    return float(-60.0 / slope)


def stft_magnitude(w, frame: int = 1024, hop: int = 256, window: str = "hann") -> np.ndarray:
    """log10(1 + |STFT|) as a (frames × bins) matrix. For visualisation only."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size < frame:
        raise ValueError(f"stft_magnitude: signal of {w.size} samples is shorter than frame {frame}")
    n_frames = 1 + (w.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    win = get_window(window, frame, fftbins=True)
    spec = np.fft.rfft(w[idx] * win, axis=1)
    return np.log10(1.0 + np.abs(spec))

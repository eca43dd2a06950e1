"""WAV I/O, atomic file writes, synthetic test signals and experiment configs."""

from __future__ import annotations

import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
from scipy.io import wavfile

from .corruption import SAMPLE_RATE, Waveform

log = logging.getLogger(__name__)


class WavFormatError(ValueError):
    """The file is not mono 16 kHz PCM16 / float32 WAV."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def wav_read(path) -> Waveform:
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz (no resampling)")
    if data.ndim != 1:
        raise WavFormatError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: sample format {data.dtype}, expected PCM16 or float32")
    return Waveform(samples, rate)


def wav_bytes(w: Waveform, fmt: str = "float32") -> tuple[bytes, int]:
    """Encode to WAV bytes; returns (bytes, number of clipped samples)."""
    samples = np.asarray(w.samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("cannot write an empty waveform")
    if not np.isfinite(samples).all():
        raise ValueError("cannot write non-finite samples")
    clipped = 0
    if fmt == "pcm16":
        clipped = int(np.count_nonzero(np.abs(samples) > 1.0))
        data = np.clip(np.round(np.clip(samples, -1.0, 1.0) * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; expected 'pcm16' or 'float32'")
    buf = io.BytesIO()
    wavfile.write(buf, w.sample_rate, data)
    return buf.getvalue(), clipped


def wav_write(path, w: Waveform, fmt: str = "float32") -> int:
    """Write a mono WAV atomically; returns the count of samples clipped to [-1, 1]."""
    data, clipped = wav_bytes(w, fmt)
    if clipped:
        log.warning("%s: clipped %d samples outside [-1, 1]", path, clipped)
    atomic_write_bytes(path, data)
    return clipped


def synth_signal(kind: str, duration_s: float = 1.0, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Deterministic stand-ins for real recordings, peak-normalised to 0.8.

    multisine: 3-5 distinct harmonics (orders 1-8) of f0 in [110, 440] Hz
    with amplitudes in [0.3, 1] and random phases; chirp: linear sweep;
    am_tone: amplitude-modulated sine.
    """
    if not 0.25 <= duration_s <= 4.0:
        raise ValueError(f"duration must be in [0.25, 4] s, got {duration_s}")
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    if kind == "multisine":
        f0, freqs, amps = multisine_components(seed)
        phases = rng.uniform(0, 2 * np.pi, len(freqs))
        x = sum(a * np.sin(2 * np.pi * f * t + p) for f, a, p in zip(freqs, amps, phases))
    elif kind == "chirp":
        f_lo, f_hi = rng.uniform(100, 300), rng.uniform(1500, 4000)
        x = np.sin(2 * np.pi * (f_lo * t + 0.5 * (f_hi - f_lo) / duration_s * t**2))
    elif kind == "am_tone":
        carrier, mod = rng.uniform(200, 1000), rng.uniform(2, 8)
        x = (1.0 + 0.8 * np.sin(2 * np.pi * mod * t)) * np.sin(2 * np.pi * carrier * t)
    else:
        raise ValueError(f"unknown signal kind {kind!r}; expected multisine, chirp or am_tone")
    return Waveform(0.8 * x / np.max(np.abs(x)), sample_rate)


def multisine_components(seed: int) -> tuple[float, np.ndarray, np.ndarray]:
    """(f0, component frequencies, amplitudes) drawn by :func:`synth_signal` for ``seed``."""
    rng = np.random.default_rng([seed, 7])
    f0 = rng.uniform(110, 440)
    count = int(rng.integers(3, 6))
    orders = np.sort(rng.choice(np.arange(1, 9), count, replace=False))
    return float(f0), orders * f0, rng.uniform(0.3, 1.0, count)


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Flat JSON manifest for the ablation harness.

    Keys: variants (preset names), clips (WAV paths, or ``synth:<kind>:<seed>``
    / ``synth:<kind>:<seed>:<seconds>`` for generated signals), seeds,
    noise_kind, target_sisnr_db, epochs, lr, input_noise_std,
    resample_noise, perturbation_std, metric_every,
    base_channels, output (CSV path), jobs.
    """

    variants: list[str] = field(default_factory=lambda: ["conv-lstm", "conv-glu", "conv4"])
    clips: list[str] = field(default_factory=lambda: [f"synth:multisine:{i}:0.5" for i in range(3)])
    seeds: list[int] = field(default_factory=lambda: [0])
    noise_kind: str = "uniform"
    target_sisnr_db: float = 2.5
    epochs: int = 3000
    lr: float = 1e-4
    input_noise_std: float = 0.1
    resample_noise: bool = False
    perturbation_std: Optional[float] = None
    metric_every: int = 10
    base_channels: Optional[int] = None
    output: str = "ablation.csv"
    jobs: int = 1

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}; allowed: {sorted(known)}")
        cfg = cls(**raw)
        from .architectures import PRESETS

        for v in cfg.variants:
            if v not in PRESETS:
                raise ValueError(f"unknown preset {v!r}; available presets: {', '.join(PRESETS)}")
        for clip in cfg.clips:
            if not clip.startswith("synth:"):
                p = Path(clip) if base_dir is None else base_dir / clip
                if not p.exists():
                    raise FileNotFoundError(f"clip {clip} does not exist")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        raw = json.loads(path.read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw, path.parent)


def load_clip(spec: str, base_dir: Path | None = None) -> Waveform:
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise ValueError(f"bad synthetic clip spec {spec!r}; use synth:<kind>:<seed>[:<seconds>]")
        duration = float(parts[3]) if len(parts) == 4 else 0.5
        return synth_signal(parts[1], duration, int(parts[2]))
    p = Path(spec) if base_dir is None else base_dir / spec
    return wav_read(p)

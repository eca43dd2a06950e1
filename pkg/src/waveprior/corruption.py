"""Corruptions: calibrated additive noise, image-source reverberation, inpainting masks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import butter, fftconvolve, sosfilt

from .metrics import si_snr

SAMPLE_RATE = 16000
SPEED_OF_SOUND = 343.0

DEFAULT_ROOM = (6.0, 5.0, 3.0)
DEFAULT_SOURCE = (2.0, 1.5, 1.5)
DEFAULT_MIC = (4.0, 3.5, 1.5)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if self.samples.size else 0.0


def as_waveform(x, sample_rate: int = SAMPLE_RATE) -> Waveform:
    return x if isinstance(x, Waveform) else Waveform(x, sample_rate)


@dataclass
class CorruptionSpec:
    kind: str
    target_sisnr_db: Optional[float] = None
    rt60_s: Optional[float] = None
    room_dims_m: tuple = DEFAULT_ROOM
    source_pos_m: tuple = DEFAULT_SOURCE
    mic_pos_m: tuple = DEFAULT_MIC
    mask_ms: Optional[float] = None
    mask_start_sample: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind in ("gaussian", "uniform"):
            if self.target_sisnr_db is None or not np.isfinite(self.target_sisnr_db):
                raise ValueError(f"{self.kind} noise needs a finite target_sisnr_db")
        elif self.kind == "reverb":
            if self.rt60_s is None or not 0 < self.rt60_s <= 2:
                raise ValueError(f"reverb needs rt60_s in (0, 2], got {self.rt60_s}")
        elif self.kind == "mask":
            if self.mask_ms is None or not 0.5 <= self.mask_ms <= 20:
                raise ValueError(f"mask needs mask_ms in [0.5, 20], got {self.mask_ms}")
        else:
            raise ValueError(f"unknown corruption kind {self.kind!r}")


@dataclass
class MaskInterval:
    start_sample: int
    length_samples: int
    sample_rate: int = SAMPLE_RATE

    @property
    def stop_sample(self) -> int:
        return self.start_sample + self.length_samples

    def boolean(self, length: int) -> np.ndarray:
        """Boolean array of ``length`` samples, True inside the interval."""
        if self.start_sample < 0 or self.stop_sample > length:
            raise ValueError(
                f"mask [{self.start_sample}, {self.stop_sample}) lies outside a clip of {length} samples"
            )
        m = np.zeros(length, dtype=bool)
        m[self.start_sample : self.stop_sample] = True
        return m

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "MaskInterval":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - {"start_sample", "length_samples", "sample_rate"}
        if unknown:
            raise ValueError(f"mask file {path}: unknown keys {sorted(unknown)}")
        return cls(int(raw["start_sample"]), int(raw["length_samples"]), int(raw["sample_rate"]))


# ---------------------------------------------------------------------------
# additive noise
# ---------------------------------------------------------------------------

def draw_noise(kind: str, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        return rng.standard_normal(n)
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    raise ValueError(f"unknown noise kind {kind!r}; expected 'gaussian' or 'uniform'")


def add_noise(clean, kind: str, target_sisnr_db: float, seed: int = 0, tol_db: float = 1e-6) -> Waveform:
    """Add white noise scaled so SI-SNR(clean, clean + g·noise) hits the target.

    The gain is found by bisection in log-gain. Fails if the clean signal is
    silent or the search does not converge within 200 iterations.
    """
    clean = as_waveform(clean)
    s = clean.samples
    if clean.rms() == 0.0:
        raise ValueError("add_noise: clean signal is silent")
    if not np.isfinite(target_sisnr_db):
        raise ValueError(f"add_noise: target must be finite, got {target_sisnr_db}")
    noise = draw_noise(kind, s.size, seed)

    def level(log_g: float) -> float:
        return si_snr(s, s + np.exp(log_g) * noise)

    # SI-SNR falls as the gain grows; widen the bracket until it straddles the target
    lo = hi = np.log(clean.rms() / np.sqrt(np.mean(noise**2))) - target_sisnr_db / 20.0 * np.log(10.0)
    for _ in range(100):
        if level(lo) > target_sisnr_db:
            break
        lo -= 2.0
    for _ in range(100):
        if level(hi) < target_sisnr_db:
            break
        hi += 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        got = level(mid)
        if abs(got - target_sisnr_db) < tol_db:
            return Waveform(s + np.exp(mid) * noise, clean.sample_rate)
        if got > target_sisnr_db:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"add_noise: gain bisection did not converge to {target_sisnr_db} dB")


# ---------------------------------------------------------------------------
# reverberation
# ---------------------------------------------------------------------------

def sabine_absorption(room_dims_m, rt60_s: float) -> float:
    """Diffuse-field (Sabine) absorption for ``rt60_s``, reported in error messages."""
    lx, ly, lz = room_dims_m
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    return float(0.1611 * volume / (surface * rt60_s))


def _image_sources(room, src, mic, max_dist):
    """Distances and wall-reflection counts of all images within ``max_dist`` of the mic."""
    n_max = np.ceil(max_dist / (2.0 * room)).astype(int) + 1
    axes = []
    for d in range(3):
        n = np.arange(-n_max[d], n_max[d] + 1)
        nn, qq = np.meshgrid(n, np.array([0, 1]), indexing="ij")
        nn, qq = nn.ravel(), qq.ravel()
        # q=1 mirrors the source; |2n - q| walls are crossed along this axis
        axes.append(((1 - 2 * qq) * src[d] + 2 * nn * room[d] - mic[d], np.abs(2 * nn - qq)))
    (dx, rx), (dy, ry), (dz, rz) = axes
    dist = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2).ravel()
    refl = (rx[:, None, None] + ry[None, :, None] + rz[None, None, :]).ravel()
    keep = dist <= max_dist
    order = np.argsort(dist[keep], kind="stable")
    return dist[keep][order], refl[keep][order]


def _image_decay_time(dist: np.ndarray, refl: np.ndarray, loss: float, grid_hz: float = 4000.0) -> float:
    """T20-based 60 dB decay time of the image set's energy decay curve.

    ``loss`` is the energy lost per reflection in nepers, -ln(1 - a). The
    decay curve is evaluated from exact arrival times (no interpolation onto
    the sample grid) and a least-squares line is fitted over -5 .. -25 dB.
    """
    energy = np.exp(-loss * refl) / dist**2
    tail = np.cumsum(energy[::-1])[::-1]
    times = dist / SPEED_OF_SOUND
    grid = np.arange(times[0], times[-1], 1.0 / grid_hz)
    edc = tail[np.searchsorted(times, grid, side="left")]
    level = 10.0 * np.log10(edc / tail[0])
    below = np.flatnonzero(level <= -25.0)
    if below.size == 0:
        return np.inf
    first = np.argmax(level <= -5.0)
    if below[0] - first < 2:
        # the direct path alone carries the first 25 dB
        return 0.0
    span = slice(first, below[0] + 1)
    slope = np.polyfit(grid[span] - grid[first], level[span], 1)[0]
    return float(-60.0 / slope) if slope < 0 else np.inf


def wall_absorption(room_dims_m, rt60_s: float, source_pos_m=DEFAULT_SOURCE, mic_pos_m=DEFAULT_MIC) -> float:
    """Uniform wall absorption giving ``rt60_s`` in this room.

    The decay of a shoebox image lattice is slower than diffuse-field
    formulas predict (axial paths between parallel walls lose energy at the
    lowest rate), so the absorption is found by bisection on the energy
    decay of the image set itself. Raises if even 0.99 absorption decays
    too slowly, which happens when long paths stretch the early decay.
    """
    room = np.asarray(room_dims_m, dtype=np.float64)
    src = np.asarray(source_pos_m, dtype=np.float64)
    mic = np.asarray(mic_pos_m, dtype=np.float64)
    dist, refl = _image_sources(room, src, mic, (rt60_s + 0.1) * SPEED_OF_SOUND)
    lo, hi = 1e-4, -np.log(1.0 - 0.99)
    if _image_decay_time(dist, refl, hi) > rt60_s:
        raise ValueError(
            f"rt60 {rt60_s} s needs wall absorption > 0.99 in room {tuple(room.tolist())} "
            f"(Sabine estimate {sabine_absorption(room, rt60_s):.2f}); "
            f"use a smaller room, closer source and mic, or a longer rt60"
        )
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        if _image_decay_time(dist, refl, mid) > rt60_s:
            lo = mid
        else:
            hi = mid
    return float(1.0 - np.exp(-np.sqrt(lo * hi)))


def generate_rir(
    room_dims_m=DEFAULT_ROOM,
    source_pos_m=DEFAULT_SOURCE,
    mic_pos_m=DEFAULT_MIC,
    rt60_s: float = 0.2,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Shoebox room impulse response by the image source method.

    Every wall reflects with coefficient sqrt(1 - a), ``a`` from
    :func:`wall_absorption`; images are enumerated until they arrive later
    than rt60 + 0.1 s. Each image is spread over two neighbouring samples by
    linear interpolation of its fractional delay. As in Allen and Berkley's
    formulation the response is high-passed (2nd-order Butterworth, 50 Hz):
    all image amplitudes are positive, and without it the dense late tail
    sums coherently into a DC drift that stretches the decay. The result is
    scaled so the direct path peaks at unit amplitude.
    """
    room = np.asarray(room_dims_m, dtype=np.float64)
    src = np.asarray(source_pos_m, dtype=np.float64)
    mic = np.asarray(mic_pos_m, dtype=np.float64)
    if room.shape != (3,) or np.any(room <= 0):
        raise ValueError(f"room dimensions must be three positive lengths, got {room_dims_m}")
    for name, pos in (("source", src), ("microphone", mic)):
        if pos.shape != (3,) or np.any(pos <= 0) or np.any(pos >= room):
            raise ValueError(f"{name} position {tuple(pos)} is not strictly inside room {tuple(room)}")
    if rt60_s <= 0:
        raise ValueError(f"rt60 must be positive, got {rt60_s}")
    absorption = wall_absorption(room, rt60_s, src, mic)
    beta = np.sqrt(1.0 - absorption)
    max_dist = (rt60_s + 0.1) * SPEED_OF_SOUND
    dist, refl = _image_sources(room, src, mic, max_dist)

    direct = dist[0]
    amp = beta**refl * (direct / dist)
    delay = dist / SPEED_OF_SOUND * sample_rate
    base = np.floor(delay).astype(int)
    frac = delay - base
    rir = np.zeros(int(np.ceil(max_dist / SPEED_OF_SOUND * sample_rate)) + 2)
    np.add.at(rir, base, amp * (1.0 - frac))
    np.add.at(rir, base + 1, amp * frac)
    rir = sosfilt(butter(2, 50.0, "highpass", fs=sample_rate, output="sos"), rir)
    return rir / np.max(np.abs(rir[base[0] : base[0] + 2]))


def apply_reverb(clean, rir, normalize: bool = True) -> Waveform:
    """Convolve with ``rir``, truncate to the clean length, optionally match the clean peak."""
    clean = as_waveform(clean)
    rir = np.asarray(rir, dtype=np.float64).reshape(-1)
    if rir.size == 0:
        raise ValueError("apply_reverb: impulse response is empty")
    wet = fftconvolve(clean.samples, rir)[: clean.samples.size]
    if normalize:
        peak = np.max(np.abs(wet))
        if peak > 0:
            wet = wet * (np.max(np.abs(clean.samples)) / peak)
    return Waveform(wet, clean.sample_rate)


# ---------------------------------------------------------------------------
# inpainting masks
# ---------------------------------------------------------------------------

def mask_length(mask_ms: float, sample_rate: int = SAMPLE_RATE) -> int:
    return int(round(mask_ms * sample_rate / 1000.0))


def sample_mask(clean, mask_ms: float, seed: int = 0, guard: int = 8, max_tries: int = 1000) -> MaskInterval:
    """Draw a non-silent gap: segment RMS must reach 10% of the whole-clip RMS.

    ``guard`` samples at each end of the clip are never masked.
    """
    clean = as_waveform(clean)
    s = clean.samples
    clip_rms = clean.rms()
    if clip_rms == 0.0:
        raise ValueError("sample_mask: clip is silent")
    length = mask_length(mask_ms, clean.sample_rate)
    hi = s.size - guard - length
    if hi <= guard:
        raise ValueError(
            f"sample_mask: clip of {s.size} samples too short for a {length}-sample mask "
            f"with {guard}-sample guards"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        start = int(rng.integers(guard, hi + 1))
        seg = s[start : start + length]
        if np.sqrt(np.mean(seg**2)) >= 0.1 * clip_rms:
            return MaskInterval(start, length, clean.sample_rate)
    raise RuntimeError("sample_mask: no non-silent segment found")


def apply_mask(clean, m: MaskInterval) -> Waveform:
    clean = as_waveform(clean)
    out = clean.samples.copy()
    out[m.boolean(out.size)] = 0.0
    return Waveform(out, clean.sample_rate)


def corrupt(clean, spec: CorruptionSpec):
    """Apply ``spec``; returns (corrupted waveform, mask interval or None)."""
    clean = as_waveform(clean)
    if spec.kind in ("gaussian", "uniform"):
        return add_noise(clean, spec.kind, spec.target_sisnr_db, spec.seed), None
    if spec.kind == "reverb":
        rir = generate_rir(spec.room_dims_m, spec.source_pos_m, spec.mic_pos_m, spec.rt60_s, clean.sample_rate)
        return apply_reverb(clean, rir), None
    if spec.mask_start_sample is not None:
        m = MaskInterval(spec.mask_start_sample, mask_length(spec.mask_ms, clean.sample_rate), clean.sample_rate)
    else:
        m = sample_mask(clean, spec.mask_ms, spec.seed)
    return apply_mask(clean, m), m

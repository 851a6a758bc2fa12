"""Synthetic clean/noise clips, SNR-exact mixing, WAV I/O and manifests.

The generator stands in for a real speech corpus: harmonic voiced segments
with drifting pitch and formant-like resonances alternate with band-limited
fricative noise. Every sample is reproducible from (seed, kind, snr_db)
alone, so a manifest fully defines a dataset. User-supplied WAV pairs can be
mixed through the same records (kind "file").
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, lfilter_zi

from nsexit.dsp import SAMPLE_RATE, TimeSignal, as_samples, log_power, stft

log = logging.getLogger(__name__)

NOISE_KINDS = ("white", "pink", "babble", "hum")


@dataclass
class MixtureSpec:
    seed: int
    snr_db: float
    clip_seconds: float = 4.0
    level_db: float = -3.0
    kind: str = "white"

    def __post_init__(self):
        if not -10.0 <= self.snr_db <= 40.0:
            raise ValueError(f"snr_db {self.snr_db} outside [-10, 40]")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")


@dataclass
class Clip:
    clean: TimeSignal
    noise: TimeSignal
    noisy: TimeSignal
    spec: MixtureSpec | None = None


class SilentSignalError(ValueError):
    pass


# --------------------------------------------------------------- speech source

def _pitch_contour(rng, n: int) -> np.ndarray:
    """Slow random-walk fundamental in [80, 300] Hz."""
    ctrl_rate = 50  # control points per second
    n_ctrl = max(int(np.ceil(n / SAMPLE_RATE * ctrl_rate)) + 2, 4)
    walk = np.cumsum(rng.normal(0.0, 4.0, n_ctrl))
    base = rng.uniform(110.0, 240.0)
    ctrl = np.clip(base + walk, 80.0, 300.0)
    t = np.arange(n) / SAMPLE_RATE * ctrl_rate
    return np.interp(t, np.arange(n_ctrl), ctrl)


def _resonator_coeffs(freq: float, bandwidth: float):
    r = np.exp(-np.pi * bandwidth / SAMPLE_RATE)
    theta = 2.0 * np.pi * freq / SAMPLE_RATE
    return np.array([1.0 - r]), np.array([1.0, -2.0 * r * np.cos(theta), r * r])


def _formant_filter(rng, x: np.ndarray) -> np.ndarray:
    """Parallel bank of 2-4 slowly drifting resonators, applied blockwise."""
    n_res = rng.integers(2, 5)
    block = 320  # 20 ms
    centers = rng.uniform(300.0, 3200.0, n_res)
    bws = rng.uniform(120.0, 350.0, n_res)
    out = np.zeros_like(x)
    states = [None] * n_res
    for start in range(0, len(x), block):
        seg = x[start:start + block]
        centers = np.clip(centers + rng.normal(0.0, 15.0, n_res), 300.0, 3500.0)
        for j in range(n_res):
            b, a = _resonator_coeffs(centers[j], bws[j])
            if states[j] is None:
                states[j] = lfilter_zi(b, a) * seg[0]
            y, states[j] = lfilter(b, a, seg, zi=states[j])
            out[start:start + block] += y
    return out / n_res


def synth_speech_like(seed, seconds: float) -> TimeSignal:
    """Deterministic speech-like signal: voiced harmonic runs alternating with
    weaker high-band noise bursts; always starts voiced, never silent."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(seconds * SAMPLE_RATE))
    f0 = _pitch_contour(rng, n)
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    # harmonic stack, 1/k amplitudes, silenced above 4 kHz
    voiced = np.zeros(n)
    for k in range(1, int(4000.0 / 80.0) + 1):
        amp = np.where(k * f0 < 4000.0, 1.0 / k, 0.0)
        voiced += amp * np.sin(k * phase)
    voiced = _formant_filter(rng, voiced)
    # syllabic energy modulation
    syll = 0.4 + 0.6 * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.0) *
                              np.arange(n) / SAMPLE_RATE + rng.uniform(0, 2 * np.pi)) ** 2
    voiced *= syll

    hiss = rng.standard_normal(n)
    b, a = butter(4, [2000.0, 7000.0], btype="band", fs=SAMPLE_RATE)
    hiss = lfilter(b, a, hiss)
    hiss *= 0.25 * np.std(voiced) / max(np.std(hiss), 1e-12)

    # alternate segments, voiced first; short raised-cosine edges avoid clicks
    gate = np.zeros(n)
    pos, is_voiced = 0, True
    while pos < n:
        dur = rng.uniform(0.15, 0.4) if is_voiced else rng.uniform(0.05, 0.15)
        seg = min(int(dur * SAMPLE_RATE), n - pos)
        gate[pos:pos + seg] = 1.0 if is_voiced else 0.0
        pos += seg
        is_voiced = not is_voiced
    gate = np.convolve(gate, np.hanning(81) / np.sum(np.hanning(81)), mode="same")

    x = voiced * gate + hiss * (1.0 - gate)
    x *= 0.1 / max(np.std(x), 1e-12)
    return TimeSignal(x)


# ------------------------------------------------------------------ noise kinds

def synth_noise(seed, kind: str, seconds: float) -> TimeSignal:
    """Unit-variance noise of the requested kind, deterministic per (seed, kind)."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    rng = np.random.default_rng([_seed_ints(seed), _kind_tag(kind)])
    n = int(round(seconds * SAMPLE_RATE))
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        k = np.arange(len(spec), dtype=np.float64)
        k[0] = 1.0
        spec *= k ** -0.5
        spec[0] = 0.0
        x = np.fft.irfft(spec, n=n)
    elif kind == "babble":
        x = np.zeros(n)
        for j in range(6):
            x += synth_speech_like([_seed_ints(seed), 1000 + j], seconds).samples
    else:  # hum
        t = np.arange(n) / SAMPLE_RATE
        x = np.zeros(n)
        for m in range(1, 6):
            x += (1.0 / m) * np.sin(2.0 * np.pi * 50.0 * m * t + rng.uniform(0, 2 * np.pi))
        x += 1e-3 * rng.standard_normal(n)
    x = x / np.std(x)
    return TimeSignal(x)


def _seed_ints(seed):
    if isinstance(seed, (list, tuple)):
        raise ValueError("composite seeds not supported here; pass an int")
    return int(seed) & 0xFFFFFFFFFFFF


def _kind_tag(kind: str) -> int:
    return NOISE_KINDS.index(kind) + 7


# ----------------------------------------------------------------------- mixing

def mix_at_snr(clean, noise, snr_db: float) -> Clip:
    """Scale the noise so clean/noise power ratio hits snr_db exactly."""
    c = as_samples(clean)
    d = as_samples(noise)
    if len(c) != len(d):
        raise ValueError(f"length mismatch: clean {len(c)} vs noise {len(d)}")
    p_clean = float(np.mean(c ** 2))
    p_noise = float(np.mean(d ** 2))
    if p_clean < 1e-16:
        raise SilentSignalError("clean signal is silent")
    if p_noise < 1e-16:
        raise SilentSignalError("noise signal is silent")
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = d * scale
    return Clip(clean=TimeSignal(c), noise=TimeSignal(scaled),
                noisy=TimeSignal(c + scaled))


def normalize_clip_level(clip: Clip, level_db: float = -3.0) -> Clip:
    """Scale all three signals so the noisy peak sits at level_db dBFS;
    the noisy track is re-summed so the additive identity stays exact."""
    peak = float(np.max(np.abs(clip.noisy.samples)))
    gamma = 10.0 ** (level_db / 20.0) / max(peak, 1e-12)
    c = clip.clean.samples * gamma
    d = clip.noise.samples * gamma
    return Clip(clean=TimeSignal(c), noise=TimeSignal(d), noisy=TimeSignal(c + d),
                spec=clip.spec)


# -------------------------------------------------------------------- manifests

@dataclass
class ClipRecord:
    seed: int
    kind: str
    snr_db: float
    split: str = "train"
    clean_path: str | None = None
    noise_path: str | None = None


def write_manifest(path, records: list[ClipRecord], clip_seconds: float):
    lines = [f"# nsexit-manifest v1 clip_seconds={clip_seconds:g} sample_rate={SAMPLE_RATE}"]
    for r in records:
        fields = [str(r.seed), r.kind, f"{r.snr_db:.6f}", r.split]
        if r.kind == "file":
            fields += [r.clean_path, r.noise_path]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    """Returns (records, meta). Meta holds clip_seconds from the header line."""
    meta = {"clip_seconds": None}
    records = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("clip_seconds="):
                    meta["clip_seconds"] = float(token.split("=", 1)[1])
            continue
        fields = line.split("\t")
        if len(fields) == 1:
            fields = line.split()
        if len(fields) not in (4, 6):
            raise ValueError(f"{path}:{ln}: expected 4 or 6 fields, got {len(fields)}")
        rec = ClipRecord(seed=int(fields[0]), kind=fields[1], snr_db=float(fields[2]),
                         split=fields[3])
        if rec.kind == "file":
            if len(fields) != 6:
                raise ValueError(f"{path}:{ln}: file records need clean and noise paths")
            rec.clean_path, rec.noise_path = fields[4], fields[5]
        elif rec.kind not in NOISE_KINDS:
            raise ValueError(f"{path}:{ln}: unknown noise kind {rec.kind!r}")
        records.append(rec)
    return records, meta


def make_clip(record: ClipRecord, clip_seconds: float, base_dir=None) -> Clip:
    """Materialise one manifest record into a level-normalised Clip."""
    n = int(round(clip_seconds * SAMPLE_RATE))
    if record.kind == "file":
        base = Path(base_dir) if base_dir else Path(".")
        clean = _fit_length(wav_read(base / record.clean_path).samples, n)
        noise = _fit_length(wav_read(base / record.noise_path).samples, n)
    else:
        clean = synth_speech_like([record.seed, 0], clip_seconds).samples
        noise = synth_noise(record.seed * 2 + 1, record.kind, clip_seconds).samples
    clip = mix_at_snr(clean, noise, record.snr_db)
    clip = normalize_clip_level(clip)
    clip.spec = MixtureSpec(seed=record.seed, snr_db=record.snr_db,
                            clip_seconds=clip_seconds, kind=record.kind)
    return clip


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    reps = int(np.ceil(n / len(x)))
    return np.tile(x, reps)[:n]


# ----------------------------------------------------------------------- wav io

def wav_write(path, signal):
    x = as_samples(signal)
    q = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(q.tobytes())


def wav_read(path) -> TimeSignal:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: channels must be 1, got {fh.getnchannels()}")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: sample width must be 2 bytes (PCM-16), "
                             f"got {fh.getsampwidth()}")
        if fh.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: sample rate must be {SAMPLE_RATE}, "
                             f"got {fh.getframerate()}")
        n = fh.getnframes()
        if n == 0:
            raise ValueError(f"{path}: empty file (zero frames)")
        data = np.frombuffer(fh.readframes(n), dtype="<i2")
    return TimeSignal(data.astype(np.float64) / 32767.0)


# ------------------------------------------------------------------- clip cache

class ClipSet:
    """Spectral tensors for a manifest, precomputed once for training/eval.

    features: (N, T, 257) float32 log-power of the noisy input
    noisy / clean: (N, T, 257) complex64 spectrograms
    sigma: (N,) float64 clean-clip standard deviations
    """

    def __init__(self, records: list[ClipRecord], clip_seconds: float, base_dir=None):
        feats, noisy, clean, sigmas, snrs, splits = [], [], [], [], [], []
        kept_records = []
        for rec in records:
            clip = make_clip(rec, clip_seconds, base_dir=base_dir)
            sig = float(np.std(clip.clean.samples))
            if sig < 1e-8:
                log.warning("excluding silent clip (seed=%d kind=%s)", rec.seed, rec.kind)
                continue
            x_spec = stft(clip.noisy)
            s_spec = stft(clip.clean)
            feats.append(log_power(x_spec).astype(np.float32))
            noisy.append(x_spec.astype(np.complex64))
            clean.append(s_spec.astype(np.complex64))
            sigmas.append(sig)
            snrs.append(rec.snr_db)
            splits.append(rec.split)
            kept_records.append(rec)
        if not kept_records:
            raise ValueError("no usable clips in manifest")
        self.records = kept_records
        self.clip_seconds = clip_seconds
        self.features = np.stack(feats)
        self.noisy = np.stack(noisy)
        self.clean = np.stack(clean)
        self.sigma = np.asarray(sigmas)
        self.snr_db = np.asarray(snrs)
        splits = np.asarray(splits)
        self.train_idx = np.flatnonzero(splits == "train")
        self.val_idx = np.flatnonzero(splits == "val")

    @classmethod
    def from_manifest(cls, path, clip_seconds: float | None = None) -> "ClipSet":
        """Clip length comes from the manifest header when present, then the
        clip_seconds argument, then the 4-second default."""
        records, meta = read_manifest(path)
        seconds = meta["clip_seconds"]
        if seconds is None:
            seconds = clip_seconds if clip_seconds is not None else 4.0
        return cls(records, seconds, base_dir=Path(path).parent)

    def __len__(self):
        return len(self.records)

"""Stochastic augmentation chain with per-view parameter tracking.

The chain has an ordered base part (transforms the model should become
invariant to) and an ordered variant part (transforms that keep a dedicated
embedding subspace). Each application is a Bernoulli draw; realized
parameters are drawn uniformly from declared ranges and recorded, and the
variant applications are summarized in a binary tracking vector.

Filtering follows one-of semantics: each of the four filter kinds draws its
own Bernoulli, then at most one of those that fired is applied (uniform
choice).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from . import SAMPLE_RATE
from .corpus import AudioClip, ParameterError

FILTER_KINDS = ("lowpass", "highpass", "bandpass", "bandcut")
AUG_KINDS = ("gain", "polarity_inversion", "colored_noise") + FILTER_KINDS + (
    "reverb", "distortion", "pitch_shift", "time_stretch")


@dataclass(frozen=True)
class NuclearAugmentation:
    kind: str
    probability: float
    # name -> (min, max); draw order is the dict insertion order
    parameter_ranges: tuple = ()

    def __post_init__(self):
        if self.kind not in AUG_KINDS:
            raise ParameterError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ParameterError("probability must lie in [0, 1]")
        for name, lo, hi in self.parameter_ranges:
            if lo > hi:
                raise ParameterError(f"{self.kind}.{name}: min > max")


def default_base_chain() -> list[NuclearAugmentation]:
    return [
        NuclearAugmentation("gain", 0.7, (("gain_db", -15.0, 5.0),)),
        NuclearAugmentation("polarity_inversion", 0.8),
        NuclearAugmentation("colored_noise", 0.8,
                            (("snr_db", 3.0, 30.0),
                             ("decay_db_per_octave", -2.0, 2.0))),
        NuclearAugmentation("lowpass", 0.5, (("cutoff_hz", 150.0, 7000.0),)),
        NuclearAugmentation("highpass", 0.5, (("cutoff_hz", 200.0, 2400.0),)),
        NuclearAugmentation("bandpass", 0.5,
                            (("center_hz", 200.0, 4000.0),
                             ("bandwidth_fraction", 0.5, 2.0))),
        NuclearAugmentation("bandcut", 0.3,
                            (("center_hz", 200.0, 4000.0),
                             ("bandwidth_fraction", 0.5, 2.0))),
        NuclearAugmentation("reverb", 0.5,
                            (("room_size", 0.2, 1.0), ("wet", 0.0, 1.0))),
        NuclearAugmentation("distortion", 0.6, (("drive_db", 1.0, 10.0),)),
    ]


def default_variant_chain() -> list[NuclearAugmentation]:
    return [
        NuclearAugmentation("pitch_shift", 0.5, (("semitones", -4.0, 4.0),)),
        NuclearAugmentation("time_stretch", 0.5, (("rate", 0.7, 1.3),)),
    ]


@dataclass
class ChainConfig:
    base: list = field(default_factory=default_base_chain)
    variant: list = field(default_factory=default_variant_chain)
    views_per_anchor: int = 4

    def __post_init__(self):
        kinds = [a.kind for a in self.variant]
        if len(set(kinds)) != len(kinds):
            raise ParameterError("variant kinds must be distinct")

    @property
    def n_variant(self) -> int:
        return len(self.variant)

    def to_dict(self) -> dict:
        return {
            "base": [dataclasses.asdict(a) for a in self.base],
            "variant": [dataclasses.asdict(a) for a in self.variant],
            "views_per_anchor": self.views_per_anchor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        def parse(entries):
            out = []
            for e in entries:
                ranges = tuple(tuple(r) for r in e.get("parameter_ranges", ()))
                out.append(NuclearAugmentation(e["kind"], e["probability"],
                                               ranges))
            return out
        return cls(base=parse(d["base"]), variant=parse(d["variant"]),
                   views_per_anchor=d.get("views_per_anchor", 4))


@dataclass
class AugmentationRecord:
    variant_flags: np.ndarray              # t_i, length K
    applied: list                          # [(kind, {param: value}), ...]

    def to_dict(self) -> dict:
        return {"variant_flags": [int(v) for v in self.variant_flags],
                "applied": [[k, p] for k, p in self.applied]}


# ---------------------------------------------------------------------------
# individual transforms


def _fix_length(y: np.ndarray, n: int) -> np.ndarray:
    """Center-crop or evenly zero-pad to exactly n samples."""
    if len(y) == n:
        return y
    if len(y) > n:
        start = (len(y) - n) // 2
        return y[start:start + n]
    pad = n - len(y)
    left = pad // 2
    return np.pad(y, (left, pad - left))


def _stft(y: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    y = np.pad(np.asarray(y, dtype=np.float32), (n_fft // 2, n_fft // 2))
    n_frames = 1 + (len(y) - n_fft) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    win = np.hanning(n_fft).astype(np.float32)
    return sp_fft.rfft(y[idx] * win, axis=1).T  # (bins, frames)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    # hop divides n_fft here, so fold by column blocks instead of a frame loop
    n_frames, n_fft = frames.shape
    n_blocks = n_fft // hop
    buf = np.zeros((n_frames + n_blocks, hop), dtype=frames.dtype)
    for b in range(n_blocks):
        buf[b:b + n_frames] += frames[:, b * hop:(b + 1) * hop]
    return buf.reshape(-1)[:(n_frames - 1) * hop + n_fft]


_WSUM_CACHE: dict = {}


def _istft(S: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    win = np.hanning(n_fft).astype(np.float32)
    frames = sp_fft.irfft(S.T, n=n_fft, axis=1) * win
    y = _overlap_add(frames, hop)
    key = (n_fft, hop, S.shape[1])
    if key not in _WSUM_CACHE:
        _WSUM_CACHE[key] = np.maximum(
            _overlap_add(np.tile(win ** 2, (S.shape[1], 1)), hop), 1e-8)
    y = y / _WSUM_CACHE[key]
    y = y[n_fft // 2:n_fft // 2 + length]
    if len(y) < length:
        y = np.pad(y, (0, length - len(y)))
    return y


def _phase_vocoder(S: np.ndarray, rate: float, hop: int) -> np.ndarray:
    """Stretch an STFT along time by `rate` (> 1 = faster playback)."""
    n_bins, n_frames = S.shape
    n_fft = 2 * (n_bins - 1)
    steps = np.arange(0, n_frames, rate)
    phi_adv = 2 * np.pi * hop * np.arange(n_bins) / n_fft
    S = np.concatenate([S, np.zeros((n_bins, 2))], axis=1)
    mags = np.abs(S)
    angs = np.angle(S)
    i = steps.astype(int)
    frac = steps - i
    mag = (1 - frac) * mags[:, i] + frac * mags[:, i + 1]
    dphi = angs[:, i + 1] - angs[:, i] - phi_adv[:, None]
    dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
    inc = phi_adv[:, None] + dphi
    phase = angs[:, 0][:, None] + np.concatenate(
        [np.zeros((n_bins, 1)), np.cumsum(inc[:, :-1], axis=1)], axis=1)
    # float32 cos/sin: much faster than complex exp, accuracy is ample here
    phase = phase.astype(np.float32)
    mag = mag.astype(np.float32)
    return (mag * np.cos(phase) + 1j * (mag * np.sin(phase)))


# Small hop keeps transient timing jitter well under the 2% tempo tolerance.
_PV_NFFT = 512
_PV_HOP = 64


def _stretch_samples(y: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder playback-speed change: duration /rate, pitch kept."""
    S = _stft(y, _PV_NFFT, _PV_HOP)
    S2 = _phase_vocoder(S, rate, _PV_HOP)
    return _istft(S2, _PV_NFFT, _PV_HOP, int(round(len(y) / rate)))


def _resample_samples(y: np.ndarray, ratio: float) -> np.ndarray:
    """Playback-rate resample: frequencies x ratio, duration /ratio."""
    n_out = int(round(len(y) / ratio))
    pos = np.arange(n_out) * ratio
    return np.interp(pos, np.arange(len(y)), y)


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Speed x rate (tempo x rate, duration preserved via crop/pad)."""
    if rate <= 0:
        raise ParameterError("time stretch rate must be positive")
    n = len(clip.samples)
    return clip.copy_with(_fix_length(_stretch_samples(clip.samples, rate), n))


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Multiply all frequencies by 2**(semitones/12); duration preserved."""
    if semitones == 0:
        return clip.copy_with(clip.samples.copy())
    ratio = 2.0 ** (semitones / 12.0)
    n = len(clip.samples)
    y = _resample_samples(clip.samples, ratio)
    y = _stretch_samples(y, 1.0 / ratio)
    return clip.copy_with(_fix_length(y, n))


def _colored_noise(n: int, decay_db_per_octave: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    spec = sp_fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    octaves = np.log2(np.maximum(freqs, 1.0) / 1000.0)
    spec *= 10.0 ** (decay_db_per_octave * octaves / 20.0)
    return sp_fft.irfft(spec, n)


def _butter(kind: str, params: dict):
    nyq = SAMPLE_RATE / 2
    if kind in ("lowpass", "highpass"):
        wn = np.clip(params["cutoff_hz"] / nyq, 1e-4, 0.9999)
        btype = "low" if kind == "lowpass" else "high"
        return sp_signal.butter(4, wn, btype=btype)
    center = params["center_hz"]
    bw = params["bandwidth_fraction"] * center
    lo = np.clip((center - bw / 2) / nyq, 1e-4, 0.999)
    hi = np.clip((center + bw / 2) / nyq, lo + 1e-4, 0.9999)
    btype = "bandpass" if kind == "bandpass" else "bandstop"
    return sp_signal.butter(2, [lo, hi], btype=btype)


def _reverb(y: np.ndarray, room_size: float, wet: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t60 = 0.05 + 0.45 * room_size
    ir_len = int(t60 * 1.5 * SAMPLE_RATE)
    t = np.arange(ir_len) / SAMPLE_RATE
    ir = rng.standard_normal(ir_len) * np.exp(-6.9078 * t / t60)
    ir[0] = 1.0
    wet_sig = sp_signal.fftconvolve(y, ir)[:len(y)]
    rms_in = np.sqrt(np.mean(y ** 2)) + 1e-12
    rms_wet = np.sqrt(np.mean(wet_sig ** 2)) + 1e-12
    wet_sig = wet_sig * (rms_in / rms_wet)
    return (1.0 - wet) * y + wet * wet_sig


def apply_one(clip: AudioClip, kind: str, params: dict) -> AudioClip:
    """Apply a single transform with fully realized parameters."""
    y = clip.samples
    if kind == "gain":
        out = y * 10.0 ** (params["gain_db"] / 20.0)
    elif kind == "polarity_inversion":
        out = -y
    elif kind == "colored_noise":
        noise = _colored_noise(len(y), params["decay_db_per_octave"],
                               int(params.get("noise_seed", 0)))
        rms_sig = np.sqrt(np.mean(y ** 2))
        rms_noise = np.sqrt(np.mean(noise ** 2)) + 1e-12
        target = rms_sig / 10.0 ** (params["snr_db"] / 20.0)
        out = y + noise * (target / rms_noise)
    elif kind in FILTER_KINDS:
        b, a = _butter(kind, params)
        out = sp_signal.lfilter(b, a, y)
    elif kind == "reverb":
        out = _reverb(y, params["room_size"], params["wet"],
                      int(params.get("ir_seed", 0)))
    elif kind == "distortion":
        g = 10.0 ** (params["drive_db"] / 20.0)
        out = np.tanh(g * y) / np.tanh(g)
    elif kind == "pitch_shift":
        return pitch_shift(clip, params["semitones"])
    elif kind == "time_stretch":
        return time_stretch(clip, params["rate"])
    else:
        raise ParameterError(f"unknown augmentation kind {kind!r}")
    return clip.copy_with(out)


# ---------------------------------------------------------------------------
# chain application


def _realize(aug: NuclearAugmentation, rng: np.random.Generator) -> dict:
    params = {name: float(rng.uniform(lo, hi))
              for name, lo, hi in aug.parameter_ranges}
    if aug.kind in ("colored_noise",):
        params["noise_seed"] = int(rng.integers(0, 2 ** 63 - 1))
    if aug.kind == "reverb":
        params["ir_seed"] = int(rng.integers(0, 2 ** 63 - 1))
    return params


def _grouped(chain: list) -> list:
    """Collapse consecutive filter entries into one one-of group."""
    groups: list = []
    for aug in chain:
        if aug.kind in FILTER_KINDS and groups and isinstance(groups[-1], list):
            groups[-1].append(aug)
        elif aug.kind in FILTER_KINDS:
            groups.append([aug])
        else:
            groups.append(aug)
    return groups


def apply_chain(clip: AudioClip, config: ChainConfig,
                rng_seed) -> tuple[AudioClip, AugmentationRecord]:
    """Run the full base + variant chain; returns the view and its record."""
    rng = np.random.default_rng(rng_seed)
    out = clip
    applied: list = []

    for item in _grouped(config.base):
        if isinstance(item, list):  # filter one-of group
            fired = [a for a in item if rng.random() < a.probability]
            if fired:
                chosen = fired[int(rng.integers(0, len(fired)))]
                params = _realize(chosen, rng)
                out = apply_one(out, chosen.kind, params)
                applied.append((chosen.kind, params))
        else:
            if rng.random() < item.probability:
                params = _realize(item, rng)
                out = apply_one(out, item.kind, params)
                applied.append((item.kind, params))

    flags = np.zeros(config.n_variant, dtype=np.int64)
    for k, aug in enumerate(config.variant):
        if rng.random() < aug.probability:
            params = _realize(aug, rng)
            out = apply_one(out, aug.kind, params)
            applied.append((aug.kind, params))
            flags[k] = 1

    return out, AugmentationRecord(flags, applied)

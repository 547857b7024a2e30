"""Deterministic synthetic audio corpus with exact ground-truth labels.

Clip kinds:
  harmonic_tone  -- steady tone with integer harmonics (pitch-class label)
  chord          -- sustained triad over a 24-class key vocabulary (key label)
  click_track    -- periodic click bursts (tempo label)
  noise_texture  -- colored noise, no tonal/rhythmic label
  mixture        -- chord + click track (key and tempo labels)

Every clip is a pure function of its spec; the corpus is a pure function of
its config. Per-clip RNG streams come from (master_seed, clip_index).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from . import SAMPLE_RATE

KINDS = ("harmonic_tone", "chord", "click_track", "noise_texture", "mixture")
TONAL_KINDS = ("harmonic_tone", "chord", "mixture")
RHYTHMIC_KINDS = ("click_track", "mixture")

F0_MIN, F0_MAX = 55.0, 3520.0
TEMPO_MIN, TEMPO_MAX = 50.0, 250.0

# Semitone offsets of the chord notes, relative to the tonic.
MAJOR_TRIAD = (0, 4, 7, 12)
MINOR_TRIAD = (0, 3, 7, 12)


class ParameterError(ValueError):
    """A spec or config field is outside its declared range."""


@dataclass(frozen=True)
class ClipSpec:
    kind: str
    duration: float = 12.0
    seed: int = 0
    f0: float | None = None          # Hz, harmonic_tone only
    key_class: int | None = None     # 0..23 = tonic + 12 * (0 major / 1 minor)
    tempo: float | None = None       # BPM, click_track / mixture
    amplitude: float = 0.5

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown clip kind {self.kind!r}")
        if self.duration <= 0:
            raise ParameterError("duration must be positive")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ParameterError("amplitude must lie in [0, 1]")
        if self.kind == "harmonic_tone":
            if self.f0 is None or not F0_MIN <= self.f0 <= F0_MAX:
                raise ParameterError(f"f0 must lie in [{F0_MIN}, {F0_MAX}] Hz")
        if self.kind in ("chord", "mixture"):
            if self.key_class is None or not 0 <= int(self.key_class) < 24:
                raise ParameterError("key_class must lie in 0..23")
        if self.kind in RHYTHMIC_KINDS:
            if self.tempo is None or not TEMPO_MIN <= self.tempo <= TEMPO_MAX:
                raise ParameterError(
                    f"tempo must lie in [{TEMPO_MIN}, {TEMPO_MAX}] BPM")

    @property
    def pitch_class(self) -> int | None:
        """0..11 pitch class (C=0) of the fundamental, tonal kinds only."""
        if self.kind == "harmonic_tone" and self.f0 is not None:
            midi = 69.0 + 12.0 * np.log2(self.f0 / 440.0)
            return int(np.round(midi)) % 12
        if self.key_class is not None:
            return int(self.key_class) % 12
        return None

    @property
    def tags(self) -> tuple[str, ...]:
        """Deterministic descriptive tags derived from the spec fields."""
        out = []
        if self.kind in TONAL_KINDS:
            out.append("tonal")
        if self.kind in RHYTHMIC_KINDS:
            out.append("rhythmic")
        if self.kind == "noise_texture":
            out.append("noisy")
        if self.f0 is not None:
            if self.f0 < 220.0:
                out.append("low_register")
            elif self.f0 > 880.0:
                out.append("high_register")
        if self.key_class is not None:
            out.append("minor_mode" if self.key_class >= 12 else "major_mode")
        if self.tempo is not None:
            if self.tempo >= 140.0:
                out.append("fast")
            elif self.tempo <= 100.0:
                out.append("slow")
        return tuple(out)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tags"] = list(self.tags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClipSpec":
        d = {k: v for k, v in d.items() if k != "tags"}
        return cls(**d)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    labels: ClipSpec | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def copy_with(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.labels)


def _tone(f0: float, n: int, rng: np.random.Generator,
          n_harmonics: int = 8) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    y = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        fh = f0 * h
        if fh >= SAMPLE_RATE / 2:
            break
        phase = rng.uniform(0, 2 * np.pi)
        y += np.sin(2 * np.pi * fh * t + phase) / h
    return y


def _chord(key_class: int, n: int, rng: np.random.Generator) -> np.ndarray:
    tonic = int(key_class) % 12
    minor = int(key_class) >= 12
    intervals = MINOR_TRIAD if minor else MAJOR_TRIAD
    # Tonic pinned to the octave below middle C so +/-4 semitone shifts stay
    # well inside the valid f0 band.
    root = 440.0 * 2.0 ** ((tonic - 9) / 12.0) / 2.0
    y = np.zeros(n)
    for iv in intervals:
        y += _tone(root * 2.0 ** (iv / 12.0), n, rng, n_harmonics=5)
    return y


def _click_track(tempo: float, n: int, rng: np.random.Generator) -> np.ndarray:
    period = 60.0 / tempo
    t = np.arange(n) / SAMPLE_RATE
    y = np.zeros(n)
    # 8 ms damped 2 kHz burst per beat: broadband enough to survive filtering.
    click_len = int(0.008 * SAMPLE_RATE)
    tc = np.arange(click_len) / SAMPLE_RATE
    click = np.sin(2 * np.pi * 2000.0 * tc) * np.exp(-tc / 0.002)
    pos = 0.0
    while pos < n / SAMPLE_RATE:
        i = int(round(pos * SAMPLE_RATE))
        seg = min(click_len, n - i)
        if seg > 0:
            y[i:i + seg] += click[:seg]
        pos += period
    del t
    return y


def _noise(n: int, rng: np.random.Generator) -> np.ndarray:
    # Mild random spectral tilt so textures are not all identical white noise.
    white = rng.standard_normal(n)
    decay_db_per_octave = rng.uniform(-3.0, 3.0)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    with np.errstate(divide="ignore"):
        octaves = np.log2(np.maximum(freqs, 1.0) / 1000.0)
    spec *= 10.0 ** (decay_db_per_octave * octaves / 20.0)
    return np.fft.irfft(spec, n)


def generate_clip(spec: ClipSpec) -> AudioClip:
    """Render a spec to a peak-normalized clip. Bit-identical per spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * SAMPLE_RATE))
    if spec.kind == "harmonic_tone":
        y = _tone(spec.f0, n, rng)
    elif spec.kind == "chord":
        y = _chord(spec.key_class, n, rng)
    elif spec.kind == "click_track":
        y = _click_track(spec.tempo, n, rng)
    elif spec.kind == "noise_texture":
        y = _noise(n, rng)
    elif spec.kind == "mixture":
        y = _chord(spec.key_class, n, rng)
        y = y / (np.max(np.abs(y)) + 1e-12)
        c = _click_track(spec.tempo, n, rng)
        c = c / (np.max(np.abs(c)) + 1e-12)
        y = 0.6 * y + 0.8 * c
    else:  # pragma: no cover - validate() already rejects
        raise ParameterError(spec.kind)
    peak = np.max(np.abs(y))
    if peak > 0:
        y = y * (spec.amplitude / peak)
    return AudioClip(y, SAMPLE_RATE, labels=spec)


@dataclass
class CorpusConfig:
    size: int = 96
    master_seed: int = 0
    duration: float = 12.0
    kind_weights: dict = field(default_factory=lambda: {
        "harmonic_tone": 0.35,
        "chord": 0.25,
        "click_track": 0.2,
        "mixture": 0.15,
        "noise_texture": 0.05,
    })
    tempo_range: tuple = (60, 180)   # integer BPM, inclusive

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        if "tempo_range" in d:
            d["tempo_range"] = tuple(d["tempo_range"])
        return cls(**d)


def _spec_for_index(config: CorpusConfig, i: int) -> ClipSpec:
    ss = np.random.SeedSequence([config.master_seed, i])
    rng = np.random.default_rng(ss)
    kinds = sorted(config.kind_weights)
    weights = np.array([config.kind_weights[k] for k in kinds], dtype=float)
    weights = weights / weights.sum()
    kind = kinds[rng.choice(len(kinds), p=weights)]
    f0 = key_class = tempo = None
    if kind == "harmonic_tone":
        pc = int(rng.integers(0, 12))
        octave = int(rng.integers(-1, 2))        # tonic octaves around middle C
        midi = 60 + pc + 12 * octave
        f0 = float(440.0 * 2.0 ** ((midi - 69) / 12.0))
    if kind in ("chord", "mixture"):
        key_class = int(rng.integers(0, 24))
    if kind in ("click_track", "mixture"):
        lo, hi = config.tempo_range
        tempo = float(rng.integers(lo, hi + 1))
    seed = int(ss.generate_state(2)[1])
    return ClipSpec(kind=kind, duration=config.duration, seed=seed,
                    f0=f0, key_class=key_class, tempo=tempo)


def generate_corpus(config: CorpusConfig) -> list[AudioClip]:
    """Materialize the full corpus. Pure in (config)."""
    if config.size <= 0:
        raise ParameterError("corpus size must be positive")
    return [generate_clip(_spec_for_index(config, i))
            for i in range(config.size)]


def corpus_specs(config: CorpusConfig) -> list[ClipSpec]:
    if config.size <= 0:
        raise ParameterError("corpus size must be positive")
    return [_spec_for_index(config, i) for i in range(config.size)]


def write_corpus(config: CorpusConfig, out_dir: str) -> str:
    """Write WAVs + a JSONL manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as fh:
        for i, spec in enumerate(corpus_specs(config)):
            clip = generate_clip(spec)
            wav_name = f"clip_{i:05d}.wav"
            wav_path = os.path.join(out_dir, wav_name)
            pcm = np.clip(clip.samples, -1.0, 1.0)
            wavfile.write(wav_path, SAMPLE_RATE, (pcm * 32767.0).astype(np.int16))
            rec = spec.to_dict()
            rec["path"] = wav_name
            fh.write(json.dumps(rec) + "\n")
    return manifest_path


def read_manifest(manifest_path: str) -> list[ClipSpec]:
    specs = []
    with open(manifest_path) as fh:
        for line in fh:
            rec = json.loads(line)
            rec.pop("path", None)
            specs.append(ClipSpec.from_dict(rec))
    return specs

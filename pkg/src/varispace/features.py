"""Log-mel spectrogram frontend.

A 3 s chunk at 16 kHz maps to a fixed 400 x 128 log-mel matrix: 512-sample
Hann window, 120-sample hop (48000 / 120 = 400 frames), 128 mel bins over
0-8 kHz, log(S + eps) compression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from . import CHUNK_SAMPLES, SAMPLE_RATE
from .corpus import AudioClip


class ShapeError(ValueError):
    """Input audio length does not match the configured chunk size."""


@dataclass(frozen=True)
class MelParams:
    n_fft: int = 512
    hop: int = 120
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    eps: float = 1e-5

    @property
    def n_frames(self) -> int:
        return CHUNK_SAMPLES // self.hop


@dataclass
class MelSpectrogram:
    values: np.ndarray        # (time_frames, mel_bins)
    frame_rate: float
    mel_bins: int


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(params: MelParams) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = params.n_fft // 2 + 1
    fft_freqs = np.linspace(0, SAMPLE_RATE / 2, n_bins)
    mel_pts = np.linspace(hz_to_mel(params.fmin), hz_to_mel(params.fmax),
                          params.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((params.n_mels, n_bins))
    for m in range(params.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(ctr - lo, 1e-9)
        down = (hi - fft_freqs) / max(hi - ctr, 1e-9)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_freqs(params: MelParams) -> np.ndarray:
    mel_pts = np.linspace(hz_to_mel(params.fmin), hz_to_mel(params.fmax),
                          params.n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


_FB_CACHE: dict[MelParams, np.ndarray] = {}
_WIN_CACHE: dict[int, np.ndarray] = {}


def _frame(y: np.ndarray, params: MelParams) -> np.ndarray:
    """Slice the padded signal into n_frames windows of n_fft samples."""
    n_frames = params.n_frames
    need = (n_frames - 1) * params.hop + params.n_fft
    pad = need - len(y)
    left = pad // 2
    y = np.pad(y, (left, pad - left))
    idx = (np.arange(n_frames)[:, None] * params.hop
           + np.arange(params.n_fft)[None, :])
    return y[idx]


def log_mel(clip: AudioClip, params: MelParams = MelParams()) -> MelSpectrogram:
    if len(clip.samples) != CHUNK_SAMPLES:
        raise ShapeError(
            f"expected {CHUNK_SAMPLES} samples, got {len(clip.samples)}")
    if params.n_fft not in _WIN_CACHE:
        _WIN_CACHE[params.n_fft] = np.hanning(params.n_fft)
    if params not in _FB_CACHE:
        _FB_CACHE[params] = mel_filterbank(params)
    frames = _frame(clip.samples, params) * _WIN_CACHE[params.n_fft]
    mag = np.abs(sp_fft.rfft(frames, axis=1))
    power = mag ** 2
    mel = power @ _FB_CACHE[params].T
    out = np.log(mel + params.eps)
    frame_rate = SAMPLE_RATE / params.hop
    return MelSpectrogram(out, frame_rate, params.n_mels)

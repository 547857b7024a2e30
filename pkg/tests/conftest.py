"""Shared fixtures: small deterministic corpora and reference clips."""

import numpy as np
import pytest

from varispace.corpus import ClipSpec, CorpusConfig, generate_clip, \
    generate_corpus


@pytest.fixture(scope="session")
def tone_440():
    return generate_clip(ClipSpec(kind="harmonic_tone", duration=12.0,
                                  seed=7, f0=440.0))


@pytest.fixture(scope="session")
def click_120():
    return generate_clip(ClipSpec(kind="click_track", duration=12.0,
                                  seed=11, tempo=120.0))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusConfig(size=16, master_seed=123))


def fft_peak_hz(samples: np.ndarray, sample_rate: int = 16000) -> float:
    """Frequency of the largest FFT magnitude bin, quadratic-refined."""
    window = np.hanning(len(samples))
    spec = np.abs(np.fft.rfft(samples * window))
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        if denom != 0:
            k = k + 0.5 * (a - c) / denom
    return float(k * sample_rate / len(samples))


def hps_f0_hz(samples: np.ndarray, sample_rate: int = 16000,
              lo_hz: float = 55.0, hi_hz: float = 3520.0,
              n_harmonics: int = 3) -> float:
    """Fundamental via harmonic product spectrum; robust to a weakened
    fundamental after filtering."""
    window = np.hanning(len(samples))
    spec = np.abs(np.fft.rfft(samples * window))
    hps = np.log(spec + 1e-12).copy()
    for h in range(2, n_harmonics + 1):
        hps[:len(spec) // h] += np.log(spec[::h] + 1e-12)[:len(spec) // h]
    df = sample_rate / len(samples)
    lo, hi = int(lo_hz / df), int(hi_hz / df)
    k = lo + int(np.argmax(hps[lo:hi]))
    return float(k * df)


def autocorr_tempo_bpm(samples: np.ndarray, sample_rate: int = 16000,
                       lo_bpm: float = 50.0, hi_bpm: float = 250.0) -> float:
    """Tempo from the autocorrelation peak of a smoothed onset envelope."""
    env = np.abs(samples)
    win = max(1, int(0.010 * sample_rate))
    kernel = np.ones(win) / win
    env = np.convolve(env, kernel, mode="same")
    env = env - env.mean()
    ac = np.correlate(env, env, mode="full")[len(env) - 1:]
    lag_lo = int(sample_rate * 60.0 / hi_bpm)
    lag_hi = int(sample_rate * 60.0 / lo_bpm)
    lag = lag_lo + int(np.argmax(ac[lag_lo:lag_hi + 1]))
    return 60.0 * sample_rate / lag

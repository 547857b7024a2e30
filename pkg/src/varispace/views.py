"""Chunk sampling, view generation and positive-mask assembly.

Each of N anchor tracks contributes M augmented 3 s views. Positives for a
view are the other views of the same anchor; per-variant-subspace positives
additionally require that neither view received that variant augmentation
(both tracking bits zero).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import CHUNK_SAMPLES
from .augment import AugmentationRecord, ChainConfig, apply_chain
from .corpus import AudioClip, ParameterError
from .features import MelParams, log_mel

STRATEGIES = ("same", "adjacent", "random")


class LengthError(ValueError):
    """Track too short for the requested sampling strategy."""


@dataclass
class SamplingStrategy:
    # Probability of drawing each of (same, adjacent, random), per anchor.
    mixture_weights: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        w = np.asarray(self.mixture_weights, dtype=float)
        if len(w) != 3 or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ParameterError(
                "mixture_weights must be 3 nonnegative values summing to 1")
        self.mixture_weights = tuple(float(x) for x in w)

    @classmethod
    def fixed(cls, mode: str) -> "SamplingStrategy":
        if mode not in STRATEGIES:
            raise ParameterError(f"unknown sampling strategy {mode!r}")
        w = [0.0, 0.0, 0.0]
        w[STRATEGIES.index(mode)] = 1.0
        return cls(tuple(w))

    def draw(self, rng: np.random.Generator) -> str:
        return STRATEGIES[rng.choice(3, p=self.mixture_weights)]


def sample_chunks(track: AudioClip, mode: str, m: int, rng_seed) -> list[int]:
    """Sample m chunk start offsets (in samples) under one strategy."""
    if mode not in STRATEGIES:
        raise ParameterError(f"unknown sampling strategy {mode!r}")
    n = len(track.samples)
    rng = np.random.default_rng(rng_seed)
    if mode == "adjacent":
        if n < m * CHUNK_SAMPLES:
            raise LengthError("track too short for adjacent sampling")
        slack = n - m * CHUNK_SAMPLES
        start = int(rng.integers(0, slack + 1))
        return [start + i * CHUNK_SAMPLES for i in range(m)]
    if n < CHUNK_SAMPLES:
        raise LengthError("track shorter than one chunk")
    hi = n - CHUNK_SAMPLES
    if mode == "same":
        start = int(rng.integers(0, hi + 1))
        return [start] * m
    return [int(rng.integers(0, hi + 1)) for _ in range(m)]


@dataclass
class ViewBatch:
    views: np.ndarray                 # (N*M, frames, mel_bins) float32
    anchor_id: np.ndarray             # (N*M,)
    records: list                     # N*M AugmentationRecords
    t_matrix: np.ndarray              # (N*M, K)
    views_per_anchor: int = 4

    @property
    def size(self) -> int:
        return len(self.anchor_id)


@dataclass
class PositiveMasks:
    all_invariant: np.ndarray         # (NM, NM) 0/1, zero diagonal
    per_subspace: np.ndarray          # (K, NM, NM)


def _make_view(track: AudioClip, offset: int, chain: ChainConfig,
               view_seed, mel_params: MelParams):
    chunk = AudioClip(track.samples[offset:offset + CHUNK_SAMPLES],
                      track.sample_rate, track.labels)
    out, record = apply_chain(chunk, chain, view_seed)
    spec = log_mel(out, mel_params)
    return spec.values.astype(np.float32), record


def build_batch(tracks: list[AudioClip], chain: ChainConfig,
                strategy: SamplingStrategy, rng_seed,
                mel_params: MelParams = MelParams(),
                threads: int = 1) -> ViewBatch:
    """Generate the N*M augmented spectrogram views for one batch."""
    n = len(tracks)
    if n < 2:
        raise ParameterError("need at least 2 anchor tracks per batch")
    m = chain.views_per_anchor
    jobs = []
    for a, track in enumerate(tracks):
        anchor_rng = np.random.default_rng(np.random.SeedSequence([rng_seed, a]))
        mode = strategy.draw(anchor_rng)
        offsets = sample_chunks(track, mode, m, anchor_rng)
        for v in range(m):
            jobs.append((track, offsets[v],
                         np.random.SeedSequence([rng_seed, a, v])))

    def run(job):
        track, offset, seed = job
        return _make_view(track, offset, chain, seed, mel_params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    views = np.stack([r[0] for r in results])
    records = [r[1] for r in results]
    anchor_id = np.repeat(np.arange(n), m)
    t_matrix = np.stack([rec.variant_flags for rec in records])
    return ViewBatch(views, anchor_id, records, t_matrix, views_per_anchor=m)


def build_positive_masks(batch: ViewBatch) -> PositiveMasks:
    """P(i): same anchor, i != j. P_k(i): additionally t[i,k]==t[j,k]==0."""
    a = batch.anchor_id
    same = (a[:, None] == a[None, :]).astype(np.int64)
    np.fill_diagonal(same, 0)
    t = batch.t_matrix
    clean = (t == 0).T.astype(np.int64)       # (K, NM)
    per = same[None, :, :] * clean[:, :, None] * clean[:, None, :]
    return PositiveMasks(same, per)

"""Contrastive audio representation learning with augmentation-variant subspaces.

Synthetic-corpus, CPU-only setup: every stage from waveform synthesis to
probing and retrieval is deterministic given a config and a seed.
"""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
CHUNK_SECONDS = 3.0
CHUNK_SAMPLES = int(SAMPLE_RATE * CHUNK_SECONDS)

"""Everything downstream of a checkpoint: frozen-embedding extraction,
shallow MLP probing, MIR-style metrics, KNN retrieval and cosine-distance
sweeps.

Probes train on chunk-level embeddings and are scored on track-mean
embeddings over a seeded 70/10/20 track split.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import CHUNK_SAMPLES
from .augment import pitch_shift, time_stretch
from .corpus import AudioClip, ClipSpec, ParameterError
from .features import MelParams, log_mel
from .model import Model
from .nn import Dropout, Linear, ReLU, Sequential
from .trainer import AdamState, adam_step


class MetricError(ValueError):
    """Metric input is degenerate (e.g. a single class)."""


class SplitError(ValueError):
    """A class is missing from the train split."""


# ---------------------------------------------------------------------------
# metrics


def metric_auroc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks over ties
    for s in np.unique(scores):
        sel = scores == s
        ranks[sel] = ranks[sel].mean()
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2)
                 / (n_pos * n_neg))


def metric_ap(scores, labels) -> float:
    """Average precision via threshold steps (ties grouped)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise MetricError("AP needs both classes present")
    ap = 0.0
    tp = fp = 0
    for s in np.unique(scores)[::-1]:
        sel = scores == s
        tp += int(labels[sel].sum())
        fp += int((~labels[sel].astype(bool)).sum())
        recall_prev = (tp - int(labels[sel].sum())) / n_pos
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - recall_prev) * precision
    return float(ap)


def metric_key_weighted(pred_key: int, true_key: int) -> float:
    """Partial-credit key score: exact 1.0, fifth 0.5, relative 0.3,
    parallel 0.2, else 0.0. Keys are tonic + 12 * (0 major / 1 minor)."""
    for k in (pred_key, true_key):
        if not 0 <= int(k) < 24:
            raise ParameterError("key index must lie in 0..23")
    pt, pm = int(pred_key) % 12, int(pred_key) // 12
    tt, tm = int(true_key) % 12, int(true_key) // 12
    if pred_key == true_key:
        return 1.0
    if pm == tm and pt == (tt + 7) % 12:
        return 0.5
    if tm == 0 and pm == 1 and pt == (tt + 9) % 12:
        return 0.3
    if tm == 1 and pm == 0 and pt == (tt + 3) % 12:
        return 0.3
    if pt == tt and pm != tm:
        return 0.2
    return 0.0


TEMPO_RATIOS_L2 = (1.0, 2.0, 3.0, 0.5, 1.0 / 3.0)


def metric_tempo_acc(pred_bpm: float, true_bpm: float, level: int = 1) -> int:
    """acc1: within 4% of truth; acc2: within 4% of an allowed ratio."""
    if pred_bpm <= 0 or true_bpm <= 0:
        raise ParameterError("BPM values must be positive")
    ratios = TEMPO_RATIOS_L2 if level == 2 else (1.0,)
    for r in ratios:
        if abs(pred_bpm - true_bpm * r) / (true_bpm * r) <= 0.04:
            return 1
    return 0


def cosine_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = (a * b).sum(axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return np.clip(1.0 - num / np.maximum(den, 1e-12), 0.0, 2.0)


# ---------------------------------------------------------------------------
# embedding extraction


@dataclass
class EmbeddingStore:
    space: str
    chunk_embeddings: list          # per track: (n_chunks, d)
    labels: list                    # per track: ClipSpec

    @property
    def track_mean(self) -> np.ndarray:
        return np.stack([c.mean(axis=0) for c in self.chunk_embeddings])

    @property
    def size(self) -> int:
        return len(self.chunk_embeddings)


def space_vectors(bundle, space: str) -> np.ndarray:
    if space in bundle.embeddings:
        return bundle.embeddings[space]
    if space.startswith("proj_") and space[5:] in bundle.projections:
        return bundle.projections[space[5:]]
    raise ParameterError(f"unknown embedding space {space!r}")


def _chunk_track(track: AudioClip) -> list[np.ndarray]:
    n = len(track.samples) // CHUNK_SAMPLES
    return [track.samples[i * CHUNK_SAMPLES:(i + 1) * CHUNK_SAMPLES]
            for i in range(n)]


def embed_corpus(model: Model, corpus: list[AudioClip], space: str,
                 mel_params: MelParams = MelParams(),
                 time_stretch_range: tuple | None = None,
                 seed: int = 0, batch_size: int = 32) -> EmbeddingStore:
    """Tile tracks into 3 s chunks and embed them in eval mode.

    `time_stretch_range` optionally applies a uniform random stretch per
    chunk to the raw audio before feature extraction (probe-time
    robustness augmentation).
    """
    if space not in model.config.space_names:
        raise ParameterError(
            f"space {space!r} not offered by topology "
            f"{model.config.topology!r} (have {model.config.space_names})")
    rng = np.random.default_rng(seed)
    specs = []
    counts = []
    for track in corpus:
        chunks = _chunk_track(track)
        counts.append(len(chunks))
        for chunk in chunks:
            clip = AudioClip(chunk, track.sample_rate, track.labels)
            if time_stretch_range is not None:
                rate = rng.uniform(*time_stretch_range)
                clip = time_stretch(clip, rate)
            specs.append(log_mel(clip, mel_params).values.astype(np.float32))
    vecs = []
    for i in range(0, len(specs), batch_size):
        x = np.stack(specs[i:i + batch_size])
        bundle = model.forward(x, train=False)
        vecs.append(space_vectors(bundle, space))
    allv = np.concatenate(vecs) if vecs else np.zeros((0, 0))
    out = []
    pos = 0
    for c in counts:
        out.append(allv[pos:pos + c])
        pos += c
    return EmbeddingStore(space, out, [t.labels for t in corpus])


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class ProbeConfig:
    hidden: tuple = (64,)
    dropout: float = 0.0
    learning_rate: float = 1e-2
    weight_decay: float = 0.0            # decoupled L2 on weight matrices
    normalize_inputs: bool = False       # unit-norm embeddings before fit
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    probe_time_stretch: bool = False
    stretch_range: tuple = (0.8, 1.2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeConfig":
        d = dict(d)
        for k in ("hidden", "stretch_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def split_tracks(n: int, seed: int = 0) -> tuple[list, list, list]:
    """Seeded 70/10/20 train/val/test split of track indices."""
    idx = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.7 * n))
    n_val = int(round(0.1 * n))
    return (list(idx[:n_train]), list(idx[n_train:n_train + n_val]),
            list(idx[n_train + n_val:]))


def _softmax_ce(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.log(np.maximum(p[np.arange(n), y], 1e-12)).mean()
    grad = p
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def _sigmoid_bce(logits, Y):
    p = 1.0 / (1.0 + np.exp(-logits))
    loss = -(Y * np.log(np.maximum(p, 1e-12))
             + (1 - Y) * np.log(np.maximum(1 - p, 1e-12))).mean()
    return loss, (p - Y) / Y.size


class Probe:
    """Shallow MLP head trained on frozen embeddings."""

    def __init__(self, d_in: int, n_out: int, config: ProbeConfig):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
        layers = []
        d = d_in
        for i, h in enumerate(config.hidden):
            if h <= 0:
                continue
            layers += [Linear(d, h, rng), ReLU()]
            if config.dropout > 0:
                layers.append(Dropout(config.dropout, seed=config.seed + i))
            d = h
        layers.append(Linear(d, n_out, rng))
        self.net = Sequential(layers)
        self.config = config
        self._index = {name: (layer, p)
                       for name, layer, p in self.net.named_params()}

    def _params(self):
        return {n: l.params[p] for n, (l, p) in self._index.items()}

    def _grads(self):
        return {n: l.grads[p] for n, (l, p) in self._index.items()}

    def fit(self, X: np.ndarray, y: np.ndarray, multilabel: bool = False):
        cfg = self.config
        adam = AdamState.init(self._params())
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        n = len(X)
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for i in range(0, n, cfg.batch_size):
                sel = order[i:i + cfg.batch_size]
                logits = self.net.forward(X[sel], train=True)
                if multilabel:
                    _, dlogits = _sigmoid_bce(logits, y[sel])
                else:
                    _, dlogits = _softmax_ce(logits, y[sel])
                self.net.backward(dlogits.astype(logits.dtype))
                adam_step(self._params(), self._grads(), adam,
                          lr=cfg.learning_rate)
                if cfg.weight_decay > 0:
                    shrink = 1.0 - cfg.learning_rate * cfg.weight_decay
                    for name, (layer, p) in self._index.items():
                        if name.endswith(".W"):
                            layer.params[p] *= shrink
        return self

    def predict_logits(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X, train=False)


PROBE_TASKS = ("pitch", "key", "tempo", "tags")
N_TEMPO_CLASSES = 300


def task_label(spec: ClipSpec, task: str):
    """Ground-truth label for a probe task, or None if not applicable."""
    if task == "pitch":
        return spec.pitch_class if spec.kind == "harmonic_tone" else None
    if task == "key":
        return spec.key_class
    if task == "tempo":
        if spec.tempo is None:
            return None
        return int(round(spec.tempo)) - 1       # class index over 1..300 BPM
    if task == "tags":
        return spec.tags
    raise ParameterError(f"unknown probe task {task!r}")


def _task_arrays(store: EmbeddingStore, task: str):
    """Track indices with labels, plus per-track class labels."""
    tracks, labels = [], []
    for i, spec in enumerate(store.labels):
        lab = task_label(spec, task) if spec is not None else None
        if lab is not None:
            tracks.append(i)
            labels.append(lab)
    if not tracks:
        raise MetricError(f"no track carries a label for task {task!r}")
    return tracks, labels


def probe_task(store: EmbeddingStore, task: str, config: ProbeConfig,
               train_store: EmbeddingStore | None = None) -> dict:
    """Train a probe for one task and score it on held-out track means.

    `train_store` (defaults to `store`) supplies the training chunk
    embeddings; pass an augmented store for probe-time robustness training.
    """
    if task not in PROBE_TASKS:
        raise ParameterError(f"unknown probe task {task!r}")
    if train_store is None:
        train_store = store
    tracks, labels = _task_arrays(store, task)
    train_idx, _val_idx, test_idx = split_tracks(len(tracks), config.seed)
    if not test_idx:
        raise SplitError("test split is empty")

    if task == "tags":
        vocab = sorted({t for lab in labels for t in lab})
        if not vocab:
            raise MetricError("no tags in corpus")
        to_vec = {t: i for i, t in enumerate(vocab)}

        def encode(lab):
            v = np.zeros(len(vocab), dtype=np.float32)
            for t in lab:
                v[to_vec[t]] = 1.0
            return v
        y_all = np.stack([encode(lab) for lab in labels])
        n_out = len(vocab)
    else:
        y_all = np.asarray(labels, dtype=int)
        n_out = {"pitch": 12, "key": 24, "tempo": N_TEMPO_CLASSES}[task]
        if task != "tempo":
            # tempo is scored with a relative tolerance, so exact BPM
            # classes unseen in training are acceptable there
            train_classes = set(y_all[train_idx].tolist())
            missing = set(y_all[test_idx].tolist()) - train_classes
            if missing:
                raise SplitError(
                    f"classes {sorted(missing)} absent from train split")

    def prep(X):
        if not config.normalize_inputs:
            return X
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return X / np.maximum(norms, 1e-12)

    X_train = prep(np.concatenate(
        [train_store.chunk_embeddings[tracks[i]] for i in train_idx]))
    y_train_parts = []
    for i in train_idx:
        reps = len(train_store.chunk_embeddings[tracks[i]])
        y_train_parts += [y_all[i]] * reps
    y_train = np.stack(y_train_parts) if task == "tags" else \
        np.asarray(y_train_parts, dtype=int)

    probe = Probe(X_train.shape[1], n_out, config)
    probe.fit(X_train.astype(np.float32), y_train, multilabel=task == "tags")

    mean_all = store.track_mean
    X_test = prep(
        np.stack([mean_all[tracks[i]] for i in test_idx]).astype(np.float32))
    logits = probe.predict_logits(X_test)
    y_test = y_all[test_idx]

    metrics: dict = {"task": task, "space": store.space,
                     "n_test_tracks": len(test_idx)}
    if task == "tags":
        aurocs, aps = [], []
        for j in range(n_out):
            col = y_test[:, j].astype(int)
            if 0 < col.sum() < len(col):
                aurocs.append(metric_auroc(logits[:, j], col))
                aps.append(metric_ap(logits[:, j], col))
        metrics["auroc"] = float(np.mean(aurocs)) if aurocs else float("nan")
        metrics["ap"] = float(np.mean(aps)) if aps else float("nan")
    else:
        pred = logits.argmax(axis=1)
        metrics["accuracy"] = float((pred == y_test).mean())
        if task == "key":
            metrics["weighted_key_score"] = float(np.mean(
                [metric_key_weighted(p, t) for p, t in zip(pred, y_test)]))
        if task == "tempo":
            pred_bpm = pred + 1
            true_bpm = y_test + 1
            metrics["tempo_acc1"] = float(np.mean(
                [metric_tempo_acc(p, t, 1) for p, t in zip(pred_bpm, true_bpm)]))
            metrics["tempo_acc2"] = float(np.mean(
                [metric_tempo_acc(p, t, 2) for p, t in zip(pred_bpm, true_bpm)]))
    return metrics


def run_probe(model: Model, corpus: list[AudioClip], space: str, task: str,
              config: ProbeConfig, mel_params: MelParams = MelParams()) -> dict:
    """Embed the corpus and run one probe, honoring probe-time stretching."""
    store = embed_corpus(model, corpus, space, mel_params)
    train_store = None
    if config.probe_time_stretch:
        train_store = embed_corpus(model, corpus, space, mel_params,
                                   time_stretch_range=config.stretch_range,
                                   seed=config.seed)
    return probe_task(store, task, config, train_store=train_store)


# ---------------------------------------------------------------------------
# retrieval


def knn_retrieve(store: EmbeddingStore, query_index: int, k: int):
    """k nearest tracks by cosine distance on track means.

    Ties break by ascending track id. Returns (ids, distances).
    """
    if k >= store.size:
        raise ParameterError("k must be smaller than the store size")
    means = store.track_mean
    d = cosine_distance(means[query_index][None, :], means)
    d[query_index] = np.inf
    order = np.lexsort((np.arange(store.size), d))
    ids = order[:k]
    return list(ids), [float(d[i]) for i in ids]


def retrieval_scores(store: EmbeddingStore, k: int) -> dict:
    """Label agreement between each query and its k neighbors.

    tag_precision: per-tag precision@k averaged over tags; key_score /
    tempo_acc1 averaged over queries carrying the label and their
    neighbors that carry it too.
    """
    n = store.size
    neighbor_ids = [knn_retrieve(store, q, k)[0] for q in range(n)]
    out: dict = {"k": k, "space": store.space}

    all_tags = sorted({t for s in store.labels if s is not None
                       for t in s.tags})
    tag_precs = []
    for tag in all_tags:
        per_query = []
        for q in range(n):
            if store.labels[q] is None or tag not in store.labels[q].tags:
                continue
            hits = sum(1 for j in neighbor_ids[q]
                       if store.labels[j] is not None
                       and tag in store.labels[j].tags)
            per_query.append(hits / k)
        if per_query:
            tag_precs.append(float(np.mean(per_query)))
    out["tag_precision"] = float(np.mean(tag_precs)) if tag_precs else \
        float("nan")

    key_scores, tempo_hits = [], []
    for q in range(n):
        spec = store.labels[q]
        if spec is None:
            continue
        if spec.key_class is not None:
            vals = [metric_key_weighted(store.labels[j].key_class,
                                        spec.key_class)
                    for j in neighbor_ids[q]
                    if store.labels[j] is not None
                    and store.labels[j].key_class is not None]
            if vals:
                key_scores.append(float(np.mean(vals)))
        if spec.tempo is not None:
            vals = [metric_tempo_acc(store.labels[j].tempo, spec.tempo, 1)
                    for j in neighbor_ids[q]
                    if store.labels[j] is not None
                    and store.labels[j].tempo is not None]
            if vals:
                tempo_hits.append(float(np.mean(vals)))
    out["key_score"] = float(np.mean(key_scores)) if key_scores else \
        float("nan")
    out["tempo_acc1"] = float(np.mean(tempo_hits)) if tempo_hits else \
        float("nan")
    return out


# ---------------------------------------------------------------------------
# cosine sweeps


@dataclass
class CosineSweepResult:
    kind: str                      # "pitch_shift" | "time_stretch"
    grid: list
    curves: dict                   # space -> list of mean d_c
    n_tracks: int


def cosine_sweep(model: Model, corpus: list[AudioClip], kind: str,
                 grid, spaces=None,
                 mel_params: MelParams = MelParams()) -> CosineSweepResult:
    """Mean cosine distance between clean and transformed chunk embeddings
    per grid parameter and per space."""
    if kind not in ("pitch_shift", "time_stretch"):
        raise ParameterError(f"unknown sweep transform {kind!r}")
    grid = [float(g) for g in grid]
    identity = 0.0 if kind == "pitch_shift" else 1.0
    if not any(np.isclose(g, identity) for g in grid):
        raise ParameterError(f"grid must contain the identity value "
                             f"{identity}")
    if spaces is None:
        spaces = model.config.space_names
    for s in spaces:
        if s not in model.config.space_names:
            raise ParameterError(f"unknown embedding space {s!r}")

    def embed_tracks(transform):
        per_space = {s: [] for s in spaces}
        for track in corpus:
            chunks = _chunk_track(track)
            x = []
            for chunk in chunks:
                clip = AudioClip(chunk, track.sample_rate, track.labels)
                if transform is not None:
                    clip = transform(clip)
                x.append(log_mel(clip, mel_params).values.astype(np.float32))
            bundle = model.forward(np.stack(x), train=False)
            for s in spaces:
                per_space[s].append(space_vectors(bundle, s))
        return per_space

    clean = embed_tracks(None)
    curves = {s: [] for s in spaces}
    for g in grid:
        if kind == "pitch_shift":
            transform = (lambda c, gg=g: pitch_shift(c, gg))
        else:
            transform = (lambda c, gg=g: time_stretch(c, gg))
        moved = embed_tracks(transform)
        for s in spaces:
            vals = [float(cosine_distance(a, b).mean())
                    for a, b in zip(clean[s], moved[s])]
            curves[s].append(float(np.mean(vals)))
    return CosineSweepResult(kind, grid, curves, len(corpus))

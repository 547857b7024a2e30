"""Pretraining loop: Adam with constant learning rate, JSONL loss log,
deterministic resumable checkpoints.

Per-step randomness (anchor choice, chunk offsets, augmentation draws) is
derived from (master seed, step index), so the data stream is independent of
checkpoint cadence and a resumed run reproduces the uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .augment import ChainConfig
from .corpus import AudioClip, ParameterError
from .features import MelParams
from .model import Model, ModelConfig, build_model, model_from_checkpoint, \
    save_checkpoint
from .objective import LossConfig, composite_loss
from .views import SamplingStrategy, build_batch, build_positive_masks

LR_SCHEDULES = ("constant",)   # warmup/decay intentionally not offered


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; message carries the offending batch seed."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_anchors: int = 16
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0       # 0 = final checkpoint only
    threads: int = 1
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.steps <= 0:
            raise ParameterError("steps must be positive")
        if self.batch_anchors < 2:
            raise ParameterError("batch_anchors must be >= 2")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ParameterError(f"unknown lr schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   t=0)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


def _step_seed(master_seed: int, step: int) -> int:
    return int(np.random.SeedSequence([master_seed, step]).generate_state(1)[0])


def train_step(model: Model, corpus: list[AudioClip], chain: ChainConfig,
               strategy: SamplingStrategy, loss_config: LossConfig,
               train_config: TrainConfig, mel_params: MelParams,
               adam: AdamState, step: int) -> dict:
    seed = _step_seed(train_config.seed, step)
    rng = np.random.default_rng(seed)
    n = train_config.batch_anchors
    replace = len(corpus) < n
    anchors = rng.choice(len(corpus), size=n, replace=replace)
    tracks = [corpus[i] for i in anchors]
    batch = build_batch(tracks, chain, strategy, seed,
                        mel_params=mel_params, threads=train_config.threads)
    masks = build_positive_masks(batch)
    bundle = model.forward(batch.views, train=True)
    breakdown = composite_loss(bundle.projections, masks, loss_config,
                               [a.kind for a in chain.variant])
    if not np.isfinite(breakdown.total):
        raise TrainingDivergedError(
            f"non-finite loss at step {step} (batch seed {seed}); "
            f"breakdown: all={breakdown.all_invariant} "
            f"per={breakdown.per_subspace}")
    model.backward(breakdown.grads)
    adam_step(model.parameters(), model.gradients(), adam,
              lr=train_config.learning_rate, beta1=train_config.adam_beta1,
              beta2=train_config.adam_beta2, eps=train_config.adam_eps)
    return {"step": step, "all_invariant": breakdown.all_invariant,
            "per_subspace": breakdown.per_subspace,
            "total": breakdown.total,
            "counts": breakdown.contributing_counts}


def _checkpoint_tensors(adam: AdamState) -> dict:
    out = {}
    for name, arr in adam.m.items():
        out[f"adam.m.{name}"] = arr
    for name, arr in adam.v.items():
        out[f"adam.v.{name}"] = arr
    return out


def pretrain(corpus: list[AudioClip], model_config: ModelConfig,
             chain: ChainConfig, strategy: SamplingStrategy,
             loss_config: LossConfig, train_config: TrainConfig,
             mel_params: MelParams, out_dir: str,
             resume_from: str | None = None) -> dict:
    """Run (or resume) pretraining; returns paths and the trained model."""
    if not corpus:
        raise ParameterError("corpus is empty")
    if model_config.topology != "single_head":
        chain_kinds = tuple(a.kind for a in chain.variant)
        if tuple(model_config.variant_names) != chain_kinds:
            raise ParameterError(
                f"model variant heads {model_config.variant_names} do not "
                f"match chain variant kinds {chain_kinds}")
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    log_path = os.path.join(out_dir, "train_log.jsonl")

    if resume_from is not None:
        model, meta, tensors = model_from_checkpoint(resume_from)
        start_step = int(meta["train_state"]["step"])
        adam = AdamState.init(model.parameters())
        adam.t = int(meta["train_state"]["adam_t"])
        for name in adam.m:
            adam.m[name] = tensors[f"adam.m.{name}"].copy()
            adam.v[name] = tensors[f"adam.v.{name}"].copy()
        log_mode = "a"
    else:
        model = build_model(model_config, seed=train_config.seed)
        start_step = 0
        adam = AdamState.init(model.parameters())
        log_mode = "w"

    def save(step):
        save_checkpoint(
            ckpt_path, model,
            meta={"train_state": {"step": step, "adam_t": adam.t},
                  "train_config": train_config.to_dict()},
            extra_tensors=_checkpoint_tensors(adam))

    with open(log_path, log_mode) as log_fh:
        for step in range(start_step, train_config.steps):
            entry = train_step(model, corpus, chain, strategy, loss_config,
                               train_config, mel_params, adam, step)
            log_fh.write(json.dumps(entry) + "\n")
            if (train_config.checkpoint_every
                    and (step + 1) % train_config.checkpoint_every == 0):
                save(step + 1)
    save(train_config.steps)
    return {"checkpoint": ckpt_path, "log": log_path, "model": model}

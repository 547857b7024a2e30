"""Encoder + projection-head topologies and checkpoint I/O.

Three topologies:
  single_head -- one shared encoder, one projection head ("all")
  multi_head  -- shared encoder, 1 + K heads on the same embedding space
  split_trunk -- the trailing conv block(s) are replicated per head, so each
                 head owns its embedding space; their concatenation is the
                 widest frozen representation

Spaces exposed for probing/retrieval:
  single_head / multi_head : "embed", "proj_all" [, "proj_<variant>"]
  split_trunk              : "embed_all", "embed_<variant>", "embed_concat",
                             "proj_all", "proj_<variant>"
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import ParameterError
from .nn import (AddChannel, Conv2d, GlobalAvgPool, L2Normalize, Linear,
                 ReLU, Sequential, Standardize)

TOPOLOGIES = ("single_head", "multi_head", "split_trunk")

CHECKPOINT_MAGIC = b"VSPC"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8"}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
                  np.dtype(np.int64): 2}


@dataclass(frozen=True)
class ModelConfig:
    topology: str = "multi_head"
    variant_names: tuple = ("pitch_shift", "time_stretch")
    input_shape: tuple = (400, 128)
    conv_channels: tuple = (8, 16, 32, 64)
    embed_dim: int = 128
    head_hidden: int = 256
    proj_dim: int = 64
    split_blocks: int = 1

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ParameterError(f"unknown topology {self.topology!r}")
        if self.embed_dim <= 0 or self.proj_dim <= 0:
            raise ParameterError("embed_dim and proj_dim must be positive")
        if not self.conv_channels:
            raise ParameterError("need at least one conv block")
        if self.topology == "split_trunk" and not (
                0 < self.split_blocks < len(self.conv_channels) + 1):
            raise ParameterError("split_blocks must be in 1..n_blocks")

    @property
    def head_names(self) -> tuple:
        if self.topology == "single_head":
            return ("all",)
        return ("all",) + tuple(self.variant_names)

    @property
    def space_names(self) -> tuple:
        heads = self.head_names
        proj = tuple(f"proj_{h}" for h in heads)
        if self.topology == "split_trunk":
            return tuple(f"embed_{h}" for h in heads) + ("embed_concat",) + proj
        return ("embed",) + proj

    def space_dim(self, space: str) -> int:
        if space == "embed_concat":
            return self.embed_dim * len(self.head_names)
        if space.startswith("embed"):
            return self.embed_dim
        return self.proj_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("variant_names", "input_shape", "conv_channels"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class EmbeddingBundle:
    embeddings: dict          # space name -> (B, d)
    projections: dict         # head name -> (B, proj_dim), unit rows


class Model:
    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed]))

        def conv_block(c_in, c_out):
            return Sequential([Conv2d(c_in, c_out, rng, dtype=dtype), ReLU()])

        chans = (1,) + tuple(config.conv_channels)
        blocks = [(chans[i], chans[i + 1]) for i in range(len(config.conv_channels))]

        def embed_tail(block_specs):
            layers = [conv_block(ci, co) for ci, co in block_specs]
            layers += [GlobalAvgPool(),
                       Linear(block_specs[-1][1] if block_specs
                              else chans[-1], config.embed_dim, rng,
                              dtype=dtype)]
            return Sequential(layers)

        def head():
            if config.head_hidden > 0:
                layers = [Linear(config.embed_dim, config.head_hidden, rng,
                                 dtype=dtype), ReLU(),
                          Linear(config.head_hidden, config.proj_dim, rng,
                                 dtype=dtype)]
            else:
                layers = [Linear(config.embed_dim, config.proj_dim, rng,
                                 dtype=dtype)]
            return Sequential(layers + [L2Normalize()])

        self.tails: dict[str, Sequential] = {}
        if config.topology == "split_trunk":
            cut = len(blocks) - config.split_blocks
            self.trunk = Sequential([Standardize(), AddChannel()]
                                    + [conv_block(ci, co) for ci, co in blocks[:cut]])
            # parameters are built head-by-head so the "all" tail of a seed
            # matches the single-trunk encoder built from the same seed
            for name in config.head_names:
                self.tails[name] = embed_tail(blocks[cut:])
        else:
            self.trunk = Sequential([Standardize(), AddChannel()]
                                    + [conv_block(ci, co) for ci, co in blocks]
                                    + [GlobalAvgPool(),
                                       Linear(chans[-1], config.embed_dim,
                                              rng, dtype=dtype)])
        self.heads = {name: head() for name in config.head_names}

        self._index = {}
        for name, layer, pname in self._walk():
            self._index[name] = (layer, pname)

    def _walk(self):
        yield from self.trunk.named_params("trunk.")
        for h, tail in self.tails.items():
            yield from tail.named_params(f"tail.{h}.")
        for h, head in self.heads.items():
            yield from head.named_params(f"head.{h}.")

    def parameters(self) -> dict:
        return {name: layer.params[p] for name, (layer, p) in self._index.items()}

    def gradients(self) -> dict:
        return {name: layer.grads.get(
                    p, np.zeros_like(layer.params[p]))
                for name, (layer, p) in self._index.items()}

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        layer, p = self._index[name]
        if layer.params[p].shape != value.shape:
            raise ParameterError(f"shape mismatch for {name}")
        layer.params[p] = value.astype(self.dtype)

    def param_count(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def forward(self, x: np.ndarray, train: bool = False) -> EmbeddingBundle:
        cfg = self.config
        if x.shape[1:] != cfg.input_shape:
            raise ParameterError(
                f"input shape {x.shape[1:]} != {cfg.input_shape}")
        x = x.astype(self.dtype)
        t = self.trunk.forward(x, train=train)
        embeddings = {}
        feed = {}
        if cfg.topology == "split_trunk":
            for h in cfg.head_names:
                e = self.tails[h].forward(t, train=train)
                embeddings[f"embed_{h}"] = e
                feed[h] = e
            embeddings["embed_concat"] = np.concatenate(
                [embeddings[f"embed_{h}"] for h in cfg.head_names], axis=1)
        else:
            embeddings["embed"] = t
            feed = {h: t for h in cfg.head_names}
        projections = {h: self.heads[h].forward(feed[h], train=train)
                       for h in cfg.head_names}
        return EmbeddingBundle(embeddings, projections)

    def zero_grads(self) -> None:
        for name, (layer, p) in self._index.items():
            layer.grads[p] = np.zeros_like(layer.params[p])

    def backward(self, proj_grads: dict) -> None:
        """proj_grads: head name -> dL/d(projection). Heads absent get zero."""
        cfg = self.config
        self.zero_grads()
        if cfg.topology == "split_trunk":
            dtrunk = None
            for h in cfg.head_names:
                if h not in proj_grads:
                    continue
                de = self.heads[h].backward(proj_grads[h])
                dt = self.tails[h].backward(de)
                dtrunk = dt if dtrunk is None else dtrunk + dt
            if dtrunk is not None:
                self.trunk.backward(dtrunk)
        else:
            de = None
            for h in cfg.head_names:
                if h not in proj_grads:
                    continue
                d = self.heads[h].backward(proj_grads[h])
                de = d if de is None else de + d
            if de is not None:
                self.trunk.backward(de)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    return Model(config, seed, dtype=dtype)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, JSON meta (model config + free-form),
# then named little-endian tensors


def save_checkpoint(path: str, model: Model, meta: dict | None = None,
                    extra_tensors: dict | None = None) -> None:
    meta_all = {"model_config": model.config.to_dict()}
    if meta:
        meta_all.update(meta)
    tensors = dict(model.parameters())
    if extra_tensors:
        tensors.update(extra_tensors)
    blob = json.dumps(meta_all, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            code = _DTYPE_TO_CODE[arr.dtype]
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr).astype(
                _DTYPE_CODES[code], copy=False).tobytes())


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Returns (meta dict, tensors dict)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ParameterError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ParameterError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(blob_len))
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<I", fh.read(4))[0]
                          for _ in range(ndim))
            dt = np.dtype(_DTYPE_CODES[code])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            tensors[name] = np.frombuffer(
                fh.read(n_bytes), dtype=dt).reshape(shape).copy()
    return meta, tensors


def model_from_checkpoint(path: str, dtype=np.float32) -> tuple[Model, dict, dict]:
    meta, tensors = load_checkpoint(path)
    config = ModelConfig.from_dict(meta["model_config"])
    model = build_model(config, seed=0, dtype=dtype)
    for name in model.parameters():
        model.set_parameter(name, tensors[name])
    return model, meta, tensors

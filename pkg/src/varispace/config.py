"""Run-level configuration: one serializable object bundling every section
(corpus, chain, model, loss, train, features, sampling, eval) plus the run
name and output directory.

Every command writes the resolved config beside its outputs so a run is
reproducible from (config, seed) alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .augment import ChainConfig
from .corpus import CorpusConfig, ParameterError
from .evaluation import ProbeConfig
from .features import MelParams
from .model import ModelConfig
from .objective import LossConfig
from .trainer import TrainConfig
from .views import SamplingStrategy


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class EvalConfig:
    probe: ProbeConfig = ProbeConfig()
    knn_k: tuple = (5,)
    pitch_grid: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)
    stretch_grid: tuple = (0.7, 0.85, 1.0, 1.15, 1.3)

    def to_dict(self) -> dict:
        return {"probe": self.probe.to_dict(), "knn_k": list(self.knn_k),
                "pitch_grid": list(self.pitch_grid),
                "stretch_grid": list(self.stretch_grid)}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        d = dict(d)
        if "probe" in d:
            d["probe"] = ProbeConfig.from_dict(d["probe"])
        for k in ("knn_k", "pitch_grid", "stretch_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _plain(obj) -> dict:
    return dataclasses.asdict(obj)


@dataclass
class RunConfig:
    run_name: str = "run"
    output_dir: str = "runs"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mel: MelParams = field(default_factory=MelParams)
    sampling: SamplingStrategy = field(default_factory=SamplingStrategy)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "run_name": self.run_name,
            "output_dir": self.output_dir,
            "corpus": self.corpus.to_dict(),
            "chain": self.chain.to_dict(),
            "model": self.model.to_dict(),
            "loss": _plain(self.loss),
            "train": self.train.to_dict(),
            "mel": _plain(self.mel),
            "sampling": {"mixture_weights": list(self.sampling.mixture_weights)},
            "evaluation": self.evaluation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            return cls(
                run_name=d.get("run_name", "run"),
                output_dir=d.get("output_dir", "runs"),
                corpus=CorpusConfig.from_dict(d.get("corpus", {})),
                chain=(ChainConfig.from_dict(d["chain"]) if "chain" in d
                       else ChainConfig()),
                model=(ModelConfig.from_dict(d["model"]) if "model" in d
                       else ModelConfig()),
                loss=LossConfig(**d.get("loss", {})),
                train=(TrainConfig.from_dict(d["train"]) if "train" in d
                       else TrainConfig()),
                mel=MelParams(**d.get("mel", {})),
                sampling=SamplingStrategy(
                    tuple(d.get("sampling", {}).get(
                        "mixture_weights", (1 / 3, 1 / 3, 1 / 3)))),
                evaluation=(EvalConfig.from_dict(d["evaluation"])
                            if "evaluation" in d else EvalConfig()),
            )
        except (TypeError, KeyError, ParameterError) as exc:
            raise ConfigError(f"malformed run config: {exc}") from exc

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, seed=None, output_dir=None) -> "RunConfig":
        out = dataclasses.replace(self)
        if seed is not None:
            out.train = dataclasses.replace(self.train, seed=int(seed))
            out.corpus = dataclasses.replace(self.corpus,
                                             master_seed=int(seed))
        if output_dir is not None:
            out.output_dir = output_dir
        return out

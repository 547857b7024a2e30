"""Command-line entry point.

Subcommands: corpus, pretrain, probe, retrieve, sweep, report. Each command
writes its resolved config next to its outputs, exits 0 on success and
nonzero with a single-line `error: <kind>: <detail>` message otherwise.
Tables go out as CSV, the report as one JSON file.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

from .config import ConfigError, RunConfig
from .corpus import ParameterError, generate_corpus, write_corpus
from .evaluation import (PROBE_TASKS, cosine_sweep, embed_corpus, probe_task,
                         retrieval_scores)
from .model import model_from_checkpoint
from .trainer import pretrain


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _run_dir(cfg: RunConfig) -> str:
    path = os.path.join(cfg.output_dir, cfg.run_name)
    os.makedirs(path, exist_ok=True)
    return path


def _write_resolved(cfg: RunConfig, run_dir: str) -> None:
    cfg.save(os.path.join(run_dir, "config.json"))


def _write_csv(path: str, rows: list[dict]) -> None:
    fields: list = []
    for row in rows:
        for k in row:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _load_model(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, _meta, _tensors = model_from_checkpoint(args.checkpoint)
    return model


def _parse_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ParameterError("grid must be lo:hi:step")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ParameterError("grid must satisfy lo <= hi and step > 0")
    out = []
    v = lo
    while v <= hi + 1e-9:
        out.append(round(v, 10))
        v += step
    return out


def cmd_corpus(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    _write_resolved(cfg, run_dir)
    corpus_dir = os.path.join(run_dir, "corpus")
    manifest = write_corpus(cfg.corpus, corpus_dir)
    print(f"wrote {cfg.corpus.size} clips to {corpus_dir} "
          f"(manifest {manifest})")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    if args.threads is not None:
        import dataclasses
        cfg.train = dataclasses.replace(cfg.train, threads=args.threads)
    run_dir = _run_dir(cfg)
    _write_resolved(cfg, run_dir)
    corpus = generate_corpus(cfg.corpus)
    result = pretrain(corpus, cfg.model, cfg.chain, cfg.sampling, cfg.loss,
                      cfg.train, cfg.mel, run_dir,
                      resume_from=args.resume)
    print(f"checkpoint {result['checkpoint']}  log {result['log']}")
    return 0


def cmd_probe(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    _write_resolved(cfg, run_dir)
    model = _load_model(args)
    if args.task not in PROBE_TASKS:
        raise ParameterError(f"unknown probe task {args.task!r} "
                             f"(choose from {PROBE_TASKS})")
    if args.space not in model.config.space_names:
        raise ParameterError(
            f"space {args.space!r} not offered by this checkpoint "
            f"(have {model.config.space_names})")
    corpus = generate_corpus(cfg.corpus)
    probe_cfg = cfg.evaluation.probe
    store = embed_corpus(model, corpus, args.space, cfg.mel)
    train_store = None
    if probe_cfg.probe_time_stretch:
        train_store = embed_corpus(model, corpus, args.space, cfg.mel,
                                   time_stretch_range=probe_cfg.stretch_range,
                                   seed=probe_cfg.seed)
    metrics = probe_task(store, args.task, probe_cfg, train_store=train_store)
    path = os.path.join(run_dir, f"probe_{args.task}_{args.space}.csv")
    _write_csv(path, [metrics])
    print(f"wrote {path}: "
          + " ".join(f"{k}={v}" for k, v in metrics.items()
                     if isinstance(v, float)))
    return 0


def cmd_retrieve(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    _write_resolved(cfg, run_dir)
    model = _load_model(args)
    if args.space not in model.config.space_names:
        raise ParameterError(
            f"space {args.space!r} not offered by this checkpoint "
            f"(have {model.config.space_names})")
    k_list = [int(k) for k in args.k.split(",")] if args.k else \
        list(cfg.evaluation.knn_k)
    corpus = generate_corpus(cfg.corpus)
    store = embed_corpus(model, corpus, args.space, cfg.mel)
    rows = [retrieval_scores(store, k) for k in k_list]
    path = os.path.join(run_dir, f"retrieval_{args.space}.csv")
    _write_csv(path, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    _write_resolved(cfg, run_dir)
    model = _load_model(args)
    if args.grid:
        grid = _parse_grid(args.grid)
    elif args.kind == "pitch_shift":
        grid = list(cfg.evaluation.pitch_grid)
    else:
        grid = list(cfg.evaluation.stretch_grid)
    spaces = args.space.split(",") if args.space else None
    corpus = generate_corpus(cfg.corpus)
    result = cosine_sweep(model, corpus, args.kind, grid, spaces=spaces,
                          mel_params=cfg.mel)
    rows = []
    for space, curve in result.curves.items():
        for g, value in zip(result.grid, curve):
            rows.append({"space": space, "kind": result.kind,
                         "parameter": g, "mean_dc": value,
                         "n_tracks": result.n_tracks})
    path = os.path.join(run_dir, f"sweep_{args.kind}.csv")
    _write_csv(path, rows)
    print(f"wrote {path} ({len(rows)} grid points, "
          f"{len(result.curves)} spaces)")
    return 0


def cmd_report(args) -> int:
    run_dir = args.out or "."
    paths = sorted(glob.glob(os.path.join(run_dir, "*.csv")))
    if not paths:
        raise FileNotFoundError(f"no CSV files under {run_dir}")
    report: dict = {"run_dir": run_dir, "probing": {}, "retrieval": {},
                    "sweeps": {}}
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if name.startswith("probe_"):
            report["probing"][name[len("probe_"):]] = rows
        elif name.startswith("retrieval_"):
            report["retrieval"][name[len("retrieval_"):]] = rows
        elif name.startswith("sweep_"):
            report["sweeps"][name[len("sweep_"):]] = rows
    out_path = os.path.join(run_dir, "report.json")
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varispace",
        description="Variant-aware contrastive audio representations: "
                    "corpus synthesis, pretraining, probing, retrieval "
                    "and sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--seed", type=int, help="override master seed")
        p.add_argument("--out", help="override output directory")

    p = sub.add_parser("corpus", help="synthesize the corpus to WAV+manifest")
    common(p)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("pretrain", help="run contrastive pretraining")
    common(p)
    p.add_argument("--threads", type=int, help="worker thread cap")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="train a frozen-embedding probe")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True,
                   help=f"one of {', '.join(PROBE_TASKS)}")
    p.add_argument("--space", required=True, help="embedding space name")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("retrieve", help="KNN retrieval scores")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--k", help="comma-separated neighbor counts")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("sweep", help="cosine-distance sweep over a transform")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", required=True,
                   choices=("pitch_shift", "time_stretch"))
    p.add_argument("--grid", help="lo:hi:step (must include the identity)")
    p.add_argument("--space", help="comma-separated spaces (default: all)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="collate run CSVs into one JSON")
    p.add_argument("--out", help="run directory (default: cwd)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

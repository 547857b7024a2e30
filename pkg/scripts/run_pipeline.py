"""Desk-scale end-to-end pipeline: synthesize a corpus, pretrain a
multi-head model, then probe, retrieve, sweep and collate a report.

Usage: python3 scripts/run_pipeline.py [--out runs/pipeline] [--steps 300]
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from varispace.cli import main as cli_main  # noqa: E402


def run(argv):
    print("+ varispace " + " ".join(argv))
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = {
        "run_name": "pipeline",
        "output_dir": args.out,
        "corpus": {"size": 64, "master_seed": args.seed},
        "model": {"topology": "multi_head"},
        "train": {"steps": args.steps, "batch_anchors": 8,
                  "seed": args.seed},
        "evaluation": {"probe": {"hidden": [64], "epochs": 80}},
    }
    os.makedirs(args.out, exist_ok=True)
    cfg_path = os.path.join(args.out, "pipeline_config.json")
    with open(cfg_path, "w") as fh:
        json.dump(cfg, fh, indent=2)

    run(["corpus", "--config", cfg_path])
    run(["pretrain", "--config", cfg_path])
    ckpt = os.path.join(args.out, "pipeline", "checkpoint.bin")
    for task, space in [("pitch", "embed"), ("key", "embed"),
                        ("tempo", "embed"), ("tags", "embed")]:
        run(["probe", "--config", cfg_path, "--checkpoint", ckpt,
             "--task", task, "--space", space])
    run(["retrieve", "--config", cfg_path, "--checkpoint", ckpt,
         "--space", "embed", "--k", "5"])
    run(["sweep", "--config", cfg_path, "--checkpoint", ckpt,
         "--kind", "pitch_shift"])
    run(["sweep", "--config", cfg_path, "--checkpoint", ckpt,
         "--kind", "time_stretch"])
    run(["report", "--out", os.path.join(args.out, "pipeline")])


if __name__ == "__main__":
    main()

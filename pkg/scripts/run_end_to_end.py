#!/usr/bin/env python3
"""End-to-end synthetic experiment: corpus -> augmentation -> 5-fold CV -> report.

Mirrors the acceptance experiment but with every size configurable, so a
scaled-down pass (e.g. --frames-per-tissue 40 --epochs 1) gives quick feedback
before committing to the full run.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from needlesense.corpus import CorpusConfig, synthesize_frames
from needlesense.dataset import build_dataset, kfold_split
from needlesense.evaluation import cross_validate, mean_std, write_confusion_csv, write_metrics_csv
from needlesense.labels import ClassLabel
from needlesense.model import ModelConfig
from needlesense.training import TrainConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames-per-tissue", type=int, default=200)
    parser.add_argument("--windows", type=int, default=40)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--learning-rate", type=float, default=1e-3)
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    parser.add_argument("--out", default=None, help="directory for metrics/confusion CSVs")
    args = parser.parse_args()

    t0 = time.perf_counter()
    frames = synthesize_frames(CorpusConfig(frames_per_tissue=args.frames_per_tissue, seed=args.seed))
    dataset = build_dataset(frames, windows_per_frame=args.windows, seed=args.seed + 1)
    print(f"corpus: {len(frames)} frames -> {dataset.n_examples} examples "
          f"({time.perf_counter() - t0:.1f}s)")
    print(f"class counts: {dataset.class_counts().tolist()}")

    split = kfold_split(dataset, k=args.folds, eval_fraction=0.2, seed=args.seed + 2)
    report = cross_validate(
        dataset,
        split,
        ModelConfig(),
        TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            seed=args.seed + 3,
            dtype=args.dtype,
        ),
        progress=lambda msg: print(msg, flush=True),
    )

    for line in report.summary_lines():
        print(line)
    confusion = report.confusion_eval_total
    h, c = int(ClassLabel.HEART), int(ClassLabel.HOCK)
    hh = int(confusion[h, c] + confusion[c, h])
    tissue_values = [int(l) for l in (ClassLabel.LIVER, ClassLabel.KIDNEY, ClassLabel.HEART,
                                      ClassLabel.BELLY, ClassLabel.HOCK)]
    others = {
        (i, j): int(confusion[i, j] + confusion[j, i])
        for i in tissue_values for j in tissue_values
        if i < j and (i, j) != (h, c)
    }
    print(f"heart<->hock confusion: {hh}; worst other tissue pair: {max(others.values())}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", report.fold_eval)
        write_confusion_csv(out / "confusion.csv", confusion)
        print(f"reports written to {out}")
    print(f"total {time.perf_counter() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Single-window inference latency of the desk-scale model on this machine."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from needlesense.model import ModelConfig, forward, init_parameters
from needlesense.training import load_checkpoint


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", help="checkpoint; defaults to a fresh desk-scale init")
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    parser.add_argument("--budget-ms", type=float, default=10.0)
    args = parser.parse_args()

    if args.model:
        params, _, _ = load_checkpoint(args.model)
    else:
        params = init_parameters(ModelConfig(), seed=0)
    params = params.astype(args.dtype)

    rng = np.random.default_rng(0)
    window = rng.normal(size=(1, params.config.seq_len, params.config.in_features)).astype(args.dtype)
    forward(params, window)  # warmup / first-touch

    times = np.empty(args.repeats)
    for i in range(args.repeats):
        t0 = time.perf_counter()
        forward(params, window)
        times[i] = (time.perf_counter() - t0) * 1e3

    print(f"dtype={args.dtype} repeats={args.repeats}")
    print(f"mean {times.mean():.2f} ms  median {np.median(times):.2f} ms  "
          f"p95 {np.percentile(times, 95):.2f} ms  max {times.max():.2f} ms")
    print(f"within {args.budget_ms} ms budget: {(times <= args.budget_ms).mean() * 100:.1f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())

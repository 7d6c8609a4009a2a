#!/usr/bin/env python3
"""Build the synthetic pilot corpus (20 recordings per motor task, both hands
of ten simulated subjects) and write feature datasets for both feature modes.

Usage: python scripts/make_corpus.py [outdir] [--per-class N] [--seed S]
"""

import argparse
from pathlib import Path

from tremorkit.features import build_dataset, save_dataset, synthetic_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir", nargs="?", default="data")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    segments = synthetic_corpus(n_per_class=args.per_class, seed=args.seed)
    print(f"synthesized {len(segments)} segments")
    for mode in ("fft", "stft"):
        ds = build_dataset(segments, mode=mode)
        path = outdir / f"corpus_{mode}.csv"
        save_dataset(ds, path)
        print(f"{mode}: {ds.X.shape[0]} rows x {ds.X.shape[1]} predictors -> {path}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Time SRA augmentation over a synthetic corpus at several worker counts.

Generates a corpus, estimates its stats once, then runs ``run_augment`` with
each worker count, printing patches/second and checking that every run wrote
byte-identical files.
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
from stainrecon import (  # noqa: E402
    SRA_PRESETS,
    BasisConfig,
    RunConfig,
    SynthCorpusConfig,
    run_augment,
    run_stats,
    run_synth,
)


def directory_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--slides", type=int, default=4)
    parser.add_argument("--patches-per-slide", type=int, default=16)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    parser.add_argument("--preset", default="wide-drop", choices=sorted(SRA_PRESETS))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmpdir:
        root = Path(tmpdir)
        corpus = SynthCorpusConfig(
            slides=args.slides, patches_per_slide=args.patches_per_slide, size=args.size
        )
        manifest, _ = run_synth(corpus, RunConfig(output_dir=root / "corpus", workers=max(args.workers)))
        stats = run_stats(manifest, BasisConfig(), RunConfig(output_dir=root / "stats")).document
        print(f"corpus: {len(manifest)} patches of {args.size}x{args.size}, preset {args.preset}")

        reference = None
        for workers in args.workers:
            out = root / f"aug_{workers}"
            run = RunConfig(workers=workers, output_dir=out, master_seed=0)
            summary = run_augment(manifest, stats, SRA_PRESETS[args.preset], run)
            outputs = directory_bytes(out)
            if reference is None:
                reference = outputs
                same = "reference"
            else:
                same = "identical" if outputs == reference else "DIFFERENT"
            print(
                f"workers={workers:>2}  {summary.seconds:8.3f} s  "
                f"{summary.patches_per_second:8.1f} patches/s  outputs {same}"
            )
            if same == "DIFFERENT":
                return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Generate a synthetic corpus with known latent classes.

Writes instance maps, encoder-style feature tensors, ground-truth
rasters, and a train/val manifest, ready for the autolabel pipeline:

    python scripts/make_synthetic_corpus.py --out /tmp/corpus --images 20
    autolabel pipeline --manifest /tmp/corpus/manifest.tsv --out /tmp/run \\
        --k 4 --gt-root /tmp/corpus/gt
"""

import argparse

from autolabel.interchange import ManifestParams
from autolabel.synth import SynthSpec, make_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=12)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sigma", type=float, default=0.3)
    args = parser.parse_args()

    spec = SynthSpec(n_images=args.images, n_classes=args.classes, seed=args.seed)
    manifest = make_corpus(
        args.out, spec, params=ManifestParams(sigma=args.sigma, k=args.classes)
    )
    print(f"wrote {args.images} images, manifest: {manifest}")


if __name__ == "__main__":
    main()

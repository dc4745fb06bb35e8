#!/usr/bin/env python3
"""Area-size-threshold sweep: mask survival (and optionally label quality) per sigma.

Survival counts are monotone non-decreasing in sigma by construction;
the sweep shows where a corpus's mask-size distribution sits. With
--full, the whole pipeline runs once per threshold and reports mIoU
against ground truth, so the quality/coverage trade-off is visible.

    python scripts/sigma_sweep.py --manifest /tmp/corpus/manifest.tsv
    python scripts/sigma_sweep.py --manifest ... --full --k 4 \\
        --gt-root /tmp/corpus/gt --out /tmp/sweep
"""

import argparse
from pathlib import Path

from autolabel import cli
from autolabel.interchange import load_instance_map, load_manifest
from autolabel.maskops import decompose, survival_by_sigma

SIGMAS = (0.1, 0.3, 0.5, 0.7, 1.0)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--sigmas", type=float, nargs="+", default=list(SIGMAS))
    parser.add_argument("--full", action="store_true", help="run pipeline + eval per sigma")
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--gt-root", default="")
    parser.add_argument("--out", default="")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    manifest = load_manifest(args.manifest)
    masks = []
    for entry in manifest.entries:
        masks.extend(decompose(load_instance_map(entry.instance_map_path)))
    counts = survival_by_sigma(masks, args.sigmas)

    print("sigma\tsurviving\ttotal\tfraction")
    for sigma in args.sigmas:
        print(f"{sigma}\t{counts[sigma]}\t{len(masks)}\t{counts[sigma] / len(masks):.3f}")

    if not args.full:
        return 0
    if not (args.out and args.gt_root):
        parser.error("--full needs --out and --gt-root")
    print("\nsigma\tmIoU\tmAcc")
    for sigma in args.sigmas:
        out = Path(args.out) / f"sigma_{sigma}"
        rc = cli.main([
            "pipeline",
            "--manifest", args.manifest,
            "--out", str(out),
            "--k", str(args.k),
            "--seed", str(args.seed),
            "--sigma", str(sigma),
            "--workers", str(args.workers),
            "--gt-root", args.gt_root,
        ])
        if rc != 0:
            print(f"{sigma}\tpipeline failed (exit {rc})")
            continue
        mean = [
            line.split("\t")
            for line in (out / "eval_report.tsv").read_text().splitlines()
            if line.startswith("mean")
        ][0]
        print(f"{sigma}\t{mean[2]}\t{mean[3]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

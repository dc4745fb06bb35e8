#!/usr/bin/env python3
"""Compare clustered pseudo-labels against the single-class stacked-mask baseline.

The baseline collapses every surviving mask to one class, which is the
natural no-clustering control: it measures how much of the label
quality comes from mask class association rather than mask coverage.

    python scripts/binary_baseline.py --manifest /tmp/corpus/manifest.tsv \\
        --gt-root /tmp/corpus/gt --out /tmp/run --k 4
"""

import argparse
from pathlib import Path

from autolabel import cli
from autolabel.assembly import compose_binary_raster
from autolabel.evaluation import ConfusionMatrix, cluster_purity, miou_macc
from autolabel.interchange import IGNORE_LABEL, load_instance_map, load_manifest, read_label_png
from autolabel.maskops import FilterConfig, decompose, filter_gate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--gt-root", required=True)
    parser.add_argument("--out", required=True, help="pipeline output root (created if missing)")
    parser.add_argument("--k", type=int, required=True)
    parser.add_argument("--sigma", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    out = Path(args.out)
    if not (out / "dataset").exists():
        rc = cli.main([
            "pipeline",
            "--manifest", args.manifest,
            "--out", str(out),
            "--k", str(args.k),
            "--sigma", str(args.sigma),
            "--seed", str(args.seed),
            "--workers", str(args.workers),
            "--gt-root", args.gt_root,
        ])
        if rc != 0:
            print(f"pipeline failed (exit {rc})")
            return rc

    manifest = load_manifest(args.manifest)
    n_gt = 0
    for entry in manifest.entries:
        gt = read_label_png(Path(args.gt_root) / f"{entry.image_id}.png").labels
        fg = gt[gt != IGNORE_LABEL]
        if fg.size:
            n_gt = max(n_gt, int(fg.max()) + 1)

    clustered = ConfusionMatrix.zeros(args.k, n_gt)
    baseline = ConfusionMatrix.zeros(1, n_gt)
    cfg = FilterConfig(sigma=args.sigma)
    for entry in manifest.entries:
        gt = read_label_png(Path(args.gt_root) / f"{entry.image_id}.png").labels
        pred = read_label_png(
            out / "dataset" / entry.split / "labels" / f"{entry.image_id}.png"
        ).labels
        clustered.add(pred, gt)
        masks = [
            m
            for m in decompose(load_instance_map(entry.instance_map_path))
            if filter_gate(m, cfg)
        ]
        stacked = compose_binary_raster(masks, entry.source_width, entry.source_height)
        baseline.add(stacked.labels, gt)

    for name, cm in (("clustered", clustered), ("binary-stack", baseline)):
        report = miou_macc(cm)
        print(
            f"{name}: mIoU {report.miou:.4f}  mAcc {report.macc:.4f}"
            f"  purity {cluster_purity(cm):.4f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

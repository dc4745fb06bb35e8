"""Pipeline driver: decompose, extract, fit, build, eval, or everything.

Per-image stages fan out over a bounded process pool and merge results
in image_id order, so output bytes do not depend on the worker count.
Exit codes: 0 ok, 1 config error, 2 partial data failure, 3 fatal.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import assembly, clustering, featalign
from .config import ConfigError, PipelineConfig, derive_seed, parse_config_file, resolve_config
from .evaluation import ConfusionMatrix, EmptyConfusionError, miou_macc, write_report
from .interchange import (
    IGNORE_LABEL,
    CorpusManifest,
    ManifestError,
    TensorFileError,
    load_instance_map,
    load_manifest,
    read_label_png,
    read_tensor,
    write_tensor,
)
from .maskops import FilterConfig, decompose, filter_gate, write_mask_png

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3


def _decompose_worker(args) -> tuple[str, tuple[int, int, int] | None, str | None]:
    entry, sigma, out_root = args
    try:
        imap = load_instance_map(entry.instance_map_path)
        masks = decompose(imap)
        cfg = FilterConfig(sigma=sigma)
        kept = [m for m in masks if filter_gate(m, cfg)]
        mask_dir = Path(out_root) / "masks" / entry.image_id
        mask_dir.mkdir(parents=True, exist_ok=True)
        for m in kept:
            write_mask_png(m, mask_dir / f"{m.instance_id}.png")
        return entry.image_id, (len(masks), len(kept), len(masks) - len(kept)), None
    except Exception as exc:  # noqa: BLE001
        return entry.image_id, None, f"{type(exc).__name__}: {exc}"


def _extract_worker(args):
    entry, sigma, normalize = args
    try:
        pfls, total, gated, emptied = featalign.extract_image_pfls(
            entry, FilterConfig(sigma=sigma), normalize
        )
        rows = [(p.instance_id, p.vector, p.pixel_count_at_256) for p in pfls]
        return entry.image_id, (rows, total, gated, emptied), None
    except Exception as exc:  # noqa: BLE001
        return entry.image_id, None, f"{type(exc).__name__}: {exc}"


def _run_jobs(jobs, worker, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, jobs))
    return [worker(j) for j in jobs]


def _write_snapshot(cfg: PipelineConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.snapshot(), encoding="utf-8")


def _load_corpus(cfg: PipelineConfig) -> CorpusManifest:
    return load_manifest(cfg.manifest)


def cmd_decompose(cfg: PipelineConfig) -> int:
    manifest = _load_corpus(cfg)
    _write_snapshot(cfg)
    entries = sorted(manifest.entries, key=lambda e: e.image_id)
    results = _run_jobs([(e, cfg.sigma, cfg.out) for e in entries], _decompose_worker, cfg.workers)
    lines = ["image_id\tmasks_total\tmasks_kept\tmasks_gated"]
    totals = [0, 0, 0]
    failures = []
    for image_id, row, err in results:
        if err is not None:
            failures.append((image_id, err))
            continue
        total, kept, gated = row
        lines.append(f"{image_id}\t{total}\t{kept}\t{gated}")
        totals = [totals[0] + total, totals[1] + kept, totals[2] + gated]
    lines.append(f"__total__\t{totals[0]}\t{totals[1]}\t{totals[2]}")
    for image_id, err in failures:
        lines.append(f"__failed__\t{image_id}\t-\t{err}")
    (Path(cfg.out) / "decompose_stats.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info(
        "decompose: %d masks, %d kept, %d gated, %d image failures",
        totals[0], totals[1], totals[2], len(failures),
    )
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_extract(cfg: PipelineConfig) -> int:
    manifest = _load_corpus(cfg)
    _write_snapshot(cfg)
    entries = sorted(manifest.entries, key=lambda e: e.image_id)
    results = _run_jobs(
        [(e, cfg.sigma, cfg.normalize) for e in entries], _extract_worker, cfg.workers
    )
    vectors, index_lines = [], ["row\timage_id\tinstance_id\tpixel_count"]
    stats_lines = ["image_id\tmasks_total\tmasks_gated\tmasks_emptied\tmasks_kept"]
    failures = []
    row = 0
    for image_id, payload, err in results:
        if err is not None:
            failures.append((image_id, err))
            continue
        rows, total, gated, emptied = payload
        stats_lines.append(f"{image_id}\t{total}\t{gated}\t{emptied}\t{len(rows)}")
        for instance_id, vector, pixel_count in rows:
            vectors.append(vector)
            index_lines.append(f"{row}\t{image_id}\t{instance_id}\t{pixel_count}")
            row += 1
    for image_id, err in failures:
        stats_lines.append(f"__failed__\t{image_id}\t-\t-\t{err}")
    out = Path(cfg.out)
    if vectors:
        write_tensor(np.stack(vectors).astype(np.float32), out / "pfl.alpt")
    (out / "pfl_index.tsv").write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    (out / "extract_stats.tsv").write_text("\n".join(stats_lines) + "\n", encoding="utf-8")
    log.info("extract: %d pooled vectors, %d image failures", row, len(failures))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_fit(cfg: PipelineConfig) -> int:
    _write_snapshot(cfg)
    out = Path(cfg.out)
    pfl_path = out / "pfl.alpt"
    if not pfl_path.exists():
        log.error("no pooled vectors at %s; run extract first", pfl_path)
        return EXIT_FATAL
    X = read_tensor(pfl_path)

    def batches():
        for start in range(0, X.shape[0], cfg.batch_size):
            yield X[start : start + cfg.batch_size]

    model_dir = out / "model"
    model = None
    if (model_dir / "meta.tsv").exists():
        model = clustering.load_checkpoint(model_dir, expected_k=cfg.k)
        log.info("resuming from epoch %d", model.epoch)

    def checkpoint_epoch(m: clustering.ClusterModel) -> None:
        clustering.save_checkpoint(m, out / "model_epochs" / f"epoch_{m.epoch:03d}")

    model = clustering.fit_batches(
        batches,
        k=cfg.k,
        seed=derive_seed(cfg.seed, "init"),
        epochs=cfg.epochs,
        model=model,
        on_epoch_end=checkpoint_epoch,
    )
    clustering.save_checkpoint(model, model_dir)
    log.info("fit: %d epochs, inertia history %s", model.epoch, model.inertia_history)
    return EXIT_OK


def cmd_build(cfg: PipelineConfig) -> int:
    manifest = _load_corpus(cfg)
    _write_snapshot(cfg)
    out = Path(cfg.out)
    model = clustering.load_checkpoint(out / "model", expected_k=cfg.k)
    palette = assembly.Palette.generate(cfg.k, cfg.resolved_palette_seed())
    pfl_index = _load_pfl_index(out)
    stats = assembly.build_dataset(
        manifest,
        model,
        out / "dataset",
        palette,
        sigma=cfg.sigma,
        normalize=cfg.normalize,
        workers=cfg.workers,
        pfl_index=pfl_index,
    )
    log.info("build: %d images ok, %d failed", stats.images_ok, stats.images_failed)
    return EXIT_PARTIAL if stats.images_failed else EXIT_OK


def _load_pfl_index(out: Path) -> dict[str, dict[int, np.ndarray]] | None:
    pfl_path, index_path = out / "pfl.alpt", out / "pfl_index.tsv"
    if not (pfl_path.exists() and index_path.exists()):
        return None
    X = read_tensor(pfl_path)
    index: dict[str, dict[int, np.ndarray]] = {}
    for line in index_path.read_text(encoding="utf-8").splitlines()[1:]:
        row, image_id, instance_id, _ = line.split("\t")
        index.setdefault(image_id, {})[int(instance_id)] = X[int(row)]
    return index


def cmd_eval(cfg: PipelineConfig) -> int:
    manifest = _load_corpus(cfg)
    _write_snapshot(cfg)
    if not cfg.gt_root:
        log.error("eval needs gt_root")
        return EXIT_CONFIG
    out = Path(cfg.out)
    model = clustering.load_checkpoint(out / "model", expected_k=cfg.k)
    entries = sorted(manifest.entries, key=lambda e: e.image_id)

    pairs, missing = [], 0
    for e in entries:
        gt_path = Path(cfg.gt_root) / f"{e.image_id}.png"
        pred_path = out / "dataset" / e.split / "labels" / f"{e.image_id}.png"
        if not gt_path.exists() or not pred_path.exists():
            missing += 1
            continue
        pairs.append((pred_path, gt_path))
    if not pairs:
        log.error("no (prediction, ground truth) pairs to evaluate")
        return EXIT_FATAL

    n_gt = 0
    for _, gt_path in pairs:
        gt = read_label_png(gt_path).labels
        present = gt[gt != IGNORE_LABEL]
        if present.size:
            n_gt = max(n_gt, int(present.max()) + 1)
    if n_gt == 0:
        log.error("ground truth rasters contain only ignore pixels")
        return EXIT_FATAL

    cm = ConfusionMatrix.zeros(model.k, n_gt)
    for pred_path, gt_path in pairs:
        cm.add(read_label_png(pred_path).labels, read_label_png(gt_path).labels)
    try:
        report = miou_macc(cm)
    except EmptyConfusionError:
        log.error("predictions and ground truth never overlap")
        return EXIT_FATAL
    write_report(report, out / "eval_report.tsv")
    print(f"mIoU {report.miou:.4f}  mAcc {report.macc:.4f}  pixels {report.total_pixels}")
    return EXIT_PARTIAL if missing else EXIT_OK


def cmd_pipeline(cfg: PipelineConfig) -> int:
    code = EXIT_OK
    for stage in (cmd_decompose, cmd_extract, cmd_fit, cmd_build):
        rc = stage(cfg)
        if rc == EXIT_FATAL:
            return rc
        code = max(code, rc)
    if cfg.gt_root:
        rc = cmd_eval(cfg)
        if rc == EXIT_FATAL:
            return rc
        code = max(code, rc)
    return code


_COMMANDS = {
    "decompose": cmd_decompose,
    "extract": cmd_extract,
    "fit": cmd_fit,
    "build": cmd_build,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autolabel",
        description="Generate pseudo-label rasters from instance masks and encoder features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--manifest", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--gt-root", dest="gt_root", type=str, default=None)
        p.add_argument("--palette-seed", dest="palette_seed", type=int, default=None)
        p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("AUTOLABEL_LOG", "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in (
            "manifest", "out", "sigma", "k", "seed", "workers",
            "batch_size", "epochs", "gt_root", "palette_seed", "normalize",
        )
    }
    try:
        file_values = parse_config_file(args.config) if args.config else None
        cfg = resolve_config(file_values, overrides)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg)
    except (ManifestError, TensorFileError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    except clustering.CheckpointMismatchError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception:  # noqa: BLE001
        log.exception("fatal error")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

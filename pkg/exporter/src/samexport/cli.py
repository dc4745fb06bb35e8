"""samexport command line: `export` a directory of images, `slice` a volume."""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import ModelLoadError, make_backend
from .export import export_directory
from .slicing import slice_volume

log = logging.getLogger(__name__)


def _parse_ratio(text: str) -> tuple[int, int]:
    try:
        train, val = (int(part) for part in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected TRAIN:VAL, got {text!r}") from exc
    if train <= 0 or val <= 0:
        raise argparse.ArgumentTypeError("ratio parts must be positive")
    return train, val


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samexport",
        description="Run the segmentation model over images and write pipeline interchange files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export")
    exp.add_argument("--images", required=True, help="directory of input images")
    exp.add_argument("--out", required=True)
    exp.add_argument("--grid", type=int, default=32, help="prompt grid density")
    exp.add_argument("--device", default="cpu")
    exp.add_argument("--backend", choices=("classical", "sam"), default="classical")
    exp.add_argument("--checkpoint", default="", help="model weights (sam backend)")
    exp.add_argument("--model-type", default="vit_h")
    exp.add_argument("--split", type=_parse_ratio, default=(7, 3), metavar="TRAIN:VAL")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--sigma", type=float, default=0.3)
    exp.add_argument("--k", type=int, default=16)
    exp.add_argument("--batch-size", type=int, default=4096)

    sli = sub.add_parser("slice")
    sli.add_argument("--volume", required=True)
    sli.add_argument("--axis", type=int, choices=(0, 1, 2), default=0)
    sli.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.command == "slice":
        try:
            written = slice_volume(args.volume, args.axis, args.out)
        except (OSError, ValueError) as exc:
            log.error("%s", exc)
            return 1
        print(f"wrote {len(written)} slices to {args.out}")
        return 0

    try:
        backend = make_backend(
            args.backend, grid=args.grid, seed=args.seed,
            checkpoint=args.checkpoint, model_type=args.model_type, device=args.device,
        )
    except ModelLoadError as exc:
        log.error("%s", exc)
        return 1
    records, failures = export_directory(
        args.images, args.out, backend,
        ratio=args.split, seed=args.seed,
        sigma=args.sigma, k=args.k, batch_size=args.batch_size,
    )
    print(f"exported {len(records)} images, {len(failures)} failures")
    if not records:
        return 1
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

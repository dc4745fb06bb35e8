"""File formats and corpus manifests shared by every pipeline stage.

Three carriers are defined here:

* ALPT tensor files -- a small binary container for float32/uint8/uint16
  arrays (instance maps, feature maps, pooled feature vectors, cluster
  centers). Little-endian, row-major, bit-reproducible.
* Corpus manifests -- line-oriented UTF-8 TSV listing the images of a
  corpus, their train/val split, and the run parameters.
* Label / mask rasters -- 8-bit single-channel PNG import/export, with
  255 reserved for uncovered/ignore pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"ALPT"
VERSION = 1

# dtype codes in the tensor header
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<u1"), 3: np.dtype("<u2")}
_KIND_TO_CODE = {"f4": 1, "u1": 2, "u2": 3}

IGNORE_LABEL = 255


class TensorFileError(Exception):
    """Base class for malformed tensor files."""


class BadMagicError(TensorFileError):
    pass


class UnsupportedVersionError(TensorFileError):
    pass


class UnsupportedDtypeError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


class DimsOverflowError(TensorFileError):
    pass


class InvalidDimsError(TensorFileError):
    pass


class ManifestError(Exception):
    """Raised for unreadable or inconsistent corpus manifests."""


def write_tensor(t: np.ndarray, path: str | Path) -> None:
    """Serialize an array to an ALPT tensor file.

    Output bytes are a pure function of the array's dtype, shape and
    values, so repeated writes are byte-identical across runs and
    platforms.
    """
    arr = np.ascontiguousarray(t)
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _KIND_TO_CODE:
        raise UnsupportedDtypeError(f"cannot serialize dtype {arr.dtype}")
    if arr.ndim < 1:
        raise InvalidDimsError("rank must be >= 1")
    if arr.ndim > 255:
        raise InvalidDimsError("rank must fit in one byte")
    if any(d < 1 for d in arr.shape):
        raise InvalidDimsError(f"dims must all be >= 1, got {arr.shape}")
    code = _KIND_TO_CODE[key]
    le = arr.astype(_CODE_TO_DTYPE[code], copy=False)
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(le.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an ALPT tensor file, validating every header field.

    Returns a writable array in native byte order; round-trips with
    write_tensor bit-exactly.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an ALPT tensor file")
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: header truncated")
    version, code, rank = struct.unpack("<HBB", raw[4:8])
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}")
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDtypeError(f"{path}: dtype code {code}")
    if rank < 1:
        raise InvalidDimsError(f"{path}: rank 0")
    dims_end = 8 + 8 * rank
    if len(raw) < dims_end:
        raise TruncatedPayloadError(f"{path}: dims truncated")
    dims = struct.unpack(f"<{rank}Q", raw[8:dims_end])
    if any(d < 1 for d in dims):
        raise InvalidDimsError(f"{path}: zero-sized dim in {dims}")
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for d in dims:
        count *= d
        if count * dtype.itemsize > 2**63 - 1:
            raise DimsOverflowError(f"{path}: dims {dims} overflow")
    nbytes = count * dtype.itemsize
    if len(raw) - dims_end < nbytes:
        raise TruncatedPayloadError(
            f"{path}: expected {nbytes} payload bytes, got {len(raw) - dims_end}"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return flat.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


@dataclass
class InstanceMap:
    """Per-image raster of instance identifiers.

    Pixel value 0 means "no instance here"; values 1..M are instance
    ids with no gaps.
    """

    width: int
    height: int
    ids: np.ndarray  # uint16, shape (height, width)

    @classmethod
    def from_ids(cls, ids: np.ndarray) -> "InstanceMap":
        ids = np.asarray(ids, dtype=np.uint16)
        m = cls(width=ids.shape[1], height=ids.shape[0], ids=ids)
        m.validate()
        return m

    @property
    def instance_count(self) -> int:
        return int(self.ids.max()) if self.ids.size else 0

    def validate(self) -> None:
        if self.ids.dtype != np.uint16:
            raise ValueError(f"instance ids must be uint16, got {self.ids.dtype}")
        if self.ids.shape != (self.height, self.width):
            raise ValueError("ids shape disagrees with width/height")
        present = np.unique(self.ids)
        nonzero = present[present != 0]
        m = self.instance_count
        if nonzero.size != m:
            raise ValueError(f"instance ids have gaps: {nonzero.size} ids, max {m}")


def decode_rgb_instance_map(
    rgb: np.ndarray, background_color: tuple[int, int, int] = (0, 0, 0)
) -> InstanceMap:
    """Convert a color-coded mask bitmap into a canonical id raster.

    Each distinct non-background color becomes one instance; ids are
    assigned 1..M in ascending (r, g, b) lexicographic order, so the
    result is independent of the particular color values used.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.size == 0:
        raise ValueError(f"expected non-empty HxWx3 raster, got shape {rgb.shape}")
    packed = (
        rgb[:, :, 0].astype(np.uint32) << 16
        | rgb[:, :, 1].astype(np.uint32) << 8
        | rgb[:, :, 2].astype(np.uint32)
    )
    bg = background_color[0] << 16 | background_color[1] << 8 | background_color[2]
    colors = np.unique(packed)  # sorted ascending == (r,g,b) lexicographic
    colors = colors[colors != bg]
    if colors.size > 65535:
        raise ValueError(f"{colors.size} distinct colors exceed the uint16 id space")
    ids = np.zeros(packed.shape, dtype=np.uint16)
    fg = packed != bg
    ids[fg] = np.searchsorted(colors, packed[fg]).astype(np.uint16) + 1
    return InstanceMap(width=rgb.shape[1], height=rgb.shape[0], ids=ids)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    instance_map_path: str
    feature_map_path: str
    source_width: int
    source_height: int
    split: str = "train"  # "train" | "val"


@dataclass(frozen=True)
class ManifestParams:
    sigma: float = 0.3
    k: int = 16
    batch_size: int = 4096


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    seed: int = 0
    params: ManifestParams = field(default_factory=ManifestParams)

    def validate(self) -> None:
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate image_id in manifest")
        for e in self.entries:
            if e.split not in ("train", "val"):
                raise ManifestError(f"{e.image_id}: bad split {e.split!r}")
        if not 0.0 <= self.params.sigma <= 1.0:
            raise ManifestError(f"sigma {self.params.sigma} outside [0, 1]")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


_MANIFEST_COLUMNS = ("image_id", "split", "instance_map", "feature_map", "width", "height")


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """Write a manifest as metadata lines + a header line + one TSV row per entry."""
    manifest.validate()
    p = manifest.params
    lines = [
        f"# seed={manifest.seed}",
        f"# sigma={p.sigma!r}",
        f"# k={p.k}",
        f"# batch_size={p.batch_size}",
        "\t".join(_MANIFEST_COLUMNS),
    ]
    for e in manifest.entries:
        lines.append(
            "\t".join(
                (
                    e.image_id,
                    e.split,
                    e.instance_map_path,
                    e.feature_map_path,
                    str(e.source_width),
                    str(e.source_height),
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, check_paths: bool = True) -> CorpusManifest:
    """Read a manifest, resolving relative paths against the manifest's directory.

    With check_paths (the default) every referenced file must exist.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    header_seen = False
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        fields = line.split("\t")
        if not header_seen:
            if tuple(fields) != _MANIFEST_COLUMNS:
                raise ManifestError(f"{path}:{ln}: unexpected header {fields}")
            header_seen = True
            continue
        if len(fields) != len(_MANIFEST_COLUMNS):
            raise ManifestError(f"{path}:{ln}: expected {len(_MANIFEST_COLUMNS)} fields")
        rows.append(fields)
    if not header_seen:
        raise ManifestError(f"{path}: missing header line")

    base = path.parent
    entries = []
    for image_id, split, imap, fmap, w, h in rows:
        imap_p = str((base / imap)) if not Path(imap).is_absolute() else imap
        fmap_p = str((base / fmap)) if not Path(fmap).is_absolute() else fmap
        entries.append(
            ManifestEntry(
                image_id=image_id,
                instance_map_path=imap_p,
                feature_map_path=fmap_p,
                source_width=int(w),
                source_height=int(h),
                split=split,
            )
        )
    try:
        params = ManifestParams(
            sigma=float(meta.get("sigma", 0.3)),
            k=int(meta.get("k", 16)),
            batch_size=int(meta.get("batch_size", 4096)),
        )
        manifest = CorpusManifest(entries=entries, seed=int(meta.get("seed", 0)), params=params)
    except ValueError as exc:
        raise ManifestError(f"{path}: bad metadata: {exc}") from exc
    manifest.validate()
    if check_paths:
        missing = [
            p
            for e in manifest.entries
            for p in (e.instance_map_path, e.feature_map_path)
            if not Path(p).exists()
        ]
        if missing:
            raise ManifestError(f"{path}: {len(missing)} referenced files missing, first: {missing[0]}")
    return manifest


def split_corpus(
    entries: list[ManifestEntry],
    ratio: tuple[int, int],
    seed: int,
    params: ManifestParams | None = None,
) -> CorpusManifest:
    """Partition a corpus into train/val by a seeded deterministic shuffle.

    Entries are first normalized to ascending image_id order so the
    result depends only on (entry set, ratio, seed). The first
    round(n * train / (train + val)) shuffled entries become train.
    """
    if not entries:
        raise ValueError("cannot split an empty corpus")
    train_parts, val_parts = ratio
    if train_parts <= 0 or val_parts <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    ordered = sorted(entries, key=lambda e: e.image_id)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train = int(np.floor(len(shuffled) * train_parts / (train_parts + val_parts) + 0.5))
    out = [
        replace(e, split="train" if i < n_train else "val") for i, e in enumerate(shuffled)
    ]
    return CorpusManifest(entries=out, seed=seed, params=params or ManifestParams())


@dataclass
class PseudoLabelRaster:
    """Per-image class raster: values < N are pseudo classes, 255 is ignore."""

    width: int
    height: int
    labels: np.ndarray  # uint8, shape (height, width)

    @classmethod
    def full_ignore(cls, width: int, height: int) -> "PseudoLabelRaster":
        return cls(width, height, np.full((height, width), IGNORE_LABEL, dtype=np.uint8))

    def validate(self, n_classes: int) -> None:
        lab = self.labels
        if lab.shape != (self.height, self.width) or lab.dtype != np.uint8:
            raise ValueError("labels must be uint8 with shape (height, width)")
        bad = (lab >= n_classes) & (lab != IGNORE_LABEL)
        if bad.any():
            raise ValueError(f"{int(bad.sum())} pixels outside [0, {n_classes}) and != 255")


def write_label_png(raster: PseudoLabelRaster, path: str | Path) -> None:
    Image.fromarray(raster.labels, mode="L").save(path, format="PNG")


def read_label_png(path: str | Path) -> PseudoLabelRaster:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return PseudoLabelRaster(width=arr.shape[1], height=arr.shape[0], labels=arr.copy())


def write_rgb_png(rgb: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_rgb_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def load_instance_map(
    path: str | Path, background_color: tuple[int, int, int] = (0, 0, 0)
) -> InstanceMap:
    """Load an instance map from an ALPT uint16 raster or a color-coded PNG."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return decode_rgb_instance_map(read_rgb_png(path), background_color)
    ids = read_tensor(path)
    if ids.ndim != 2 or ids.dtype != np.uint16:
        raise ValueError(f"{path}: instance map must be a rank-2 uint16 tensor")
    return InstanceMap.from_ids(ids)

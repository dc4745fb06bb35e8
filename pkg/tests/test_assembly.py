import numpy as np
import pytest

from autolabel.assembly import (
    _BASE_TABLE,
    Palette,
    assign_labels,
    build_dataset,
    colorize,
    compose_binary_raster,
    compose_raster,
    decode_colorized,
)
from autolabel.clustering import ClusterModel
from autolabel.featalign import PseudoFeatureLabel
from autolabel.interchange import IGNORE_LABEL, load_manifest, read_label_png
from autolabel.maskops import BinaryMask


def test_base_table_is_distinct_and_never_white():
    assert _BASE_TABLE.shape == (256, 3)
    rows = {tuple(c) for c in _BASE_TABLE}
    assert len(rows) == 256
    assert (255, 255, 255) not in rows


def test_palette_is_stable_and_distinct():
    a = Palette.generate(16, seed=9)
    b = Palette.generate(16, seed=9)
    assert np.array_equal(a.colors, b.colors)
    assert len({tuple(c) for c in a.colors}) == 16
    c = Palette.generate(16, seed=10)
    assert not np.array_equal(a.colors, c.colors)


def test_palette_bounds():
    Palette.generate(256, seed=0)
    with pytest.raises(ValueError):
        Palette.generate(0, seed=0)
    with pytest.raises(ValueError):
        Palette.generate(257, seed=0)


def _model(centers):
    centers = np.asarray(centers, dtype=np.float64)
    return ClusterModel(
        k=centers.shape[0],
        centers=centers,
        counts=np.ones(centers.shape[0], dtype=np.uint64),
        seed=0,
    )


def _pfl(vec, image_id="img", instance_id=1):
    return PseudoFeatureLabel(
        vector=np.asarray(vec, dtype=np.float32),
        image_id=image_id,
        instance_id=instance_id,
        pixel_count_at_256=1,
    )


def test_assign_labels_empty():
    assert assign_labels([], _model(np.zeros((2, 3)))) == {}


def test_assign_labels_center_match_and_purity():
    centers = np.zeros((4, 3))
    for i in range(4):
        centers[i] = i * 10.0
    model = _model(centers)
    pfls = [
        _pfl(centers[3], "a", 1),
        _pfl([1.0, 1.0, 1.0], "a", 2),
        _pfl([1.0, 1.0, 1.0], "b", 1),
    ]
    out = assign_labels(pfls, model)
    assert out[("a", 1)] == 3
    assert out[("a", 2)] == out[("b", 1)] == 0
    assert len(out) == 3


def _rect_mask(instance_id, h, w, y0, x0, y1, x1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask.from_bits(instance_id, bits)


def test_compose_no_masks_is_all_ignore():
    raster = compose_raster([], {}, 3, 2)
    assert (raster.labels == IGNORE_LABEL).all()


def test_compose_single_mask():
    mask = _rect_mask(1, 2, 2, 0, 0, 1, 1)
    raster = compose_raster([mask], {1: 4}, 2, 2)
    assert raster.labels.tolist() == [[4, 255], [255, 255]]


def test_compose_smaller_mask_wins_overlap():
    bits = np.zeros((2, 2), dtype=bool)  # L-shape, area 3
    bits[0, :] = True
    bits[1, 0] = True
    big = BinaryMask.from_bits(1, bits)
    small = _rect_mask(2, 2, 2, 0, 0, 1, 1)  # area 1, overlaps at (0, 0)
    raster = compose_raster([big, small], {1: 1, 2: 2}, 2, 2)
    assert raster.labels[0, 0] == 2
    assert raster.labels[0, 1] == 1


def test_compose_is_order_insensitive():
    rng = np.random.default_rng(3)
    masks = []
    for i in range(6):
        y = int(rng.integers(0, 12))
        x = int(rng.integers(0, 12))
        h = int(rng.integers(1, 5))
        w = int(rng.integers(1, 5))
        masks.append(_rect_mask(i + 1, 16, 16, y, x, min(y + h, 16), min(x + w, 16)))
    labels = {m.instance_id: m.instance_id % 5 for m in masks}
    a = compose_raster(masks, labels, 16, 16)
    b = compose_raster(list(reversed(masks)), labels, 16, 16)
    assert np.array_equal(a.labels, b.labels)


def test_compose_coverage_conservation():
    rng = np.random.default_rng(6)
    masks = [
        _rect_mask(i + 1, 20, 20, int(rng.integers(0, 15)), int(rng.integers(0, 15)),
                   int(rng.integers(15, 21)), int(rng.integers(15, 21)))
        for i in range(4)
    ]
    raster = compose_raster(masks, {m.instance_id: 0 for m in masks}, 20, 20)
    union = np.zeros((20, 20), dtype=bool)
    for m in masks:
        union |= m.bits
    assert np.array_equal(raster.labels != IGNORE_LABEL, union)


def test_compose_errors():
    mask = _rect_mask(1, 4, 4, 0, 0, 2, 2)
    with pytest.raises(ValueError):
        compose_raster([mask], {1: 0}, 8, 8)
    with pytest.raises(KeyError):
        compose_raster([mask], {}, 4, 4)


def test_compose_binary_raster_is_single_class():
    masks = [_rect_mask(1, 4, 4, 0, 0, 2, 2), _rect_mask(2, 4, 4, 2, 2, 4, 4)]
    raster = compose_binary_raster(masks, 4, 4)
    covered = raster.labels != IGNORE_LABEL
    assert (raster.labels[covered] == 0).all()
    assert covered.sum() == 8


def test_colorize_examples_and_round_trip():
    palette = Palette.generate(5, seed=2)
    blank = compose_raster([], {}, 4, 4)
    rgb = colorize(blank, palette)
    assert (rgb == 255).all()

    mask = BinaryMask.from_bits(1, np.ones((2, 2), dtype=bool))
    uniform = compose_raster([mask], {1: 0}, 2, 2)
    rgb0 = colorize(uniform, palette)
    assert (rgb0 == palette.colors[0]).all()

    mixed = compose_raster([_rect_mask(1, 3, 3, 0, 0, 2, 2)], {1: 3}, 3, 3)
    back = decode_colorized(colorize(mixed, palette), palette)
    assert np.array_equal(back.labels, mixed.labels)


def test_decode_colorized_rejects_unknown_color():
    palette = Palette.generate(2, seed=0)
    rgb = np.zeros((1, 1, 3), dtype=np.uint8)
    rgb[0, 0] = (1, 2, 3)
    if tuple(palette.colors[0]) != (1, 2, 3) and tuple(palette.colors[1]) != (1, 2, 3):
        with pytest.raises(ValueError):
            decode_colorized(rgb, palette)


def _signature_model(k=4, scale=20.0):
    centers = np.zeros((k, 256))
    for c in range(k):
        centers[c, c] = scale
    return _model(centers)


def test_build_dataset_outputs_and_stats(tmp_path, small_corpus):
    manifest = load_manifest(small_corpus)
    model = _signature_model()
    palette = Palette.generate(4, seed=1)
    out = tmp_path / "ds"
    stats = build_dataset(manifest, model, out, palette, sigma=0.3)
    assert stats.images_failed == 0
    assert stats.images_ok == len(manifest.entries)

    # independent recount: per-class pixel counts from the PNGs themselves
    stats_rows = {}
    for line in (out / "stats.tsv").read_text().splitlines()[1:]:
        parts = line.split("\t")
        if parts[0].startswith("__"):
            continue
        stats_rows[parts[0]] = parts
    for entry in manifest.entries:
        raster = read_label_png(out / entry.split / "labels" / f"{entry.image_id}.png")
        hist = np.bincount(raster.labels.ravel(), minlength=256)
        want = {c: int(n) for c, n in enumerate(hist[:255]) if n}
        row = stats_rows[entry.image_id]
        got = dict(
            (int(pair.split(":")[0]), int(pair.split(":")[1]))
            for pair in row[7].split(",")
            if pair
        )
        assert got == want
        assert int(row[6]) == int(hist[255])
    assert (out / "palette.tsv").exists()


def test_build_dataset_rerun_is_byte_identical(tmp_path, small_corpus):
    from conftest import tree_hash

    manifest = load_manifest(small_corpus)
    model = _signature_model()
    palette = Palette.generate(4, seed=1)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    build_dataset(manifest, model, out_a, palette, sigma=0.3)
    build_dataset(manifest, model, out_b, palette, sigma=0.3)
    assert tree_hash(out_a) == tree_hash(out_b)


def test_build_dataset_tallies_corrupt_feature(tmp_path):
    from autolabel.interchange import ManifestParams
    from autolabel.synth import SynthSpec, make_corpus

    manifest_path = make_corpus(
        tmp_path / "c", SynthSpec(n_images=2, seed=1), params=ManifestParams(k=4)
    )
    manifest = load_manifest(manifest_path)
    bad = manifest.entries[0]
    with open(bad.feature_map_path, "wb") as fh:
        fh.write(b"not a tensor")
    stats = build_dataset(
        manifest, _signature_model(), tmp_path / "ds", Palette.generate(4, 0), sigma=0.3
    )
    assert stats.images_failed == 1
    assert stats.images_ok == 1
    assert stats.failures[0][0] == bad.image_id
    other = [e for e in manifest.entries if e.image_id != bad.image_id][0]
    assert (tmp_path / "ds" / other.split / "labels" / f"{other.image_id}.png").exists()

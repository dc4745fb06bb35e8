import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autolabel.interchange import InstanceMap
from autolabel.maskops import (
    BinaryMask,
    FilterConfig,
    decompose,
    filter_gate,
    instance_proportion,
    read_mask_png,
    resize_mask,
    survival_by_sigma,
    write_mask_png,
)
from autolabel.synth import random_instance_map


def test_decompose_two_by_two():
    imap = InstanceMap.from_ids(np.array([[1, 2], [2, 0]], dtype=np.uint16))
    masks = decompose(imap)
    assert [m.instance_id for m in masks] == [1, 2]
    assert masks[0].pixel_count == 1
    assert masks[1].pixel_count == 2
    assert not masks[0].bits[1, 1] and not masks[1].bits[1, 1]


def test_decompose_empty_map():
    imap = InstanceMap.from_ids(np.zeros((4, 4), dtype=np.uint16))
    assert decompose(imap) == []


def test_decompose_half_filled_rows():
    ids = np.zeros((256, 256), dtype=np.uint16)
    ids[:128, :] = 1
    masks = decompose(InstanceMap.from_ids(ids))
    assert masks[0].pixel_count == 32768
    assert masks[0].bbox == (0, 0, 255, 127)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_decompose_partitions_nonzero_pixels(seed):
    rng = np.random.default_rng(seed)
    imap = random_instance_map(rng, size=48, max_rects=5, side_range=(4, 48))
    masks = decompose(imap)
    assert sum(m.pixel_count for m in masks) == int((imap.ids != 0).sum())
    union = np.zeros_like(imap.ids, dtype=bool)
    for m in masks:
        assert 0.0 <= instance_proportion(m) <= 1.0
        assert not (union & m.bits).any()  # pairwise disjoint
        union |= m.bits
    assert np.array_equal(union, imap.ids != 0)


def test_proportion_degenerate_and_half():
    empty = BinaryMask.from_bits(1, np.zeros((4, 4), dtype=bool))
    assert instance_proportion(empty) == 0.0
    bits = np.zeros((256, 256), dtype=bool)
    bits[:128, :] = True
    assert instance_proportion(BinaryMask.from_bits(1, bits)) == 0.5


def test_proportion_near_boundary_value():
    bits = np.zeros((256, 256), dtype=bool)
    bits.ravel()[:19660] = True
    assert instance_proportion(BinaryMask.from_bits(1, bits)) == 19660 / 65536


def test_gate_boundary_is_inclusive():
    # proportion exactly 0.3 with sigma 0.3 stays kept
    bits = np.zeros((1, 10), dtype=bool)
    bits[0, :3] = True
    m = BinaryMask.from_bits(1, bits)
    assert instance_proportion(m) == 0.3
    assert filter_gate(m, FilterConfig(sigma=0.3))


def test_gate_one_pixel_over_boundary():
    bits = np.zeros((256, 256), dtype=bool)
    bits.ravel()[:19661] = True
    m = BinaryMask.from_bits(1, bits)
    assert not filter_gate(m, FilterConfig(sigma=0.3))


def test_gate_sigma_one_keeps_everything():
    bits = np.ones((8, 8), dtype=bool)
    assert filter_gate(BinaryMask.from_bits(1, bits), FilterConfig(sigma=1.0))


def test_filter_config_rejects_bad_sigma():
    with pytest.raises(ValueError):
        FilterConfig(sigma=1.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s1=st.floats(0, 1), s2=st.floats(0, 1))
def test_gate_monotone_in_sigma(seed, s1, s2):
    lo, hi = sorted((s1, s2))
    rng = np.random.default_rng(seed)
    masks = decompose(random_instance_map(rng, size=32, max_rects=4, side_range=(2, 32)))
    kept_lo = {m.instance_id for m in masks if filter_gate(m, FilterConfig(sigma=lo))}
    kept_hi = {m.instance_id for m in masks if filter_gate(m, FilterConfig(sigma=hi))}
    assert kept_lo <= kept_hi


def test_survival_counts_monotone():
    rng = np.random.default_rng(5)
    masks = [
        m
        for _ in range(10)
        for m in decompose(random_instance_map(rng, size=64, max_rects=5, side_range=(2, 64)))
    ]
    counts = survival_by_sigma(masks, [0.1, 0.3, 0.5, 0.7, 1.0])
    values = [counts[s] for s in (0.1, 0.3, 0.5, 0.7, 1.0)]
    assert values == sorted(values)
    assert counts[1.0] == len(masks)


def test_resize_identity_is_bit_identical():
    rng = np.random.default_rng(2)
    bits = rng.random((6, 9)) < 0.5
    m = BinaryMask.from_bits(3, bits)
    r = resize_mask(m, 9, 6)
    assert np.array_equal(r.bits, bits)
    assert r.instance_id == 3


def test_resize_downscale_corner_pixel():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = True
    r = resize_mask(BinaryMask.from_bits(1, bits), 2, 2)
    assert r.bits[0, 0]
    assert r.pixel_count == 1


def test_resize_upscale_constant_true():
    r = resize_mask(BinaryMask.from_bits(1, np.ones((2, 2), dtype=bool)), 4, 4)
    assert r.bits.all()
    assert r.pixel_count == 16


def test_resize_can_empty_a_mask():
    bits = np.zeros((8, 8), dtype=bool)
    bits[1, 1] = True
    r = resize_mask(BinaryMask.from_bits(1, bits), 2, 2)
    assert r.pixel_count == 0 and r.bbox is None


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    out_w=st.integers(1, 20),
    out_h=st.integers(1, 20),
    constant=st.booleans(),
)
def test_resize_preserves_constant_masks(seed, out_w, out_h, constant):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 16)), int(rng.integers(1, 16))
    bits = np.full((h, w), constant, dtype=bool)
    r = resize_mask(BinaryMask.from_bits(1, bits), out_w, out_h)
    assert (r.bits == constant).all()
    same = resize_mask(BinaryMask.from_bits(1, bits), w, h)
    assert np.array_equal(same.bits, bits)


def test_mask_png_uses_zero_for_instance(tmp_path):
    bits = np.array([[True, False], [False, True]])
    m = BinaryMask.from_bits(7, bits)
    path = tmp_path / "m.png"
    write_mask_png(m, path)
    back = read_mask_png(path, instance_id=7)
    assert np.array_equal(back.bits, bits)
    from PIL import Image

    raw = np.asarray(Image.open(path))
    assert raw[0, 0] == 0 and raw[0, 1] == 255

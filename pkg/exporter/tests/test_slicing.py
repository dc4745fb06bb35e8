import numpy as np
import pytest
from PIL import Image

from samexport.alpt import write_tensor
from samexport.slicing import load_volume, normalize_volume, slice_volume


def test_acceptance_four_slice_volume(tmp_path):
    rng = np.random.default_rng(0)
    volume = rng.uniform(0, 1000, size=(4, 16, 16))
    np.save(tmp_path / "vol.npy", volume)
    written = slice_volume(tmp_path / "vol.npy", axis=0, out_dir=tmp_path / "slices")
    assert [p.name for p in written] == [f"vol_{i}.png" for i in range(4)]
    for index, path in enumerate(written):
        arr = np.asarray(Image.open(path))
        assert arr.shape == (16, 16) and arr.dtype == np.uint8
        want = np.clip(
            np.rint((volume[index] - volume.min()) / (volume.max() - volume.min()) * 255),
            0, 255,
        ).astype(np.uint8)
        assert np.array_equal(arr, want)
    print("PASS  slice count: 4-slice volume emitted exactly 4 normalized images")


def test_slice_count_matches_extent_along_each_axis(tmp_path):
    volume = np.arange(2 * 3 * 5, dtype=np.float32).reshape(2, 3, 5)
    np.save(tmp_path / "v.npy", volume)
    for axis, extent in ((0, 2), (1, 3), (2, 5)):
        written = slice_volume(tmp_path / "v.npy", axis=axis, out_dir=tmp_path / f"ax{axis}")
        assert len(written) == extent


def test_constant_volume_maps_to_zero(tmp_path):
    np.save(tmp_path / "flat.npy", np.full((3, 8, 8), 7.5))
    written = slice_volume(tmp_path / "flat.npy", axis=0, out_dir=tmp_path / "s")
    for path in written:
        assert not np.asarray(Image.open(path)).any()


def test_normalization_spans_full_range():
    volume = np.stack([np.zeros((4, 4)), np.full((4, 4), 10.0)])
    out = normalize_volume(volume)
    assert out.min() == 0 and out.max() == 255


def test_alpt_volume_source(tmp_path):
    volume = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4)
    write_tensor(volume, tmp_path / "v.alpt")
    written = slice_volume(tmp_path / "v.alpt", axis=0, out_dir=tmp_path / "s")
    assert len(written) == 2


def test_bad_volume_inputs(tmp_path):
    np.save(tmp_path / "flat2d.npy", np.zeros((4, 4)))
    with pytest.raises(ValueError):
        load_volume(tmp_path / "flat2d.npy")
    with pytest.raises(ValueError):
        slice_volume(tmp_path / "flat2d.npy", axis=0, out_dir=tmp_path / "s")
    (tmp_path / "vol.dat").write_bytes(b"xx")
    with pytest.raises(ValueError):
        load_volume(tmp_path / "vol.dat")
    np.save(tmp_path / "v3.npy", np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        slice_volume(tmp_path / "v3.npy", axis=5, out_dir=tmp_path / "s")

import numpy as np
import pytest
from PIL import Image as PILImage

from ura.errors import DataError, GeometryError
from ura.imaging import (Image, PairedSample, clip, load_image,
                         load_paired_dataset, save_image)

from helpers import random_image


def _write_png(path, arr_uint8):
    PILImage.fromarray(arr_uint8, mode="RGB").save(path)


def test_load_all_zero_bytes(tmp_path):
    path = tmp_path / "z.png"
    _write_png(path, np.zeros((8, 8, 3), dtype=np.uint8))
    img = load_image(path)
    assert np.all(img.data == 0.0)


def test_load_all_255_bytes(tmp_path):
    path = tmp_path / "w.png"
    _write_png(path, np.full((8, 8, 3), 255, dtype=np.uint8))
    img = load_image(path)
    assert np.all(img.data == 1.0)


def test_load_scaling_rule(tmp_path):
    # byte k decodes to exactly k / 255
    path = tmp_path / "m.png"
    _write_png(path, np.full((8, 8, 3), 128, dtype=np.uint8))
    img = load_image(path)
    assert np.allclose(img.data, 128.0 / 255.0, atol=0, rtol=0)


def test_save_endpoints_and_half(tmp_path):
    img = Image(np.zeros((3, 8, 8)))
    save_image(img, tmp_path / "a.png")
    assert np.all(np.asarray(PILImage.open(tmp_path / "a.png")) == 0)
    img = Image(np.ones((3, 8, 8)))
    save_image(img, tmp_path / "b.png")
    assert np.all(np.asarray(PILImage.open(tmp_path / "b.png")) == 255)
    # round-half-up: 0.5 * 255 = 127.5 -> byte 128
    img = Image(np.full((3, 8, 8), 0.5))
    save_image(img, tmp_path / "c.png")
    assert np.all(np.asarray(PILImage.open(tmp_path / "c.png")) == 128)


def test_round_trip_bound(tmp_path):
    img = random_image(7, 16, 16)
    save_image(img, tmp_path / "r.png")
    back = load_image(tmp_path / "r.png")
    assert np.abs(back.data - img.data).max() <= 1.0 / 510.0 + 1e-12


def test_missing_file():
    with pytest.raises(DataError):
        load_image("/nonexistent/never.png")


def test_undecodable(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"this is not a png")
    with pytest.raises(DataError):
        load_image(path)


def test_grayscale_rejected(tmp_path):
    path = tmp_path / "gray.png"
    PILImage.fromarray(np.zeros((8, 8), dtype=np.uint8), mode="L").save(path)
    with pytest.raises(DataError):
        load_image(path)


def test_image_invariants():
    with pytest.raises(DataError):
        Image(np.full((3, 8, 8), 1.5))
    with pytest.raises(GeometryError):
        Image(np.zeros((3, 4, 8)))  # below the 8-pixel minimum
    with pytest.raises(GeometryError):
        Image(np.zeros((1, 8, 8)))
    img = random_image(0)
    assert not img.data.flags.writeable


def test_clip_cases():
    data = np.full((3, 8, 8), 0.6)
    img = clip(Image(data), 0.0, 1.0)
    assert np.all(img.data == 0.6)
    # clamp both sides via raw arrays fed through a valid Image
    arr = np.full((3, 8, 8), 0.9)
    out = clip(Image(arr), 0.0, 0.5)
    assert np.all(out.data == 0.5)
    out2 = clip(Image(np.full((3, 8, 8), 0.1)), 0.3, 1.0)
    assert np.all(out2.data == 0.3)
    with pytest.raises(DataError):
        clip(img, 1.0, 0.0)


def test_clip_idempotent():
    img = random_image(3)
    once = clip(img, 0.2, 0.8)
    twice = clip(once, 0.2, 0.8)
    assert np.array_equal(once.data, twice.data)


def test_paired_sample_geometry():
    with pytest.raises(GeometryError):
        PairedSample(random_image(0, 16, 16), random_image(1, 16, 24), "x")


def _write_pair(root, name, seed):
    rng = np.random.default_rng(seed)
    for sub in ("rain", "clean"):
        (root / sub).mkdir(exist_ok=True, parents=True)
        _write_png(root / sub / name,
                   rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))


def test_dataset_single_pair(tmp_path):
    _write_pair(tmp_path, "a.png", 0)
    pairs = load_paired_dataset(tmp_path)
    assert len(pairs) == 1 and pairs[0].identifier == "a"


def test_dataset_orphan(tmp_path):
    _write_pair(tmp_path, "a.png", 0)
    rng = np.random.default_rng(1)
    _write_png(tmp_path / "rain" / "b.png",
               rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    with pytest.raises(DataError, match="b.png"):
        load_paired_dataset(tmp_path)


def test_dataset_ordering(tmp_path):
    for name in ("c.png", "a.png", "b.png"):
        _write_pair(tmp_path, name, hash(name) % 100)
    pairs = load_paired_dataset(tmp_path)
    assert [p.identifier for p in pairs] == ["a", "b", "c"]
    again = load_paired_dataset(tmp_path)
    assert [p.identifier for p in again] == ["a", "b", "c"]


def test_dataset_dimension_mismatch(tmp_path):
    (tmp_path / "rain").mkdir()
    (tmp_path / "clean").mkdir()
    rng = np.random.default_rng(2)
    _write_png(tmp_path / "rain" / "a.png",
               rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    _write_png(tmp_path / "clean" / "a.png",
               rng.integers(0, 256, (8, 16, 3), dtype=np.uint8))
    with pytest.raises(GeometryError):
        load_paired_dataset(tmp_path)

import csv

import numpy as np
import pytest
import torch
from PIL import Image

from structgan.data import (CorruptionSpec, DatasetError, EpochSampler, UnpairedDataset,
                            corrupt, fog_alpha, load_paired_testset, load_unpaired_dataset,
                            preprocess, procedural_scene, synthesize_desk_dataset, to_tensor,
                            to_uint8, write_desk_dataset)


def _write_images(folder, n, size=(8, 6), seed=0):
    folder.mkdir(parents=True, exist_ok=True)
    g = np.random.default_rng(seed)
    for i in range(n):
        arr = g.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr).save(folder / f"img_{i:04d}.png")


def test_folder_of_500_images(tmp_path):
    _write_images(tmp_path / "trainA", 500)
    ds = load_unpaired_dataset(tmp_path, "A")
    assert len(ds) == 500
    again = load_unpaired_dataset(tmp_path, "A")
    assert ds.items == again.items
    assert list(ds.items) == sorted(ds.items)


def test_grayscale_and_jpeg_decode_to_rgb(tmp_path):
    Image.fromarray(np.zeros((5, 7), dtype=np.uint8)).save(tmp_path / "g.jpg")
    ds = UnpairedDataset.from_folder(tmp_path)
    assert np.asarray(ds.load(0)).shape == (5, 7, 3)


def test_corrupt_file_is_named(tmp_path):
    _write_images(tmp_path / "trainB", 3)
    (tmp_path / "trainB" / "img_0001.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError, match="img_0001.png"):
        load_unpaired_dataset(tmp_path, "B")


def test_empty_or_missing_folder(tmp_path):
    (tmp_path / "trainA").mkdir()
    with pytest.raises(DatasetError, match="no PNG"):
        load_unpaired_dataset(tmp_path, "A")
    with pytest.raises(DatasetError, match="not a directory"):
        load_unpaired_dataset(tmp_path, "B")
    with pytest.raises(ValueError):
        load_unpaired_dataset(tmp_path, "C")


@pytest.mark.parametrize("src,load,crop", [((1920, 1080), (512, 288), (256, 256)),
                                          ((256, 256), (256, 256), (192, 192))])
def test_preprocess_sizes(rng, src, load, crop):
    img = Image.new("RGB", src, (200, 10, 30))
    t = preprocess(img, load, crop, rng)
    assert t.shape == (3, crop[1], crop[0])
    assert t.dtype == torch.float32
    assert t.min() >= -1 and t.max() <= 1


def test_load_equals_crop_takes_whole_image():
    arr = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    for seed in range(10):
        t = preprocess(arr, (16, 16), (16, 16), np.random.default_rng(seed), flip=False)
        assert torch.equal(t, to_tensor(arr))


def test_preprocess_crop_is_a_window_of_resized_image(rng):
    arr = np.random.default_rng(1).integers(0, 256, (20, 30, 3), dtype=np.uint8)
    t = preprocess(arr, (30, 20), (8, 8), rng, flip=False)
    full = to_tensor(arr)
    hits = [(y, x) for y in range(13) for x in range(23)
            if torch.equal(full[:, y:y + 8, x:x + 8], t)]
    assert hits


def test_preprocess_flip_both_ways():
    arr = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
    seen = {bool(torch.equal(preprocess(arr, (4, 4), (4, 4), np.random.default_rng(s)),
                             to_tensor(arr))) for s in range(20)}
    assert seen == {True, False}


def test_crop_larger_than_load(rng):
    with pytest.raises(ValueError, match="exceeds"):
        preprocess(np.zeros((8, 8, 3), np.uint8), (8, 8), (16, 8), rng)


def test_uint8_roundtrip():
    arr = np.random.default_rng(2).integers(0, 256, (5, 6, 3), dtype=np.uint8)
    np.testing.assert_array_equal(to_uint8(to_tensor(arr)), arr)


# --- sampler ---------------------------------------------------------------------------

def test_sampler_visits_small_domain_once():
    s = EpochSampler(5, 12, np.random.default_rng(0))
    for _ in range(3):
        pairs = s.epoch()
        assert sorted(i for i, _ in pairs) == list(range(5))
        assert all(0 <= j < 12 for _, j in pairs)


def test_sampler_large_domain_covered_without_repeats():
    s = EpochSampler(12, 4, np.random.default_rng(0))
    drawn = [i for _ in range(3) for i, _ in s.epoch()]
    assert sorted(drawn) == list(range(12))


def test_sampler_state_roundtrip():
    s = EpochSampler(3, 7, np.random.default_rng(5))
    s.epoch()
    saved = s.state()
    expected = [s.epoch() for _ in range(3)]
    t = EpochSampler(3, 7, np.random.default_rng(99))
    t.set_state(saved)
    assert [t.epoch() for _ in range(3)] == expected


# --- synthetic corruption -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["fog", "night", "rain"])
def test_severity_zero_is_identity(kind):
    pairs = synthesize_desk_dataset(spec=CorruptionSpec(kind, 0.0, 3), n=4, size=32)
    for c, d in zip(pairs.clean, pairs.degraded):
        np.testing.assert_array_equal(c, d)


def test_fog_severity_one_top_row_white():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    out = corrupt(img, CorruptionSpec("fog", 1.0))
    np.testing.assert_allclose(out[0], 1.0)
    np.testing.assert_allclose(out[-1], img[-1])
    a = fog_alpha(16, 1.0)[3]
    np.testing.assert_allclose(out[3], (1 - a) * img[3] + a)


def test_night_darkens_and_rain_brightens_streaks():
    img = np.full((32, 32, 3), 0.5)
    assert corrupt(img, CorruptionSpec("night", 0.8)).mean() < 0.3
    rain = corrupt(img, CorruptionSpec("rain", 0.8))
    assert rain.max() > 0.7


@pytest.mark.parametrize("sev", [-0.1, 1.5])
def test_severity_out_of_range(sev):
    with pytest.raises(ValueError, match="severity"):
        CorruptionSpec("fog", sev)


def test_unknown_corruption_kind():
    with pytest.raises(ValueError):
        CorruptionSpec("snow", 0.5)


def test_synthesis_deterministic():
    a = synthesize_desk_dataset(spec=CorruptionSpec("rain", 0.6, 11), n=5, size=32)
    b = synthesize_desk_dataset(spec=CorruptionSpec("rain", 0.6, 11), n=5, size=32)
    for x, y in zip(a.clean + a.degraded, b.clean + b.degraded):
        assert np.array_equal(x, y)
    c = synthesize_desk_dataset(spec=CorruptionSpec("rain", 0.6, 12), n=5, size=32)
    assert not np.array_equal(a.clean[0], c.clean[0])


def test_user_supplied_bases():
    bases = [np.full((8, 8, 3), 100, np.uint8) for _ in range(8)]
    pairs = synthesize_desk_dataset(bases, CorruptionSpec("fog", 0.5))
    assert len(pairs.clean) == 8
    np.testing.assert_array_equal(pairs.clean[0], bases[0])
    assert pairs.degraded[0][0].mean() > 100


def test_procedural_labels_overlap():
    img, labels = procedural_scene(np.random.default_rng(0), 64)
    assert img.shape == (64, 64, 3) and labels.shape == (5, 64, 64)
    assert labels.any(axis=(1, 2))[:2].all()
    g = np.random.default_rng(1)
    multi = [(procedural_scene(g, 64)[1].sum(0) >= 2).any() for _ in range(10)]
    assert any(multi)


def test_write_and_load_desk_dataset(tmp_path):
    train = synthesize_desk_dataset(spec=CorruptionSpec("fog", 0.7, 0), n=6, size=32)
    test = synthesize_desk_dataset(spec=CorruptionSpec("fog", 0.7, 1), n=3, size=32)
    write_desk_dataset(tmp_path, train, test)
    assert len(load_unpaired_dataset(tmp_path, "A")) == 6
    assert len(load_unpaired_dataset(tmp_path, "B", split="test")) == 3
    ts = load_paired_testset(tmp_path)
    got = list(ts.pairs())
    assert [p for p, _, _ in got] == test.pair_ids
    np.testing.assert_array_equal(to_uint8(got[0][2]), test.clean[0])
    np.testing.assert_array_equal(to_uint8(got[0][1]), test.degraded[0])
    # the training clean folder does not reveal pairing through file order
    b = load_unpaired_dataset(tmp_path, "B")
    loaded = [np.asarray(b.load(i)) for i in range(len(b))]
    assert any(not np.array_equal(x, y) for x, y in zip(loaded, train.clean))


def test_paired_testset_sorted_by_id(tmp_path):
    train = synthesize_desk_dataset(spec=CorruptionSpec("fog", 0.7, 0), n=2, size=16)
    test = synthesize_desk_dataset(spec=CorruptionSpec("fog", 0.7, 1), n=3, size=16)
    write_desk_dataset(tmp_path, train, test)
    rows = list(csv.reader(open(tmp_path / "pairs.csv")))
    with open(tmp_path / "pairs.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([rows[0]] + rows[1:][::-1])
    assert [p for p, _, _ in load_paired_testset(tmp_path).pairs()] == test.pair_ids


def test_missing_pairs_file(tmp_path):
    with pytest.raises(DatasetError, match="pairs.csv"):
        load_paired_testset(tmp_path)

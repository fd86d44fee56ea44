import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from uaix.errors import IdxFormatError
from uaix.synth import SynthConfig, generate, generate_backgrounds, glyph_mask, load_idx


def test_same_seed_bit_identical():
    a = generate(SynthConfig(seed=3), 50)
    b = generate(SynthConfig(seed=3), 50)
    c = generate(SynthConfig(seed=4), 50)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.masks, b.masks)
    assert not np.array_equal(a.images, c.images)


def test_images_are_independent_of_batching():
    cfg = SynthConfig(seed=1)
    whole = generate(cfg, 30)
    tail = generate(cfg, 10, start=20)
    assert np.array_equal(whole.images[20:], tail.images)


def test_shapes_and_ranges():
    d = generate(SynthConfig(), 200)
    assert d.images.shape == (200, 3, 28, 28) and d.images.dtype == np.float32
    assert d.masks.shape == (200, 28, 28) and set(np.unique(d.masks)) <= {0, 1}
    assert d.images.min() >= 0 and d.images.max() <= 1
    area = d.masks.reshape(200, -1).mean(axis=1)
    assert area.min() >= 0.15 and area.max() <= 0.35
    # glyphs do not touch the border rows or columns, so they sit wholly inside the frame
    assert not d.masks[:, 0].any() and not d.masks[:, -1].any()
    assert not d.masks[:, :, 0].any() and not d.masks[:, :, -1].any()
    item = d[0]
    assert item.image.shape == (3, 28, 28) and item.mask.shape == (28, 28)


def test_class_frequencies_and_area():
    d = generate(SynthConfig(seed=7), 10_000)
    freq = np.bincount(d.labels, minlength=10) / len(d)
    assert np.all(np.abs(freq - 0.1) <= 0.01)
    assert abs(d.masks.mean() - 0.25) <= 0.05


def test_mask_exact_on_glyph_pixels():
    cfg = SynthConfig(seed=2)
    d = generate(cfg, 300)
    bgs, labels = generate_backgrounds(cfg, 300)
    assert np.array_equal(labels, d.labels)
    glyph = d.masks.astype(bool)
    differs = np.any(d.images != bgs, axis=1)
    assert np.array_equal(differs, glyph)


def test_background_independent_of_label():
    cfg = SynthConfig(seed=5)
    bgs, labels = generate_backgrounds(cfg, 6000)
    X = bgs.reshape(len(bgs), -1)
    clf = LogisticRegression(max_iter=300, C=0.1).fit(X[:4000], labels[:4000])
    acc = clf.score(X[4000:], labels[4000:])
    assert acc <= 0.1 + 0.03


def test_glyph_mask_hits_target_area():
    cfg = SynthConfig()
    rng = np.random.default_rng(0)
    for label in range(10):
        m = glyph_mask(cfg, label, rng, area=0.25)
        assert abs(m.mean() - 0.25) < 0.02


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(area_low=0.1)
    with pytest.raises(ValueError):
        SynthConfig(num_classes=11)
    with pytest.raises(ValueError):
        SynthConfig(background_high=0.7)
    with pytest.raises(ValueError):
        generate(SynthConfig(), 0)


# -- IDX --


def write_idx(path, magic, dims, payload):
    path.write_bytes(struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload))


def test_load_idx_example(tmp_path):
    write_idx(tmp_path / "img", 0x803, (1, 2, 2), [0, 128, 255, 64])
    write_idx(tmp_path / "lab", 0x801, (1,), [7])
    d = load_idx(tmp_path / "img", tmp_path / "lab")
    assert d.images.shape == (1, 1, 2, 2)
    np.testing.assert_allclose(d.images[0, 0], [[0, 0.50196], [1, 0.25098]], atol=1e-5)
    assert d.labels.tolist() == [7] and d.masks is None


def test_load_idx_errors(tmp_path):
    write_idx(tmp_path / "img", 0x801, (1, 2, 2), [0, 1, 2, 3])
    write_idx(tmp_path / "lab", 0x801, (1,), [7])
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "img", tmp_path / "lab")
    write_idx(tmp_path / "img", 0x803, (1, 2, 2), [0, 1, 2])
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "img", tmp_path / "lab")
    write_idx(tmp_path / "img", 0x803, (2, 2, 2), [0] * 8)
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_load_idx_empty(tmp_path):
    write_idx(tmp_path / "img", 0x803, (0, 28, 28), [])
    write_idx(tmp_path / "lab", 0x801, (0,), [])
    d = load_idx(tmp_path / "img", tmp_path / "lab")
    assert len(d) == 0 and d.images.shape == (0, 1, 28, 28)

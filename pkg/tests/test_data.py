import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_image, write_png
from oracles import naive_bilinear, naive_gaussian_blur
from vicnn import data as D
from vicnn.errors import DataError, ShapeError, ValidationError


@pytest.mark.parametrize("src,dst", [((20, 30), 16), ((16, 16), 40), ((9, 13), (7, 11))])
def test_bilinear_matches_oracle(src, dst):
    img = np.random.default_rng(0).uniform(size=(3,) + src)
    np.testing.assert_allclose(D.resize_bilinear(img, dst), naive_bilinear(img, dst), atol=1e-6)


def test_bilinear_halving_averages_blocks():
    img = np.random.default_rng(1).uniform(size=(3, 8, 8))
    expect = img.reshape(3, 4, 2, 4, 2).mean(axis=(2, 4))
    np.testing.assert_allclose(D.resize_bilinear(img, 4), expect, atol=1e-6)


def test_read_image_png_and_npy(tmp_path):
    img = smooth_image(np.random.default_rng(2), 16)
    write_png(tmp_path / "a.png", img)
    got = D.read_image(tmp_path / "a.png")
    assert got.shape == (3, 16, 16) and got.dtype == np.float32
    np.testing.assert_allclose(got, np.round(img * 255) / 255, atol=1e-6)
    np.save(tmp_path / "b.npy", img.transpose(1, 2, 0))
    np.testing.assert_allclose(D.read_image(tmp_path / "b.npy"), img, atol=1e-6)
    (tmp_path / "c.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        D.read_image(tmp_path / "c.png")


def test_noise_is_seeded_clamped_and_has_sigma():
    img = np.full((3, 64, 64), 0.5, np.float32)
    a = D.add_gaussian_noise(img, seed=3)
    np.testing.assert_array_equal(a, D.add_gaussian_noise(img, seed=3))
    assert not np.array_equal(a, D.add_gaussian_noise(img, seed=4))
    assert a.min() >= 0 and a.max() <= 1
    assert np.std(a - img) == pytest.approx(25 / 255, rel=0.03)
    edge = D.add_gaussian_noise(np.zeros((3, 8, 8), np.float32), seed=0)
    assert edge.min() == 0.0


def test_gaussian_blur_matches_oracle():
    img = np.random.default_rng(5).uniform(size=(3, 20, 17))
    np.testing.assert_allclose(D.gaussian_blur(img, 2.0), naive_gaussian_blur(img, 2.0), atol=1e-6)
    k = D.gaussian_kernel(2.0)
    assert len(k) == 13 and k.sum() == pytest.approx(1.0)


def test_color_constancy_ground_truth():
    img = np.random.default_rng(6).uniform(0.1, 0.6, size=(3, 4, 4))
    illum = (1.2, 1.0, 0.8)
    gt = D.cc_ground_truth(img, illum)
    np.testing.assert_allclose(gt[0], np.clip(img[0] / 1.2 * 1.2, 0, 1), atol=1e-6)
    np.testing.assert_allclose(gt[2], np.clip(img[2] / 0.8 * 1.2, 0, 1), atol=1e-6)
    np.testing.assert_allclose(D.cc_ground_truth(D.apply_illuminant(img, illum), illum), img, atol=1e-6)
    with pytest.raises(ValidationError):
        D.cc_ground_truth(img, (1.0, 0.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_synthetic_illuminant_range(seed):
    r, g, b = D.synthetic_illuminant(seed)
    assert g == 1.0 and 0.6 <= r <= 1.4 and 0.6 <= b <= 1.4


def test_quad_split():
    img = np.arange(3 * 8 * 8, dtype=np.float64).reshape(3, 8, 8)
    q = D.quad_split(img, None)
    np.testing.assert_array_equal(q[1], img[:, :4, 4:])
    np.testing.assert_array_equal(q[2], img[:, 4:, :4])
    with pytest.raises(ShapeError):
        D.quad_split(np.zeros((3, 5, 4)))


def _entries(n):
    return [D.CorpusEntry(f"e{i:03d}", np.zeros((3, 2, 2), np.float32)) for i in range(n)]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(0, 1000))
def test_split_partitions_and_rounds_down(n, seed):
    tr, va, te = D.split_dataset(_entries(n), D.SplitConfig(seed=seed))
    assert len(va) == int(np.floor(0.2 * n + 1e-9)) and len(te) == int(np.floor(0.1 * n + 1e-9))
    names = [e.path for e in tr + va + te]
    assert sorted(names) == sorted(e.path for e in _entries(n))


def test_split_ignores_listing_order():
    es = _entries(20)
    a = D.split_dataset(es, D.SplitConfig(seed=1))
    b = D.split_dataset(es[::-1], D.SplitConfig(seed=1))
    assert [[e.path for e in p] for p in a] == [[e.path for e in p] for p in b]
    with pytest.raises(ValidationError):
        D.SplitConfig((0.5, 0.5, 0.5))


def test_illuminant_sidecar_roundtrip(tmp_path):
    D.write_illuminant(tmp_path / "x.illum", (0.7, 1.0, 1.3))
    assert D.read_illuminant(tmp_path / "x.illum") == (0.7, 1.0, 1.3)
    (tmp_path / "y.illum").write_text("1 2\n")
    with pytest.raises(DataError):
        D.read_illuminant(tmp_path / "y.illum")


def test_load_corpus_skips_bad_files(tiny_corpus, caplog):
    (tiny_corpus / "broken.png").write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING):
        entries = D.load_corpus(tiny_corpus, canvas=16)
    assert len(entries) == 12
    assert "broken.png" in caplog.text
    assert all(e.image.shape == (3, 16, 16) for e in entries)


def test_empty_or_missing_corpus(tmp_path):
    with pytest.raises(DataError):
        D.load_corpus(tmp_path)
    with pytest.raises(DataError):
        D.load_corpus(tmp_path / "missing")


@pytest.mark.parametrize("task", D.TASKS)
def test_prepare_is_reproducible(tiny_corpus, task):
    a = D.prepare(tiny_corpus, task, seed=5, canvas=16)
    b = D.prepare(tiny_corpus, task, seed=5, canvas=16)
    assert a.manifest == b.manifest and a.digest == b.digest
    assert a.manifest["clamped"] is True
    for p, q in zip(a.train + a.val, b.train + b.val):
        assert p.input.tobytes() == q.input.tobytes()
        assert p.target.tobytes() == q.target.tobytes()
    n = 12 * (4 if task == "cc" else 1)
    assert len(a.train) + len(a.val) + len(a.test) == n
    assert D.prepare(tiny_corpus, task, seed=6, canvas=16).digest != a.digest


def test_prepare_pairs_per_task(tiny_corpus):
    dn = D.prepare(tiny_corpus, "denoise", canvas=16)
    p = dn.train[0]
    assert p.input.shape == p.target.shape == (3, 16, 16)
    assert np.mean((p.input - p.target) ** 2) > 0
    db = D.prepare(tiny_corpus, "deblur", canvas=16)
    p = db.train[0]
    np.testing.assert_allclose(p.input, D.gaussian_blur(p.target), atol=1e-6)
    with pytest.raises(ValidationError):
        D.prepare(tiny_corpus, "inpaint")


def test_cc_uses_sidecar_when_present(tiny_corpus):
    D.write_illuminant(tiny_corpus / "img_00.illum", (1.3, 1.0, 0.7))
    ds = D.prepare(tiny_corpus, "cc", canvas=16)
    pairs = [p for p in ds.train + ds.val + ds.test if p.source.startswith("img_00.png")]
    assert len(pairs) == 4
    for p in pairs:
        np.testing.assert_allclose(p.target, D.cc_ground_truth(p.input, (1.3, 1.0, 0.7)), atol=1e-6)


def test_manifest_digest_tracks_file_content(tiny_corpus):
    a = D.prepare(tiny_corpus, "denoise", canvas=16).digest
    write_png(tiny_corpus / "img_00.png", np.zeros((3, 32, 32)))
    assert D.prepare(tiny_corpus, "denoise", canvas=16).digest != a


def test_desk_corpus_from_custom_source(tmp_path):
    src = tmp_path / "photo.png"
    write_png(src, smooth_image(np.random.default_rng(0), 300))
    paths = D.make_desk_corpus(tmp_path / "desk", n=5, seed=1, sources=[src])
    assert len(paths) == 5
    again = D.make_desk_corpus(tmp_path / "desk2", n=5, seed=1, sources=[src])
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
    assert all(D.read_image(p).shape[1] in (128, 256) for p in paths)

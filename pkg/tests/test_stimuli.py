import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from oracles import mean_over, naive_box_mean, naive_center_surround
from vicnn import stimuli as S
from vicnn.errors import ValidationError

BASELINE = [S.StimulusSpec(k, None, c) for k in S.KINDS for c in (False, True)]
PAIRED = [k for k in S.KINDS if k != "chevreul"]


@pytest.mark.parametrize("spec", BASELINE, ids=lambda s: s.id)
def test_baseline_stimuli_validate(spec):
    stim = S.generate(spec)
    info = S.validate_stimulus(stim)
    assert stim.image.shape == (3, 128, 128)
    assert stim.image.dtype == np.float32
    if stim.family != "band-edge":
        a, b = stim.masks[:2]
        assert a.sum() == b.sum()
        assert np.all(stim.image[:, a] == 0.5) and np.all(stim.image[:, b] == 0.5)
        assert info["target_means"][0] == [0.5, 0.5, 0.5]


def test_baseline_scales():
    assert S.BASELINE_SCALES == {"dungeon": 4, "hong_shevell": 1, "white": 4, "luminance_gradient": 5, "chevreul": 10}
    assert S.StimulusSpec("dungeon").scale == 4


@pytest.mark.parametrize("spec", BASELINE, ids=lambda s: s.id)
def test_generation_is_byte_deterministic(spec):
    a, b = S.generate(spec), S.generate(spec)
    assert a.image.tobytes() == b.image.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.masks, b.masks))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(S.KINDS), st.integers(1, 40), st.booleans(), st.sampled_from([32, 64, 96, 128]))
def test_every_scale_validates_or_is_rejected(kind, scale, colored, size):
    spec = S.StimulusSpec(kind, scale, colored, (size, size))
    try:
        stim = S.generate(spec)
    except S.StimulusRejected:
        return
    S.validate_stimulus(stim)


@pytest.mark.parametrize("kind", ["dungeon", "white", "chevreul"])
@pytest.mark.parametrize("scale", [1, 2, 3, 5])
def test_rectilinear_kinds_are_scale_covariant(kind, scale):
    small = S.generate(S.StimulusSpec(kind, scale, True, (64, 64)))
    big = S.generate(S.StimulusSpec(kind, 2 * scale, True, (128, 128)))
    np.testing.assert_array_equal(small.image.repeat(2, 1).repeat(2, 2), big.image)
    for m, n in zip(small.masks, big.masks):
        np.testing.assert_array_equal(m.repeat(2, 0).repeat(2, 1), n)


def test_oversize_scale_is_rejected():
    with pytest.raises(S.StimulusRejected):
        S.generate(S.StimulusSpec("dungeon", 200))
    with pytest.raises(S.StimulusRejected):
        S.generate(S.StimulusSpec("chevreul", 60))


def test_invalid_specs():
    with pytest.raises(ValidationError):
        S.StimulusSpec("kanizsa")
    with pytest.raises(ValidationError):
        S.StimulusSpec("dungeon", 0)
    with pytest.raises(ValidationError):
        S.StimulusSpec("dungeon", 4, canvas=(127, 128))


def test_validate_names_offending_pixel():
    stim = S.generate(S.StimulusSpec("dungeon"))
    y, x = np.argwhere(stim.masks[0])[0]
    stim.image[0, y, x] = 0.6
    with pytest.raises(ValidationError, match=f"row={y}, col={x}"):
        S.validate_stimulus(stim)


def test_to_grayscale_weights():
    img = np.zeros((3, 2, 2))
    img[0] = 1
    np.testing.assert_allclose(S.to_grayscale(img)[0], 0.2989)
    batch = np.ones((2, 3, 4, 4))
    assert S.to_grayscale(batch).shape == (2, 1, 4, 4)
    np.testing.assert_allclose(S.to_grayscale(batch), 0.2989 + 0.5870 + 0.1140)


def _oracle_effect(filtered, stim):
    y = S.to_grayscale(filtered)[0]
    a, b = stim.masks[:2]
    return mean_over(y, a) - mean_over(y, b)


@pytest.mark.parametrize("kind", ["dungeon", "hong_shevell", "white"])
def test_box_blur_oracle_agrees_with_assimilation_table(kind):
    stim = S.generate(S.StimulusSpec(kind))
    e = _oracle_effect(naive_box_mean(stim.image, 3), stim)
    assert np.sign(e) == stim.expected["Y"] != 0


def test_center_surround_oracle_agrees_with_contrast_table():
    stim = S.generate(S.StimulusSpec("luminance_gradient"))
    e = _oracle_effect(naive_center_surround(stim.image), stim)
    assert np.sign(e) == stim.expected["Y"] != 0


@pytest.mark.parametrize("kind", PAIRED)
def test_colored_expected_signs_follow_surrounds(kind):
    stim = S.generate(S.StimulusSpec(kind, None, True))
    filt = naive_box_mean if stim.family == "assimilation" else naive_center_surround
    out = filt(stim.image, 3) if filt is naive_box_mean else filt(stim.image)
    a, b = stim.masks[:2]
    for c, ch in enumerate("RGB"):
        if stim.expected[ch]:
            assert np.sign(mean_over(out[c], a) - mean_over(out[c], b)) == stim.expected[ch]


def test_chevreul_bands_ascend():
    stim = S.generate(S.StimulusSpec("chevreul"))
    means = [float(S.to_grayscale(stim.image)[0][m].mean()) for m in stim.masks]
    assert means == sorted(means) and len(set(means)) == len(means)
    assert len(stim.masks) == S.CHEVREUL_BANDS


def test_save_stimulus_writes_png_masks_and_sidecar(tmp_path):
    stim = S.generate(S.StimulusSpec("white", None, True))
    paths = S.save_stimulus(stim, tmp_path)
    png = np.asarray(Image.open(paths["image"]))
    expect = np.clip(np.round(stim.image.astype(np.float64) * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    np.testing.assert_array_equal(png, expect)
    assert len(paths["masks"]) == len(stim.masks)
    np.testing.assert_array_equal(np.asarray(Image.open(paths["masks"][0])) > 0, stim.masks[0])
    meta = json.loads(paths["meta"].read_text(encoding="utf-8"))
    assert meta["expected"] == stim.expected
    assert meta["spec"]["kind"] == "white"
    assert len(meta["probes"]) == len(stim.probes)


def test_sweep_validate_records_rejections():
    rows = S.sweep_validate(kinds=("hong_shevell",), scales=(1, 50), colored=(False,))
    assert [r["status"] for r in rows] == ["pass", "rejected"]

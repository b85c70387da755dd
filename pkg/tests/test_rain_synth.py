import dataclasses

import numpy as np
import pytest

from ura.errors import DataError, GeometryError
from ura.imaging import Image
from ura.rain_synth import (DropLayer, StreakField, SynthParams, compose,
                            gen_background, gen_drops, gen_streaks,
                            synth_pair)

from helpers import constant_image


def test_zero_streaks():
    p = SynthParams(streak_count=0, seed=1)
    field = gen_streaks(p, 16, 16)
    assert np.all(field.data == 0.0)


def test_streak_determinism():
    p = SynthParams(seed=42)
    a = gen_streaks(p, 32, 32)
    b = gen_streaks(p, 32, 32)
    assert np.array_equal(a.data, b.data)


def test_single_streak_intensity_cap():
    # blur disabled so the pre-blur cap is observable directly
    p = SynthParams(streak_count=1, streak_intensity_range=(0.5, 0.5),
                    blur_sigma=0.0, seed=3)
    field = gen_streaks(p, 32, 32)
    assert field.data.max() <= 0.5 + 1e-12
    assert field.data.max() > 0.0


def test_zero_drops():
    p = SynthParams(drop_count=0, seed=1)
    layer = gen_drops(p, 16, 16)
    assert np.all(layer.mask == 0.0) and np.all(layer.texture == 0.0)


def test_drop_determinism():
    p = SynthParams(seed=9)
    a = gen_drops(p, 24, 24)
    b = gen_drops(p, 24, 24)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.texture, b.texture)


def test_single_drop_mass():
    p = SynthParams(drop_count=1, seed=5)
    layer = gen_drops(p, 32, 32)
    assert layer.mask.sum() > 0.0
    assert layer.mask.max() <= 1.0


def test_small_field_rejected():
    with pytest.raises(GeometryError):
        gen_streaks(SynthParams(seed=0), 4, 16)


def test_compose_streaks_zero_field():
    b = constant_image(0.4)
    zero = StreakField(np.zeros((3, 16, 16)))
    out = compose(b, "streaks", streaks=zero)
    assert np.array_equal(out.data, b.data)


def test_compose_streaks_constant_sum():
    # B 0.2 + streaks 0.3 -> 0.5 everywhere
    b = constant_image(0.2)
    s = StreakField(np.full((3, 16, 16), 0.3))
    out = compose(b, "streaks", streaks=s)
    assert np.allclose(out.data, 0.5, atol=0, rtol=0)


def test_compose_drops_saturated_mask():
    b = constant_image(0.7)
    tex = np.random.default_rng(0).random((3, 16, 16))
    layer = DropLayer(np.ones((16, 16)), tex)
    out = compose(b, "drops", drops=layer)
    assert np.allclose(out.data, tex)


def test_combined_degenerates_to_streaks():
    b = gen_background(11, 16, 16)
    s = gen_streaks(SynthParams(seed=2), 16, 16)
    empty = DropLayer(np.zeros((16, 16)), np.zeros((3, 16, 16)))
    combined = compose(b, "combined", streaks=s, drops=empty, scatter_gain=1.0)
    plain = compose(b, "streaks", streaks=s)
    assert np.array_equal(combined.data, plain.data)


def test_combined_degenerates_to_drops():
    b = gen_background(12, 16, 16)
    d = gen_drops(SynthParams(seed=4), 16, 16)
    empty = StreakField(np.zeros((3, 16, 16)))
    combined = compose(b, "combined", streaks=empty, drops=d, scatter_gain=1.0)
    plain = compose(b, "drops", drops=d)
    assert np.array_equal(combined.data, plain.data)


def test_compose_requires_components():
    b = constant_image(0.5)
    with pytest.raises(DataError):
        compose(b, "streaks")
    with pytest.raises(DataError):
        compose(b, "combined", streaks=StreakField(np.zeros((3, 16, 16))))
    with pytest.raises(DataError):
        compose(b, "nonsense")


def test_compose_geometry_mismatch():
    b = constant_image(0.5, 16, 16)
    s = StreakField(np.zeros((3, 24, 24)))
    with pytest.raises(GeometryError):
        compose(b, "streaks", streaks=s)


def test_all_modes_in_range():
    for seed in range(4):
        p = SynthParams(seed=seed)
        for mode in ("streaks", "drops", "combined"):
            obs, bg = synth_pair(p, mode, 32, 32)
            assert obs.data.min() >= 0.0 and obs.data.max() <= 1.0
            assert isinstance(obs, Image) and isinstance(bg, Image)


def test_pair_determinism():
    p = SynthParams(seed=77)
    a = synth_pair(p, "combined", 32, 32)
    b = synth_pair(p, "combined", 32, 32)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[1].data, b[1].data)


def test_param_validation():
    with pytest.raises(DataError):
        SynthParams(streak_count=-1)
    with pytest.raises(DataError):
        SynthParams(streak_intensity_range=(0.5, 0.2))
    with pytest.raises(DataError):
        SynthParams(scatter_gain=0.0)
    with pytest.raises(DataError):
        dataclasses.replace(SynthParams(), blur_sigma=-1.0)

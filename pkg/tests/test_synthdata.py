import math

import numpy as np
import pytest
from scipy import ndimage

from lesionseg.synthdata import SynthSpec, ellipse_mask, generate, generate_one
from lesionseg.train import area_fraction


def _ellipse_count(size, cy, cx, a, b, theta):
    """Enumerate pixels one at a time against the rotated-ellipse inequality."""
    n = 0
    c, s = math.cos(theta), math.sin(theta)
    for y in range(size):
        for x in range(size):
            u = (x - cx) * c + (y - cy) * s
            v = -(x - cx) * s + (y - cy) * c
            n += (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return n


def test_white_on_black_without_noise():
    spec = SynthSpec(count=3, size=40, axis_min=5, axis_max=12, fg_min=255, fg_max=255, bg_min=0, bg_max=0, noise=0)
    for s in generate(spec):
        inside = s.mask > 0
        assert (s.pixels[inside] == 255).all()
        assert (s.pixels[~inside] == 0).all()


def test_deterministic_and_index_local():
    spec = SynthSpec(count=5, seed=3)
    a, b = generate(spec), generate(spec)
    for x, y in zip(a, b):
        assert x.id == y.id
        assert np.array_equal(x.pixels, y.pixels) and np.array_equal(x.mask, y.mask)
    # sample i does not depend on how many samples were requested
    assert np.array_equal(generate_one(SynthSpec(count=1, seed=3), 4).pixels, a[4].pixels)
    assert [s.id for s in a] == [f"synth_{i:04d}" for i in range(5)]
    assert not np.array_equal(generate(SynthSpec(count=1, seed=4))[0].pixels, a[0].pixels)


@pytest.mark.parametrize("params", [(32, 15.2, 16.7, 9.3, 5.1, 0.4), (24, 11.5, 12.0, 6.0, 6.0, 0.0),
                                    (64, 30.1, 28.4, 20.5, 9.75, 2.2)])
def test_mask_area_matches_enumeration(params):
    assert int(ellipse_mask(*params).sum()) == _ellipse_count(*params)


def test_masks_nonempty_and_simply_connected():
    for s in generate(SynthSpec(count=20, seed=11)):
        inside = s.mask > 0
        assert inside.any()
        _, n_fg = ndimage.label(inside)
        assert n_fg == 1
        # simply connected: background is one piece (the ellipse never touches the border)
        _, n_bg = ndimage.label(~inside)
        assert n_bg == 1


def test_area_fractions_span_bins():
    spec = SynthSpec(count=12)
    lo = math.pi * spec.axis_min**2 / spec.size**2
    hi = math.pi * spec.axis_max**2 / spec.size**2
    fr = np.array([area_fraction(s) for s in generate(spec)])
    bins = np.clip(((fr - lo) / (hi - lo) * 5).astype(int), 0, 4)
    assert len(set(bins.tolist())) >= 3


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(size=32, axis_max=20)
    with pytest.raises(ValueError):
        SynthSpec(noise=-1)
    with pytest.raises(ValueError):
        SynthSpec(axis_min=10, axis_max=5)
    with pytest.raises(ValueError):
        SynthSpec(fg_min=200, fg_max=100)

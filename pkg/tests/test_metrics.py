from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionseg.metrics import (
    IdMismatchError,
    LossWeights,
    bce,
    composite_loss,
    dice_hard,
    jaccard,
    score_report,
    soft_dice,
    thresholded_jaccard,
)
from lesionseg.net.gradcheck import grad_check

# 0.5*ln 2 + 0.5*(1 - 5/7), evaluated once by hand and frozen
COMPOSITE_SPOT = 0.489431


def test_bce_half_is_ln2():
    for g in (np.ones((3, 3)), np.zeros((3, 3)), np.eye(3)):
        loss, _ = bce(np.full((3, 3), 0.5), g)
        assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction_hits_clamp_floor():
    g = np.array([[0.0, 1.0], [1.0, 0.0]])
    loss, _ = bce(g, g)
    assert 0 < loss < 1e-6


def test_soft_dice_examples():
    assert soft_dice(np.ones(4), np.ones(4))[0] == pytest.approx(1.0)
    assert soft_dice(np.zeros(4), np.zeros(4))[0] == 1.0
    assert soft_dice(np.ones(4), np.zeros(4))[0] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        soft_dice(np.ones(4), np.ones(4), smooth=0)


def test_composite_spot_value():
    loss, _ = composite_loss(np.full((2, 2), 0.5), np.ones((2, 2)), LossWeights(0.5, 0.5), 1.0)
    assert loss == pytest.approx(COMPOSITE_SPOT, abs=1e-5)


def test_composite_degenerate_weights():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, (4, 4))
    g = (rng.random((4, 4)) > 0.5).astype(float)
    assert composite_loss(p, g, LossWeights(1, 0))[0] == bce(p, g)[0]
    assert composite_loss(g, g, LossWeights(0, 1))[0] == pytest.approx(0.0, abs=1e-12)


def test_shape_mismatch():
    for f in (bce, soft_dice, composite_loss, jaccard, dice_hard):
        with pytest.raises(ValueError):
            f(np.zeros((2, 2)), np.zeros((2, 3)))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1, 1)
    with pytest.raises(ValueError):
        LossWeights(0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (4, 4))
    g = (rng.random((4, 4)) > 0.5).astype(float)
    checks = {
        "bce": lambda q: bce(q, g),
        "dice": lambda q: soft_dice(q, g),
        "composite": lambda q: composite_loss(q, g, LossWeights(0.3, 0.7)),
    }
    for name, f in checks.items():
        err = grad_check(lambda q: f(q)[0], p, f(p)[1], samples=16, eps=1e-6, rng=rng)
        assert err < 1e-3, name


def test_soft_dice_range_and_equality():
    rng = np.random.default_rng(4)
    for _ in range(50):
        g = (rng.random(16) > 0.5).astype(float)
        p = (rng.random(16) > 0.5).astype(float)
        d = soft_dice(p, g)[0]
        assert 0 < d <= 1
        assert (d == 1.0) == bool(np.array_equal(p, g))


# ------------------------------------------------------------- hard metrics


def test_jaccard_and_dice_examples():
    a = np.array([[1, 1, 0]])
    b = np.array([[1, 0, 0]])
    assert jaccard(a, b) == 0.5
    assert dice_hard(a, b) == pytest.approx(2 / 3)
    assert jaccard(a, a) == 1.0 and dice_hard(a, a) == 1.0
    assert jaccard(a, 1 - a) == 0.0 and dice_hard(a, 1 - a) == 0.0
    z = np.zeros((3, 3))
    assert jaccard(z, z) == 1.0 and dice_hard(z, z) == 1.0
    assert jaccard(z, z, empty_value=0.0) == 0.0


def _brute(a, b):
    inter = union = na = nb = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
        na += x
        nb += y
    if union == 0:
        return Fraction(1), Fraction(1)
    return Fraction(inter, union), Fraction(2 * inter, na + nb)


def test_hard_metrics_against_pixel_counting():
    rng = np.random.default_rng(2024)
    for i in range(1000):
        density = rng.random() if i % 10 else 0.0
        a = (rng.random((16, 16)) < density).astype(np.uint8) * 255
        b = (rng.random((16, 16)) < rng.random()).astype(np.uint8) * 255
        if i % 50 == 0:
            b = np.zeros_like(b)
        jf, df = _brute(a > 0, b > 0)
        j, d = jaccard(a, b), dice_hard(a, b)
        assert j == float(jf) and d == float(df)
        assert df == 2 * jf / (1 + jf)
        assert jf == df / (2 - df)


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_thresholded_jaccard_monotone(j1, j2, tau):
    lo, hi = sorted((j1, j2))
    assert thresholded_jaccard(lo, tau) <= thresholded_jaccard(hi, tau)


def test_thresholded_jaccard_examples():
    assert thresholded_jaccard(0.7) == 0.7
    assert thresholded_jaccard(0.6) == 0.0
    assert thresholded_jaccard(0.65) == 0.65


# ------------------------------------------------------------------ report


def test_score_report_identity():
    rng = np.random.default_rng(0)
    masks = {f"img{i}": (rng.random((8, 8)) > 0.5).astype(np.uint8) * 255 for i in range(3)}
    agg = score_report(masks, masks).aggregate()
    assert (agg.dice, agg.jaccard, agg.thresholded_jaccard) == (1.0, 1.0, 1.0)


def test_score_report_half_jaccard_case():
    rep = score_report({"x": np.array([[1, 1, 0]])}, {"x": np.array([[1, 0, 0]])}, tau=0.65)
    agg = rep.aggregate()
    assert agg.jaccard == 0.5 and agg.thresholded_jaccard == 0.0


def test_score_report_sorted_and_csv():
    a = np.array([[1, 1], [0, 0]])
    b = np.array([[1, 0], [0, 0]])
    rep = score_report({"b": a, "a": a}, {"a": a, "b": b})
    assert [r.image_id for r in rep.rows] == ["a", "b"]
    assert rep.to_csv().splitlines() == [
        "image_id,dice,jaccard,thresholded_jaccard",
        "a,1.000000,1.000000,1.000000",
        "b,0.666667,0.500000,0.000000",
        "__aggregate__,0.833333,0.750000,0.500000",
    ]


def test_score_report_id_mismatch():
    m = np.zeros((2, 2))
    with pytest.raises(IdMismatchError, match="only in predictions \\['p'\\]"):
        score_report({"p": m, "c": m}, {"c": m, "g": m})
    with pytest.raises(IdMismatchError):
        score_report({"p": m}, {"g": m})
    with pytest.raises(IdMismatchError):
        score_report({}, {})

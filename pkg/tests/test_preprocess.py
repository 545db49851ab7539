import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpcrf.features import rectangles_scene
from fpcrf.preprocess import (
    apply_shift,
    binarize_labels,
    boundary_pixels,
    coregister,
    extract_patches,
    gradient_magnitude,
    patch_anchors,
    quantize_distance,
    signed_distance,
)
from oracles import brute_signed_distance, sobel_at


def test_gradient_constant():
    assert not gradient_magnitude(np.full((5, 6, 3), 0.4)).any()


def test_gradient_hand_sobel():
    rng = np.random.default_rng(0)
    img = rng.random((5, 5, 3))
    lum = img.mean(axis=-1)
    g = gradient_magnitude(img)
    for y, x in [(2, 2), (0, 0), (4, 1), (1, 3)]:
        assert g[y, x] == pytest.approx(sobel_at(lum, y, x), abs=1e-12)


def test_gradient_hand_3x3():
    plane = np.array([[0, 1, 2], [0, 1, 2], [0, 1, 2]], dtype=float)
    # gx = (2 + 4 + 2) - 0 = 8, gy = 0 at the center
    g = gradient_magnitude(np.repeat(plane[..., None], 3, axis=-1))
    assert g[1, 1] == pytest.approx(8.0)


def test_gradient_step_edge():
    img = np.zeros((9, 12, 3))
    img[:, 6:] = 1.0
    g = gradient_magnitude(img)
    assert g[4, 5] == g.max() and g[4, 6] == g.max()
    assert g[4, 0] == 0.0 and g[4, 11] == 0.0


def test_gradient_too_small():
    with pytest.raises(ValueError):
        gradient_magnitude(np.zeros((2, 5, 3)))


def _scene(seed=0):
    return rectangles_scene(np.random.default_rng(seed), size=48, count=(2, 4),
                            extent=(6, 14), margin=8)


def test_coregister_self():
    image, mask = _scene()
    est = coregister(mask, image)
    assert (est.dy, est.dx) == (0, 0)


def test_coregister_known_shift():
    image, mask = _scene(1)
    est = coregister(apply_shift(mask, (3, -2)), image)
    assert (est.dy, est.dx) == (3, -2)
    realigned = apply_shift(apply_shift(mask, (3, -2)), (-est.dy, -est.dx))
    assert np.array_equal(realigned[8:-8, 8:-8], mask[8:-8, 8:-8])


def test_coregister_out_of_window():
    image, mask = _scene(2)
    est = coregister(apply_shift(mask, (9, 0)), image, search_radius=7)
    assert abs(est.dy) <= 7 and abs(est.dx) <= 7


def test_coregister_degenerate():
    image, mask = _scene(3)
    with pytest.raises(ValueError, match="no correlation signal"):
        coregister(np.zeros_like(mask), image)
    with pytest.raises(ValueError, match="no correlation signal"):
        coregister(mask, np.full(image.shape, 0.5))


def test_apply_shift():
    m = np.zeros((5, 6), dtype=np.uint8)
    m[1, 2] = 1
    assert np.array_equal(apply_shift(m, (0, 0)), m)
    moved = apply_shift(m, (1, 2))
    assert moved[2, 4] == 1 and moved.sum() == 1
    rng = np.random.default_rng(0)
    r = (rng.random((10, 10)) > 0.5).astype(np.uint8)
    back = apply_shift(apply_shift(r, (2, -3)), (-2, 3))
    assert np.array_equal(back[:8, 3:], r[:8, 3:])


def _block():
    m = np.zeros((9, 9), dtype=np.uint8)
    m[2:7, 2:7] = 1
    return m


def test_signed_distance_examples():
    d = signed_distance(_block(), 5)
    assert d[4, 4] == 2.0
    assert d[2, 4] == 0.0
    assert d[1, 4] == -1.0
    assert (d[boundary_pixels(_block())] == 0).all()


def test_signed_distance_uniform():
    assert (signed_distance(np.ones((4, 4)), 3) == 3).all()
    assert (signed_distance(np.zeros((4, 4)), 3) == -3).all()


@pytest.mark.parametrize("seed", range(10))
def test_signed_distance_oracle(seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random((16, 20)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
    t = float(rng.uniform(1, 8))
    assert np.allclose(signed_distance(mask, t), brute_signed_distance(mask, t),
                       atol=1e-9, rtol=0)


def test_quantize_examples():
    assert quantize_distance(np.array([0.0, 20.0, -20.0]), 20).tolist() == [5, 10, 0]
    assert quantize_distance(np.array([1.4]), 5).tolist() == [6]
    assert quantize_distance(np.array([0.5, -0.5]), 5).tolist() == [6, 4]
    assert quantize_distance(np.array([-1.0]), 20).tolist() == [4]


def test_binarize():
    assert binarize_labels(np.array([5, 4, 10, 0])).tolist() == [1, 0, 1, 0]
    assert binarize_labels(np.full((3, 3), 10)).all()
    with pytest.raises(ValueError):
        binarize_labels(np.array([11]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 40))
def test_round_trip(seed, t):
    rng = np.random.default_rng(seed)
    mask = (rng.random((12, 12)) < 0.5).astype(np.uint8)
    labels = quantize_distance(signed_distance(mask, t), t)
    assert np.array_equal(binarize_labels(labels), mask)


def test_patches():
    img = np.zeros((256, 256, 3))
    assert len(extract_patches(img, np.zeros((256, 256)))) == 1
    assert len(extract_patches(np.zeros((512, 512, 3)), np.zeros((512, 512)))) == 4
    assert patch_anchors(300, 256, 64) == [0, 44]
    p = extract_patches(np.zeros((300, 300, 3)), np.zeros((300, 300)), overlap=64)
    assert [(q.row, q.col) for q in p] == [(0, 0), (0, 44), (44, 0), (44, 44)]
    assert all(q.image.shape == (256, 256, 3) for q in p)


def test_patches_too_large():
    with pytest.raises(ValueError):
        patch_anchors(100, 128)

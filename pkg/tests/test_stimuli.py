import numpy as np
import pytest

from predvision.stimuli import (
    DriftingGratingStream, grating, moving_square_video, sprite_classes, sprite_dataset,
)


def test_grating_range_and_period():
    g = grating(16, 0.0, 8.0, 0.0)
    assert g.dtype == np.uint8 and g.shape == (16, 16, 3)
    # horizontal period of 8 px, up to rounding
    assert np.abs(g[:, :8].astype(int) - g[:, 8:]).max() <= 1
    assert g.max() == 255 and g.min() == 0
    np.testing.assert_array_equal(grating(8, 1.0, 4.0, 0.3, contrast=0.0), 128)


def test_stream_is_reiterable_and_seeded():
    s = DriftingGratingStream(8, 50, seed=3)
    a, b = list(s), list(s)
    assert len(a) == len(s) == 50
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = list(DriftingGratingStream(8, 50, seed=4))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_sprite_classes_distinct():
    classes = sprite_classes(41)
    assert len(set(classes)) == 41
    assert len({s for s, _ in classes[:5]}) == 5
    with pytest.raises(ValueError):
        sprite_classes(1000)


def test_sprite_dataset_balanced():
    images, labels = sprite_dataset(16, 3, k=5, seed=0)
    assert len(images) == 15
    assert np.bincount(labels).tolist() == [3] * 5
    assert all(img.any() for img in images)


def test_moving_square_boxes_cover_target():
    frames, boxes = moving_square_video(40, 30, 50, side=6, speed=(3.0, 2.0), seed=1)
    for f, (x, y, w, h) in zip(frames, boxes.astype(int)):
        ys, xs = np.nonzero(f[..., 0])
        assert (xs.min(), ys.min(), xs.max() + 1 - xs.min(), ys.max() + 1 - ys.min()) == (x, y, w, h)


def test_sprite_video():
    from predvision.stimuli import sprite_video
    frames = sprite_video(8, 100, k=3, seed=0)
    assert len(frames) == 100 and frames[0].shape == (8, 8, 3)
    again = sprite_video(8, 100, k=3, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(frames, again))

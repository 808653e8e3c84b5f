import numpy as np
import pytest

from staticbackdoor.defense import (NO_DEFENSE, DefensePolicy, defended_labels, defended_predict, flip_policy,
                                    shrinkpad_policy, transform_batch)
from staticbackdoor.imaging import Image
from staticbackdoor.model import forward, new_model, predict_batch
from staticbackdoor.transforms import flip_lr, shrink_pad


@pytest.fixture(scope="module")
def model():
    return new_model("smallcnn", 10, 21)


def _image(rng):
    return Image(rng.integers(0, 256, (1, 28, 28), dtype=np.uint8))


def test_none_matches_forward(model, rng):
    x = _image(rng)
    label, logits = defended_predict(model, NO_DEFENSE, x)
    assert np.array_equal(logits, forward(model, x)) and label == int(np.argmax(forward(model, x)))


def test_flip_on_symmetric_input(model, rng):
    half = rng.integers(0, 256, (1, 28, 14), dtype=np.uint8)
    x = Image(np.concatenate([half, half[:, :, ::-1]], axis=2))
    assert np.array_equal(defended_predict(model, flip_policy(), x)[1], forward(model, x))


def test_flip_uses_mirrored_image(model, rng):
    x = _image(rng)
    assert np.array_equal(defended_predict(model, flip_policy(), x)[1], forward(model, flip_lr(x)))


def test_shrinkpad_center(model, rng):
    x = _image(rng)
    label, logits = defended_predict(model, shrinkpad_policy(4, "center"), x)
    expected = forward(model, shrink_pad(x, 4, (2, 2)))
    assert np.array_equal(logits, expected) and label == int(np.argmax(expected))


def test_center_offset_rounds_up():
    assert DefensePolicy("shrinkpad", 3, "center").sample(None).pad_offset == (2, 2)


def test_random_mode_reproducible(model, rng):
    x = _image(rng)
    p = shrinkpad_policy(4, "random", seed=5)
    a = defended_predict(model, p, x, np.random.default_rng(9))
    b = defended_predict(model, p, x, np.random.default_rng(9))
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_random_offsets_vary(rng):
    p = shrinkpad_policy(4, "random", seed=0)
    stream = p.rng()
    offsets = {p.sample(stream).pad_offset for _ in range(200)}
    assert len(offsets) > 10 and all(0 <= t <= 4 and 0 <= l <= 4 for t, l in offsets)


def test_inputs_not_mutated(model, rng):
    x = _image(rng)
    before_x = x.pixels.copy()
    before_w = [p.copy() for p in model.params]
    defended_predict(model, DefensePolicy("flip_then_shrinkpad", 4), x)
    assert np.array_equal(x.pixels, before_x)
    assert all(np.array_equal(a, b) for a, b in zip(before_w, model.params))


def test_batch_matches_single_calls(model, rng):
    images = rng.integers(0, 256, (6, 1, 28, 28), dtype=np.uint8)
    p = shrinkpad_policy(4, "random", seed=2)
    stream = p.rng()
    singles = [defended_predict(model, p, Image(im), stream)[0] for im in images]
    assert defended_labels(model, p, images).tolist() == singles


def test_none_policy_leaves_predictions(model, rng):
    images = rng.integers(0, 256, (8, 1, 28, 28), dtype=np.uint8)
    assert np.array_equal(defended_labels(model, NO_DEFENSE, images), predict_batch(model, images))
    assert transform_batch(NO_DEFENSE, images) is images


def test_tie_breaks_low(rng):
    m = new_model("smallcnn", 10, 0)
    for p in m.params:
        p[...] = 0
    assert defended_predict(m, NO_DEFENSE, _image(rng))[0] == 0


@pytest.mark.parametrize("kwargs", [dict(kind="rotate"), dict(kind="flip", shrink=2),
                                    dict(kind="shrinkpad", shrink=-1), dict(kind="none", offset_mode="edge")])
def test_policy_validation(kwargs):
    with pytest.raises(ValueError):
        DefensePolicy(**kwargs)


def test_oversized_shrink(model, rng):
    with pytest.raises(ValueError):
        defended_predict(model, shrinkpad_policy(28), _image(rng))

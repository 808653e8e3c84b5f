import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from staticbackdoor.errors import ConfigurationError, PlacementError
from staticbackdoor.imaging import Image, LabeledDataset
from staticbackdoor.trigger import (AlphaMask, CoveringBox, PoisonSpec, Trigger, blended_trigger,
                                    default_badnets_trigger, generate_poisoned, make_poisoned_dataset,
                                    minimum_covering_box, recolor_trigger, relocate_trigger,
                                    select_poison_indices, stamp_array)


def brute_force_box(mask):
    rows, cols = [], []
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            if mask[r, c] != 0:
                rows.append(r)
                cols.append(c)
    return CoveringBox(min(rows), min(cols), max(rows) - min(rows) + 1, max(cols) - min(cols) + 1)


def random_trigger(rng, host=(1, 12, 12)):
    h, w = rng.integers(1, 5, size=2)
    pattern = Image(rng.integers(0, 256, size=(host[0], h, w), dtype=np.uint8))
    weights = rng.random((h, w))
    weights[rng.random((h, w)) < 0.3] = 0.0
    weights[0, 0] = max(weights[0, 0], 0.1)
    loc = (int(rng.integers(h - 1, host[1])), int(rng.integers(w - 1, host[2])))
    return Trigger(pattern, AlphaMask(weights), loc)


class TestCoveringBox:
    def test_single_point(self):
        m = np.zeros((6, 9))
        m[2, 5] = 0.3
        assert minimum_covering_box(m) == CoveringBox(2, 5, 1, 1)

    def test_corner_span(self):
        m = np.zeros((8, 10))
        m[0, 0] = m[4, 7] = 1
        assert minimum_covering_box(m) == CoveringBox(0, 0, 5, 8)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            minimum_covering_box(np.zeros((3, 3)))

    def test_matches_brute_force(self, rng):
        for _ in range(1000):
            h, w = rng.integers(1, 20, size=2)
            m = np.where(rng.random((h, w)) < rng.uniform(0.01, 0.2), rng.random((h, w)), 0.0)
            m[rng.integers(h), rng.integers(w)] = 0.5
            assert minimum_covering_box(m) == brute_force_box(m)

    def test_box_is_tight(self, rng):
        m = np.zeros((10, 10))
        m[3, 4] = m[7, 2] = 1
        box = minimum_covering_box(m)
        nz = np.argwhere(m)
        assert nz[:, 0].min() == box.top and nz[:, 0].max() == box.bottom_right[0]
        assert nz[:, 1].min() == box.left and nz[:, 1].max() == box.bottom_right[1]


class TestDefaultTrigger:
    def test_location_bottom_right(self):
        assert default_badnets_trigger((3, 32, 32)).location == (31, 31)
        assert default_badnets_trigger((1, 28, 28)).location == (27, 27)

    def test_pattern_levels(self):
        t = default_badnets_trigger((1, 28, 28))
        p = t.pattern.pixels[0]
        assert p[1, 1] == 128 and p[0, 1] == 0
        assert p.tolist() == [[128, 0, 128], [0, 128, 0], [128, 0, 128]]

    def test_mask_all_ones(self):
        assert default_badnets_trigger((1, 28, 28)).mask.weights.tolist() == [[1.0] * 3] * 3

    def test_three_channels(self):
        t = default_badnets_trigger((3, 32, 32))
        assert t.pattern.shape == (3, 3, 3)

    def test_too_small(self):
        with pytest.raises(PlacementError):
            default_badnets_trigger((1, 2, 5))

    def test_covering_box_of_full_mask(self):
        t = default_badnets_trigger((1, 28, 28))
        full = np.zeros((28, 28))
        b = t.box
        full[b.top:b.top + b.height, b.left:b.left + b.width] = t.mask.weights
        assert minimum_covering_box(full) == b
        assert b.bottom_right == t.location


class TestGeneratePoisoned:
    def test_hand_blend(self):
        x = Image(np.full((1, 4, 4), 100, dtype=np.uint8))
        t = Trigger(Image(np.full((1, 2, 2), 200, dtype=np.uint8)), AlphaMask(np.full((2, 2), 0.5)), (3, 3))
        out = generate_poisoned(x, t).pixels[0]
        expected = np.full((4, 4), 100)
        expected[2:, 2:] = 150
        assert out.tolist() == expected.tolist()

    def test_alpha_zero_is_identity(self, rng):
        x = Image(rng.integers(0, 256, (3, 8, 8), dtype=np.uint8))
        t = Trigger(Image(np.full((3, 3, 3), 200, np.uint8)), AlphaMask.unchecked(np.zeros((3, 3))), (5, 5))
        assert generate_poisoned(x, t) == x

    def test_alpha_one_copies_pattern(self, rng):
        x = Image(rng.integers(0, 256, (3, 8, 8), dtype=np.uint8))
        pat = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        t = Trigger(Image(pat), AlphaMask(np.ones((3, 3))), (4, 6))
        out = generate_poisoned(x, t).pixels
        assert np.array_equal(out[:, 2:5, 4:7], pat)

    def test_out_of_bounds(self):
        x = Image(np.zeros((1, 4, 4), np.uint8))
        t = Trigger(Image(np.zeros((1, 2, 2), np.uint8)), AlphaMask(np.ones((2, 2))), (4, 1))
        with pytest.raises(PlacementError):
            generate_poisoned(x, t)

    def test_outside_box_untouched(self, rng):
        for _ in range(1000):
            t = random_trigger(rng)
            x = Image(rng.integers(0, 256, (1, 12, 12), dtype=np.uint8))
            out = generate_poisoned(x, t).pixels
            b = t.box
            outside = np.ones((12, 12), bool)
            outside[b.top:b.top + b.height, b.left:b.left + b.width] = False
            assert np.array_equal(out[:, outside], x.pixels[:, outside])

    def test_idempotent_with_full_mask(self, rng):
        t = default_badnets_trigger((1, 28, 28))
        x = Image(rng.integers(0, 256, (1, 28, 28), dtype=np.uint8))
        once = generate_poisoned(x, t)
        assert generate_poisoned(once, t) == once

    def test_batch_matches_single(self, rng):
        t = blended_trigger((3, 10, 10), 0.2, seed=3)
        batch = rng.integers(0, 256, (5, 3, 10, 10), dtype=np.uint8)
        stamped = stamp_array(batch, t)
        for i in range(5):
            assert np.array_equal(stamped[i], generate_poisoned(Image(batch[i]), t).pixels)


class TestRelocateRecolor:
    def test_relocate_identity(self):
        t = default_badnets_trigger((1, 32, 32))
        assert relocate_trigger(t, t.location) == t

    def test_relocate_geometry(self):
        t = relocate_trigger(default_badnets_trigger((1, 32, 32)), (2, 2), (1, 32, 32))
        assert t.box == CoveringBox(0, 0, 3, 3)
        x = Image(np.full((1, 32, 32), 255, np.uint8))
        out = generate_poisoned(x, t).pixels[0]
        assert np.array_equal(out[:3, :3], t.pattern.pixels[0]) and (out[3:, :] == 255).all()

    def test_relocate_out_of_bounds(self):
        with pytest.raises(PlacementError):
            relocate_trigger(default_badnets_trigger((1, 32, 32)), (1, 1))
        with pytest.raises(PlacementError):
            relocate_trigger(default_badnets_trigger((1, 32, 32)), (32, 5), (1, 32, 32))

    def test_recolor_identity(self):
        t = default_badnets_trigger((1, 28, 28))
        assert recolor_trigger(t, 128, 128) == t

    def test_recolor_to_white(self):
        p = recolor_trigger(default_badnets_trigger((1, 28, 28)), 128, 255).pattern.pixels
        assert (p == 255).sum() == 5 and (p == 0).sum() == 4

    def test_recolor_to_black(self):
        p = recolor_trigger(default_badnets_trigger((1, 28, 28)), 128, 0).pattern.pixels
        assert (p == 0).all()

    def test_recolor_range(self):
        with pytest.raises(ValueError):
            recolor_trigger(default_badnets_trigger((1, 28, 28)), 128, 256)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 27), st.integers(2, 27), st.integers(0, 255))
    def test_relocate_recolor_commute(self, r, c, v):
        t = default_badnets_trigger((1, 28, 28))
        a = recolor_trigger(relocate_trigger(t, (r, c)), 128, v)
        b = relocate_trigger(recolor_trigger(t, 128, v), (r, c))
        assert a == b

    def test_serialization_round_trip(self):
        t = blended_trigger((1, 6, 6), 0.25, seed=1)
        assert Trigger.from_dict(t.to_dict()) == t


def _dataset(n, rng, classes=10):
    return LabeledDataset(rng.integers(0, 256, (n, 1, 8, 8), dtype=np.uint8),
                          np.arange(n) % classes, classes)


class TestPoisonedDataset:
    def test_full_poisoning(self, rng):
        ds = _dataset(50, rng)
        poisoned, benign = make_poisoned_dataset(ds, default_badnets_trigger((1, 8, 8)), PoisonSpec(3, 1.0))
        assert benign is None and len(poisoned) == 50 and (poisoned.labels == 3).all()

    def test_counts_and_disjointness(self):
        spec = PoisonSpec(0, 0.1, seed=7)
        chosen = select_poison_indices(60000, spec)
        rest = np.setdiff1d(np.arange(60000), chosen)
        assert chosen.size == 6000 and rest.size == 54000
        assert np.intersect1d(chosen, rest).size == 0 and np.unique(chosen).size == 6000

    def test_partition_covers_input(self, rng):
        ds = _dataset(200, rng)
        t = default_badnets_trigger((1, 8, 8))
        spec = PoisonSpec(2, 0.25, seed=5)
        poisoned, benign = make_poisoned_dataset(ds, t, spec)
        chosen = select_poison_indices(200, spec)
        assert len(poisoned) + len(benign) == 200
        assert np.array_equal(poisoned.images, stamp_array(ds.images[chosen], t))
        keep = np.setdiff1d(np.arange(200), chosen)
        assert np.array_equal(benign.images, ds.images[keep]) and np.array_equal(benign.labels, ds.labels[keep])

    def test_seeded(self, rng):
        ds = _dataset(100, rng)
        t = default_badnets_trigger((1, 8, 8))
        a = make_poisoned_dataset(ds, t, PoisonSpec(0, 0.3, seed=9))
        b = make_poisoned_dataset(ds, t, PoisonSpec(0, 0.3, seed=9))
        assert a[0] == b[0] and a[1] == b[1]

    def test_zero_count_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            make_poisoned_dataset(_dataset(5, rng), default_badnets_trigger((1, 8, 8)), PoisonSpec(0, 0.1))

    def test_rate_validation(self):
        with pytest.raises(ConfigurationError):
            PoisonSpec(0, 0.0)
        with pytest.raises(ConfigurationError):
            PoisonSpec(0, 1.5)

    def test_target_out_of_range(self, rng):
        with pytest.raises(ConfigurationError):
            make_poisoned_dataset(_dataset(50, rng), default_badnets_trigger((1, 8, 8)), PoisonSpec(10, 0.5))

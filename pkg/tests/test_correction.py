import numpy as np
import pytest
import torch

from clickseg import Click, Similarity, blend_feedback, feature_affinity, focused_correction
from clickseg.correction import (
    click_to_feature_coords,
    focused_correction_cropped,
    zero_norm_events,
)


def rand_features(rng, c=6, h=8, w=8, positive=True):
    arr = rng.random((c, h, w)).astype(np.float32)
    if positive:
        arr += 0.05
    return torch.from_numpy(arr)


class TestFeatureAffinity:
    def test_self_similarity_is_one(self, rng):
        f = rand_features(rng)
        aff = feature_affinity(f, (3, 4))
        assert aff[3, 4].item() == pytest.approx(1.0, abs=1e-6)

    def test_hand_computed_cosine(self):
        f = torch.zeros((2, 2, 2))
        f[:, 0, 0] = torch.tensor([3.0, 4.0])
        f[:, 1, 1] = torch.tensor([4.0, 3.0])
        aff = feature_affinity(f, (1, 1))
        assert aff[0, 0].item() == pytest.approx(24 / 25, abs=1e-6)

    def test_exponential_zero_distance_is_one(self, rng):
        f = rand_features(rng)
        f[:, 2, 2] = f[:, 5, 5]
        for sigma in (0.1, 1.0, 10.0):
            aff = feature_affinity(f, (5, 5), Similarity.exponential(sigma))
            assert aff[2, 2].item() == pytest.approx(1.0, abs=1e-6)
            assert aff[5, 5].item() == pytest.approx(1.0, abs=1e-6)

    def test_exponential_matches_formula(self, rng):
        f = rand_features(rng, c=3, h=4, w=4)
        sigma = 0.7
        aff = feature_affinity(f, (1, 2), Similarity.exponential(sigma))
        anchor = f[:, 1, 2]
        expected = torch.exp(-((f - anchor[:, None, None]) ** 2).sum(0) / sigma)
        torch.testing.assert_close(aff, expected)

    def test_range_clamped_to_unit_interval(self, rng):
        f = rand_features(rng, positive=False) - 0.5  # signed features
        aff = feature_affinity(f, (0, 0))
        assert aff.min().item() >= 0.0
        assert aff.max().item() <= 1.0

    def test_zero_norm_vector_counted_not_raised(self):
        f = torch.ones((3, 4, 4))
        f[:, 2, 2] = 0.0
        zero_norm_events.reset()
        aff = feature_affinity(f, (0, 0))
        assert aff[2, 2].item() == 0.0
        assert zero_norm_events.count == 1

    def test_channel_permutation_invariance(self, rng):
        f = rand_features(rng, c=5)
        perm = torch.randperm(5)
        a = feature_affinity(f, (2, 3))
        b = feature_affinity(f[perm], (2, 3))
        torch.testing.assert_close(a, b)


class TestBlendFeedback:
    def test_zero_affinity_is_identity(self, rng):
        fb = torch.from_numpy(rng.random((6, 6)).astype(np.float32))
        out = blend_feedback(torch.zeros((6, 6)), fb, 1)
        torch.testing.assert_close(out, fb)

    def test_full_affinity_is_constant_label(self, rng):
        fb = torch.from_numpy(rng.random((6, 6)).astype(np.float32))
        assert (blend_feedback(torch.ones((6, 6)), fb, 1) == 1.0).all()
        assert (blend_feedback(torch.ones((6, 6)), fb, 0) == 0.0).all()

    def test_hand_computed_value(self):
        out = blend_feedback(torch.full((1, 1), 0.25), torch.full((1, 1), 0.2), 1)
        assert out.item() == pytest.approx(0.4, abs=1e-7)

    def test_stays_in_unit_interval(self, rng):
        for _ in range(10):
            aff = torch.from_numpy(rng.random((5, 5)).astype(np.float32))
            fb = torch.from_numpy(rng.random((5, 5)).astype(np.float32))
            out = blend_feedback(aff, fb, int(rng.integers(0, 2)))
            assert out.min().item() >= 0.0
            assert out.max().item() <= 1.0


class TestFocusedCorrection:
    def test_degenerate_box_returns_input(self, rng):
        f = rand_features(rng, h=16, w=16)
        fb = torch.from_numpy(rng.random((16, 16)).astype(np.float32))
        # round(0.05 * 16) = 1 -> actually nonzero; use tiny frame where round() hits 0
        f2 = rand_features(rng, h=4, w=4)
        fb2 = torch.from_numpy(rng.random((4, 4)).astype(np.float32))
        out = focused_correction(f2, fb2, Click(1, 1, 1), (1, 1), 0.1)  # round(0.4)=0
        torch.testing.assert_close(out, fb2)

    def test_full_ratio_equals_full_frame_blend(self, rng):
        f = rand_features(rng, h=8, w=8)
        fb = torch.from_numpy(rng.random((8, 8)).astype(np.float32))
        click = Click(4, 4, 1)
        out = focused_correction(f, fb, click, (4, 4), 1.0)
        expected = blend_feedback(feature_affinity(f, (4, 4)), fb, 1)
        torch.testing.assert_close(out, expected)

    def test_composition_inside_and_outside_box(self, rng):
        f = rand_features(rng, h=8, w=8)
        fb = torch.from_numpy(rng.random((8, 8)).astype(np.float32))
        click = Click(4, 4, 1)
        out = focused_correction(f, fb, click, (4, 4), 0.5)  # 4x4 box at (2..6)
        blended = blend_feedback(feature_affinity(f, (4, 4)), fb, 1)
        inside = np.s_[2:6, 2:6]
        torch.testing.assert_close(out[inside], blended[inside])
        outside = torch.ones(8, 8, dtype=torch.bool)
        outside[inside] = False
        assert torch.equal(out[outside], fb[outside])

    def test_outside_box_bit_exact(self, rng):
        for _ in range(10):
            f = rand_features(rng, h=10, w=12)
            fb = torch.from_numpy(rng.random((10, 12)).astype(np.float32))
            y, x = int(rng.integers(0, 10)), int(rng.integers(0, 12))
            label = int(rng.integers(0, 2))
            out = focused_correction(f, fb, Click(x, y, label), (y, x), 0.3)
            from clickseg.core import box_bounds

            y0, y1, x0, x1 = box_bounds(y, x, 0.3, 10, 12)
            box = torch.zeros(10, 12, dtype=torch.bool)
            box[y0:y1, x0:x1] = True
            assert torch.equal(out[~box], fb[~box])

    def test_no_click_returns_feedback_unchanged(self, rng):
        f = rand_features(rng)
        fb = torch.from_numpy(rng.random((8, 8)).astype(np.float32))
        assert torch.equal(focused_correction(f, fb, None, None, 0.3), fb)

    def test_monotone_pull_toward_label(self, rng):
        for label in (0, 1):
            f = rand_features(rng, h=8, w=8)
            fb = torch.from_numpy(rng.random((8, 8)).astype(np.float32))
            out = focused_correction(f, fb, Click(3, 3, label), (3, 3), 0.6)
            if label == 1:
                assert (out >= fb - 1e-7).all()
            else:
                assert (out <= fb + 1e-7).all()

    def test_range_preserved(self, rng):
        f = rand_features(rng, h=8, w=8)
        fb = torch.from_numpy(rng.random((8, 8)).astype(np.float32))
        out = focused_correction(f, fb, Click(2, 5, 1), (5, 2), 0.4)
        assert out.min().item() >= 0.0
        assert out.max().item() <= 1.0

    def test_crop_paste_matches_box_formulation(self, rng):
        for _ in range(20):
            h, w = int(rng.integers(5, 14)), int(rng.integers(5, 14))
            f = rand_features(rng, c=4, h=h, w=w)
            fb = torch.from_numpy(rng.random((h, w)).astype(np.float32))
            y, x = int(rng.integers(0, h)), int(rng.integers(0, w))
            label = int(rng.integers(0, 2))
            ratio = float(rng.uniform(0.2, 1.0))
            click = Click(x, y, label)
            a = focused_correction(f, fb, click, (y, x), ratio)
            b = focused_correction_cropped(f, fb, click, (y, x), ratio)
            torch.testing.assert_close(a, b, rtol=0, atol=0)


class TestCoordinateMapping:
    def test_quarter_scale_rounding(self):
        assert click_to_feature_coords(Click(8, 8, 1), 32, 32, 8, 8) == (2, 2)
        assert click_to_feature_coords(Click(0, 0, 1), 32, 32, 8, 8) == (0, 0)

    def test_edge_clamped_in_bounds(self):
        # y = 31 maps to round(31/4) = 8, clamped to the last feature row 7
        assert click_to_feature_coords(Click(31, 31, 1), 32, 32, 8, 8) == (7, 7)

import math

import numpy as np
import pytest

from ocuseg.rng import Rng
from ocuseg.synth import (Corruption, SceneParams, apply_corruption, augment,
                          augment_with_params, gamma_correct, generate_dataset,
                          motion_blur_kernel, render_eye, sample_scene_params)


def make_params(**overrides) -> SceneParams:
    base = dict(eye_center=(60.0, 80.0), eye_axes=(40.0, 34.0),
                iris_axes=(26.0, 22.0), pupil_axes=(14.0, 12.0),
                rotation=0.2, intensities=(0.55, 0.85, 0.40, 0.04),
                texture_seed=7)
    base.update(overrides)
    return SceneParams(**base)


class TestRenderEye:
    def test_deterministic(self):
        a = render_eye(make_params(), 120, 160, Rng(1))
        b = render_eye(make_params(), 120, 160, Rng(1))
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.labels, b.labels)
        assert a.gt_bbox == b.gt_bbox

    def test_degenerate_pupil_has_no_class3(self):
        s = render_eye(make_params(pupil_axes=(0.0, 0.0)), 120, 160, Rng(1))
        assert not np.any(s.labels == 3)

    def test_pupil_area_matches_ellipse(self):
        # axis-aligned so the rasterized count tracks pi*a*b
        for a, b in ((14, 12), (16, 10), (11, 11)):
            p = make_params(rotation=0.0, pupil_axes=(float(a), float(b)))
            s = render_eye(p, 120, 160, Rng(1))
            count = int((s.labels == 3).sum())
            assert abs(count - math.pi * a * b) / (math.pi * a * b) < 0.03

    def test_nesting_geometry(self):
        s = render_eye(make_params(), 120, 160, Rng(2))
        # every pupil pixel is iris-or-inner before relabeling; labels encode
        # innermost region, so 3 implies inside iris implies inside eye
        rr, cc = np.nonzero(s.labels == 3)
        p = make_params()
        co, si = math.cos(p.rotation), math.sin(p.rotation)
        dr, dc = rr + 0.5 - p.eye_center[0], cc + 0.5 - p.eye_center[1]
        u, v = co * dc + si * dr, -si * dc + co * dr
        ia, ib = p.iris_axes
        assert np.all((u / ia) ** 2 + (v / ib) ** 2 <= 1.0 + 1e-9)

    def test_ellipse_outside_frame_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            render_eye(make_params(eye_center=(10.0, 80.0)), 120, 160, Rng(1))

    def test_bbox_within_frame_and_margin(self):
        s = render_eye(make_params(), 120, 160, Rng(1))
        l, t, h, w = s.gt_bbox
        assert 0 <= l and 0 <= t and t + h <= 120 and l + w <= 160
        rows, cols = np.nonzero(s.labels > 0)
        assert rows.min() >= t and rows.max() < t + h
        assert cols.min() >= l and cols.max() < l + w

    def test_image_on_8bit_grid(self):
        s = render_eye(make_params(), 120, 160, Rng(1))
        assert np.array_equal(s.image, np.round(s.image * 255) / 255)


class TestCorruptions:
    @pytest.mark.parametrize("kind", ["blur", "occlusion", "domain_shift"])
    def test_severity_zero_is_identity(self, kind):
        s = render_eye(make_params(), 120, 160, Rng(3))
        out = apply_corruption(s, Corruption(kind, 0.0), Rng(4))
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.labels, s.labels)

    def test_unknown_kind_rejected(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        with pytest.raises(ValueError, match="unknown corruption"):
            apply_corruption(s, Corruption("fog", 0.5), Rng(4))

    def test_blur_kernel_taps_and_normalization(self):
        # severity 1 -> 15 taps; checked across angles on the kernel itself
        for angle in (0.0, 0.31, 0.79, 1.2, 1.57, 2.5):
            k = motion_blur_kernel(15, angle)
            assert np.count_nonzero(k) == 15
            assert abs(k.sum() - 1.0) < 1e-9

    def test_blur_impulse_response(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        impulse = np.zeros_like(s.image)
        impulse[60, 80] = 1.0
        sample = type(s)(image=impulse, labels=s.labels, gt_bbox=s.gt_bbox,
                         severity=0.0, domain_id="clean", sample_id="imp")
        out = apply_corruption(sample, Corruption("blur", 1.0), Rng(5))
        response = out.image  # quantized to the 8-bit grid
        assert np.count_nonzero(response) == 15
        assert abs(response.sum() - 1.0) < 15 * (0.5 / 255) + 1e-9

    def test_occlusion_full_clears_top_half_pupil(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        out = apply_corruption(s, Corruption("occlusion", 1.0), Rng(5))
        l, t, h, w = s.gt_bbox
        top = out.labels[t:t + h // 2, :]
        assert not np.any(top == 3)

    def test_occlusion_partial_keeps_lower_pupil(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        out = apply_corruption(s, Corruption("occlusion", 0.5), Rng(5))
        assert np.any(out.labels == 3)
        assert (out.labels == 3).sum() < (s.labels == 3).sum()

    def test_occlusion_relabels_to_background(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        out = apply_corruption(s, Corruption("occlusion", 0.7), Rng(5))
        changed = out.labels != s.labels
        assert np.all(out.labels[changed] == 0)

    def test_domain_shift_keeps_labels(self):
        s = render_eye(make_params(), 120, 160, Rng(3))
        out = apply_corruption(s, Corruption("domain_shift", 0.8), Rng(5))
        assert np.array_equal(out.labels, s.labels)
        assert not np.array_equal(out.image, s.image)
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0


class TestAugment:
    def test_identity_draw_is_exact(self):
        s = render_eye(make_params(), 120, 160, Rng(6))
        out = augment_with_params(s, 0.0, 0.0, 0.0, 1.0, False)
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.labels, s.labels)
        assert out.gt_bbox == s.gt_bbox

    def test_double_flip_restores_labels(self):
        s = render_eye(make_params(), 120, 160, Rng(6))
        once = augment_with_params(s, 0.0, 0.0, 0.0, 1.0, True)
        twice = augment_with_params(once, 0.0, 0.0, 0.0, 1.0, True)
        assert np.array_equal(twice.labels, s.labels)
        assert np.array_equal(twice.image, s.image)

    def test_labels_stay_in_closed_set(self):
        s = render_eye(make_params(), 120, 160, Rng(6))
        for seed in range(5):
            out = augment(s, Rng(seed))
            assert set(np.unique(out.labels)) <= {0, 1, 2, 3}
            l, t, h, w = out.gt_bbox
            assert 0 <= l and 0 <= t and t + h <= 120 and l + w <= 160


class TestGammaCorrect:
    def test_identity(self):
        img = Rng(1).uniform_array(100).reshape(10, 10)
        assert np.array_equal(gamma_correct(img, 1.0), img)

    def test_analytic_value(self):
        assert gamma_correct(np.array([0.25]), 0.5)[0] == pytest.approx(0.5)

    def test_range_closure(self):
        img = Rng(2).uniform_array(1000)
        for g in (0.3, 0.7, 1.5, 3.0):
            out = gamma_correct(img, g)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_nonpositive_gamma_rejected(self):
        with pytest.raises(ValueError, match="gamma"):
            gamma_correct(np.zeros(3), 0.0)


class TestGenerateDataset:
    def test_deterministic_and_ids(self):
        a = generate_dataset(6, seed=5, kinds=["none", "blur"], sev_range=(0.5, 1.0))
        b = generate_dataset(6, seed=5, kinds=["none", "blur"], sev_range=(0.5, 1.0))
        for x, y in zip(a, b):
            assert x.sample_id == y.sample_id
            assert np.array_equal(x.image, y.image)

    def test_kind_cycling_and_severity(self):
        ds = generate_dataset(8, seed=5, kinds=["none", "occlusion"],
                              sev_range=(0.4, 0.9))
        assert all(s.severity == 0.0 if i % 2 == 0 else 0.4 <= s.severity <= 0.9
                   for i, s in enumerate(ds))

    def test_scene_sampler_stays_in_frame(self):
        rng = Rng(77)
        for _ in range(50):
            p = sample_scene_params(120, 160, rng)
            render_eye(p, 120, 160, rng)  # must not raise

"""Masking, component analysis, corner counting and crop geometry."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scene_cluster import preprocess, synthgen
from scene_cluster.preprocess import (
    FiducialNotFoundError,
    connected_components,
    crop_local_region,
    detect_interest_points,
    expand_bbox,
    locate_fiducial,
    mask_salient,
    rgb_to_gray255,
)


def four_tone_board(cell=6, cells=6, margin=4):
    """RGB image holding the four-tone checkerboard used by the scenes."""
    side = cell * cells + 2 * margin
    img = np.full((side, side, 3), 0.35, np.float32)
    tones = [
        [(0.06, 0.06, 0.06), (0.94, 0.82, 0.16)],
        [(0.94, 0.94, 0.94), (0.78, 0.12, 0.12)],
    ]
    for i in range(cells):
        for j in range(cells):
            y0 = margin + i * cell
            x0 = margin + j * cell
            img[y0:y0 + cell, x0:x0 + cell] = tones[i % 2][j % 2]
    lo = margin
    hi = margin + cell * cells - 1
    return img, (lo, lo, hi, hi)


class TestMaskSalient:
    def test_identity_when_mask_empty(self):
        rng = np.random.default_rng(0)
        img = rng.random((8, 9, 3)).astype(np.float32)
        out = mask_salient(img, np.zeros((8, 9), np.uint8))
        np.testing.assert_array_equal(out, img)

    def test_annihilation_when_mask_full(self):
        rng = np.random.default_rng(1)
        img = rng.random((8, 9, 3)).astype(np.float32)
        out = mask_salient(img, np.ones((8, 9), np.uint8))
        assert (out == 0.0).all()

    def test_two_pixel_example(self):
        img = np.array([[[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]]], np.float32)
        mask = np.array([[1, 0]], np.uint8)
        out = mask_salient(img, mask)
        np.testing.assert_array_equal(
            out, np.array([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]], np.float32)
        )

    def test_kept_pixels_bitwise_preserved(self):
        rng = np.random.default_rng(2)
        img = rng.random((16, 16, 3)).astype(np.float32)
        mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        out = mask_salient(img, mask)
        assert (out[mask == 1] == 0.0).all()
        assert np.array_equal(out[mask == 0], img[mask == 0])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        img = rng.random((10, 10, 3)).astype(np.float32)
        mask = (rng.random((10, 10)) < 0.3).astype(np.uint8)
        once = mask_salient(img, mask)
        twice = mask_salient(once, mask)
        np.testing.assert_array_equal(once, twice)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mask_salient(np.zeros((4, 4, 3), np.float32), np.zeros((4, 5), np.uint8))


class TestConnectedComponents:
    def test_two_squares(self):
        mask = np.zeros((40, 40), np.uint8)
        mask[2:12, 2:12] = 1
        mask[20:30, 25:35] = 1
        comps = connected_components(mask, min_component_area=0)
        assert len(comps) == 2
        assert all(c.pixel_count == 100 for c in comps)
        assert comps[0].bbox == (2, 2, 11, 11)
        assert comps[1].bbox == (25, 20, 34, 29)

    def test_all_zero(self):
        assert connected_components(np.zeros((8, 8), np.uint8)) == []

    def test_min_area_drops_speckle(self):
        mask = np.zeros((10, 10), np.uint8)
        mask[5, 5] = 1
        assert connected_components(mask, min_component_area=25) == []
        assert len(connected_components(mask, min_component_area=1)) == 1

    def test_default_min_area_fraction(self):
        # 0.05% of a 200x200 image is 20 pixels
        mask = np.zeros((200, 200), np.uint8)
        mask[0, :19] = 1  # 19 px line, below threshold
        mask[100:105, 100:104] = 1  # 20 px block, at threshold
        comps = connected_components(mask)
        assert len(comps) == 1
        assert comps[0].pixel_count == 20

    def test_sorted_by_size_then_scan_order(self):
        mask = np.zeros((30, 30), np.uint8)
        mask[1:3, 1:3] = 1   # 4 px, first in scan order
        mask[1:3, 10:12] = 1  # 4 px, second
        mask[20:25, 20:25] = 1  # 25 px
        comps = connected_components(mask, min_component_area=0)
        assert [c.pixel_count for c in comps] == [25, 4, 4]
        assert comps[1].bbox[0] == 1 and comps[1].bbox[1] == 1
        assert comps[2].bbox[0] == 10
        assert [c.id for c in comps] == [0, 1, 2]

    def test_pixels_recorded_as_xy(self):
        mask = np.zeros((5, 5), np.uint8)
        mask[2, 3] = 1
        comps = connected_components(mask, min_component_area=0)
        assert comps[0].pixels.tolist() == [[3, 2]]

    @given(
        arrays(np.uint8, st.tuples(st.integers(4, 24), st.integers(4, 24)),
               elements=st.integers(0, 1))
    )
    @settings(max_examples=40, deadline=None)
    def test_conservation(self, mask):
        comps = connected_components(mask, min_component_area=0)
        assert sum(c.pixel_count for c in comps) == int(mask.sum())
        seen = set()
        for c in comps:
            for x, y in c.pixels:
                assert (y, x) not in seen
                seen.add((y, x))
                assert mask[y, x] == 1


class TestDetectInterestPoints:
    def test_uniform_region_empty(self):
        img = np.full((20, 20, 3), 0.4, np.float32)
        assert detect_interest_points(img, (0, 0, 19, 19)) == []

    def test_gradient_region_empty(self):
        ramp = np.linspace(0.0, 1.0, 30, dtype=np.float32)
        img = np.repeat(ramp[None, :, None], 30, axis=0)
        img = np.concatenate([img] * 3, axis=2)
        assert detect_interest_points(img, (0, 0, 29, 29)) == []

    def test_checkerboard_junctions_found(self):
        img, bbox = four_tone_board()
        pts = detect_interest_points(img, bbox)
        assert len(pts) >= 25
        junctions = [
            (bbox[1] + 6 * i, bbox[0] + 6 * j)
            for i in range(1, 6)
            for j in range(1, 6)
        ]
        hit = set()
        for p in pts:
            near = [
                (jy, jx)
                for jy, jx in junctions
                if max(abs(p.y - jy), abs(p.x - jx)) <= 3
            ]
            assert near, f"stray point {(p.y, p.x)}"
            hit.update(near)
        assert len(hit) == 25

    def test_points_are_relative_to_image_not_region(self):
        img, bbox = four_tone_board(margin=8)
        pts = detect_interest_points(img, bbox)
        assert all(bbox[0] <= p.x <= bbox[2] for p in pts)
        assert all(bbox[1] <= p.y <= bbox[3] for p in pts)

    def test_region_validation(self):
        img = np.zeros((10, 10, 3), np.float32)
        with pytest.raises(ValueError):
            detect_interest_points(img, (0, 0, 10, 5))
        with pytest.raises(ValueError):
            detect_interest_points(img, (-1, 0, 5, 5))
        with pytest.raises(ValueError):
            detect_interest_points(img, (5, 5, 4, 6))

    def test_gray_conversion_weights(self):
        img = np.zeros((1, 3, 3), np.float32)
        img[0, 0] = (1.0, 0.0, 0.0)
        img[0, 1] = (0.0, 1.0, 0.0)
        img[0, 2] = (0.0, 0.0, 1.0)
        gray = rgb_to_gray255(img)
        np.testing.assert_allclose(
            gray[0], [0.299 * 255, 0.587 * 255, 0.114 * 255], atol=1e-4
        )


def _flat_component(mask_shape, y0, x0, h, w, comp_id):
    mask = np.zeros(mask_shape, np.uint8)
    mask[y0:y0 + h, x0:x0 + w] = 1
    comps = connected_components(mask, min_component_area=0)
    c = comps[0]
    return preprocess.ConnectedComponent(
        id=comp_id, pixel_count=c.pixel_count, bbox=c.bbox, pixels=c.pixels
    )


class TestLocateFiducial:
    def test_picks_textured_component_over_blob(self):
        env = synthgen.EnvironmentSpec(
            "e0", "solid", (90, 120, 150), (60, 90, 120), (200, 160, 90),
            texture_seed=5,
        )
        img, mask, truth = synthgen.generate_scene(env, seed=11)
        imgf = img.astype(np.float32) / 255.0
        comps = connected_components(mask)
        assert len(comps) >= 2
        fid = locate_fiducial(imgf, comps)
        assert fid.bbox == truth.bbox
        assert fid.interest_point_count > 0

    def test_tie_on_counts_prefers_larger_component(self):
        img = np.full((40, 40, 3), 0.5, np.float32)  # featureless: all counts 0
        big = _flat_component((40, 40), 2, 2, 8, 8, comp_id=0)
        small = _flat_component((40, 40), 20, 20, 4, 4, comp_id=1)
        fid = locate_fiducial(img, [small, big])
        assert fid.component_id == 0

    def test_full_tie_prefers_smaller_id(self):
        img = np.full((40, 40, 3), 0.5, np.float32)
        a = _flat_component((40, 40), 2, 2, 5, 5, comp_id=3)
        b = _flat_component((40, 40), 20, 20, 5, 5, comp_id=1)
        fid = locate_fiducial(img, [a, b])
        assert fid.component_id == 1

    def test_no_components_raises(self):
        img = np.zeros((10, 10, 3), np.float32)
        with pytest.raises(FiducialNotFoundError):
            locate_fiducial(img, [])

    def test_deterministic(self):
        env = synthgen.EnvironmentSpec(
            "e1", "noise", (80, 80, 80), (50, 50, 50), (190, 190, 190),
            texture_seed=8,
        )
        img, mask, _ = synthgen.generate_scene(env, seed=21)
        imgf = img.astype(np.float32) / 255.0
        comps = connected_components(mask)
        first = locate_fiducial(imgf, comps)
        second = locate_fiducial(imgf, comps)
        assert first.component_id == second.component_id
        assert first.bbox == second.bbox


class TestExpandBbox:
    def test_doubling_worked_example(self):
        assert expand_bbox((10, 10, 19, 19), 2.0, 100, 100) == (5, 5, 24, 24)

    def test_identity_expansion(self):
        assert expand_bbox((3, 7, 12, 15), 1.0, 50, 50) == (3, 7, 12, 15)

    def test_corner_clipping(self):
        out = expand_bbox((0, 0, 9, 9), 3.0, 40, 40)
        assert out[0] == 0 and out[1] == 0
        assert out[2] < 40 and out[3] < 40

    def test_clip_to_image_edges(self):
        out = expand_bbox((30, 30, 39, 39), 3.0, 40, 40)
        assert out[2] == 39 and out[3] == 39

    def test_rejects_shrinking(self):
        with pytest.raises(ValueError):
            expand_bbox((0, 0, 9, 9), 0.5, 40, 40)

    def test_area_bound(self):
        for exp in (1.0, 1.5, 2.0, 3.0):
            x0, y0, x1, y1 = expand_bbox((8, 12, 19, 21), exp, 64, 64)
            area = (x1 - x0 + 1) * (y1 - y0 + 1)
            base = (19 - 8 + 1) * (21 - 12 + 1)
            assert area <= exp * exp * base * 1.2 + 4
            assert area >= 1


class TestCropLocalRegion:
    def test_crop_comes_from_masked_image(self):
        rng = np.random.default_rng(4)
        img = rng.random((30, 30, 3)).astype(np.float32)
        mask = np.zeros((30, 30), np.uint8)
        mask[10:16, 10:16] = 1
        masked = mask_salient(img, mask)
        comps = connected_components(mask, min_component_area=0)
        fid = preprocess.FiducialLocation(
            component_id=0, bbox=comps[0].bbox, interest_point_count=0
        )
        crop = crop_local_region(masked, fid, expansion=2.0)
        # the marker interior stays zeroed inside the crop
        assert (crop == 0.0).any()
        ys = slice(7, 19)
        np.testing.assert_array_equal(crop, masked[ys, ys])

    def test_expansion_one_equals_bbox(self):
        rng = np.random.default_rng(5)
        masked = rng.random((20, 20, 3)).astype(np.float32)
        fid = preprocess.FiducialLocation(0, (4, 6, 9, 13), 0)
        crop = crop_local_region(masked, fid, expansion=1.0)
        np.testing.assert_array_equal(crop, masked[6:14, 4:10])

    def test_corner_never_errors(self):
        masked = np.zeros((20, 20, 3), np.float32)
        fid = preprocess.FiducialLocation(0, (0, 0, 3, 3), 0)
        crop = crop_local_region(masked, fid, expansion=4.0)
        assert crop.shape[0] >= 1 and crop.shape[1] >= 1

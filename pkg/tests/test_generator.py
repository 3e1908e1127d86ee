"""Test cases for training-sample generation."""

import logging

import numpy as np
import pytest
from scipy import ndimage

from mini_homo.config import CorpusConfig, SamplingConfig
from mini_homo.generator import (
    EMPTY_PLANE_FLAG,
    assemble_sample,
    fusion_band,
    generate_naive,
    generate_realistic,
    generate_single_image,
    disturbance_masks,
    label_residual,
    make_disturbance,
    sample_disturbance,
)
from mini_homo.homography import compose, corner_error, identity, sample_gt
from mini_homo.imaging import fully_covered, seam_energy, warp, warp_array
from mini_homo.pipeline.corpus import synth_pair
from mini_homo.plane_seg import estimate_masks
from mini_homo.schema import ImageBuf, PerturbationRanges, PlaneMask, Strategy

FRAME = (128, 128)


def scene(seed: int, category: str = "RE", objects: tuple[int, int] = (1, 3)):
    cfg = CorpusConfig(size=128, min_objects=objects[0], max_objects=objects[1])
    pair = synth_pair(cfg, seed=seed, pair_id=f"{seed:04d}", category=category)
    m_s, m_t = estimate_masks(pair.i_s, pair.i_t, pair.h_ts)
    h_gt = sample_gt(PerturbationRanges(), 1000 + seed, FRAME)
    return pair, m_s, m_t, h_gt


def valid_region(h, shape=(128, 128)) -> np.ndarray:
    _, validity = warp_array(np.ones(shape), h)
    return fully_covered(validity)


def disturb(pair, m_s, m_t, h_gt, seed: int, ranges: PerturbationRanges | None = None):
    """Disturbance composite with masks re-estimated under the disturbed motion, as the pipeline builds it."""
    ranges = ranges or PerturbationRanges.neutral().model_copy(update={"translation": (4.0, 8.0)})
    delta = sample_disturbance(ranges, seed, FRAME)
    r_s, r_t = disturbance_masks(pair.i_s, pair.i_t, m_s, m_t, compose(delta, pair.h_ts))
    return make_disturbance(pair.i_s, pair.i_t, r_s, r_t, h_gt, pair.h_ts, seed, delta=delta)


def best_shift(image: np.ndarray, expected: np.ndarray, region: np.ndarray, radius: int = 4) -> tuple[int, int]:
    """Integer shift d minimising mean |image(p + d) - expected(p)| over region."""
    h, w = image.shape
    padded = np.pad(image, radius, mode="edge")
    best, best_err = (0, 0), np.inf
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            err = np.abs(shifted - expected)[region].mean()
            if err < best_err:
                best, best_err = (dx, dy), err
    return best


class TestGenerateRealistic:
    """Tests for the composed-homography generator."""

    def test_all_plane_masks(self):
        pair, _, _, h_gt = scene(0)
        ones = PlaneMask.ones(128, 128)
        out = generate_realistic(pair.i_s, pair.i_t, ones, ones, h_gt, pair.h_ts)
        expected, _ = warp(pair.i_s, h_gt)
        region = valid_region(h_gt)
        assert np.allclose(out.data[region], expected.data[region], atol=1e-12)

    def test_no_plane_masks(self):
        pair, _, _, h_gt = scene(1)
        zeros = PlaneMask.zeros(128, 128)
        out = generate_realistic(pair.i_s, pair.i_t, zeros, zeros, h_gt, pair.h_ts)
        h_c = compose(h_gt, pair.h_ts)
        expected, _ = warp(pair.i_t, h_c)
        region = valid_region(h_c)
        assert np.allclose(out.data[region], expected.data[region], atol=1e-12)
        # 空洞处直接取填充源
        outside = ~valid_region(h_c) & (warp_array(np.ones((128, 128)), h_c)[1] < 0.05)
        assert np.allclose(out.data[outside], expected.data[outside])

    def test_empty_plane_warning(self, caplog):
        pair, _, _, h_gt = scene(2)
        zeros = PlaneMask.zeros(128, 128)
        with caplog.at_level(logging.WARNING, logger="mini_homo.generator"):
            generate_realistic(pair.i_s, pair.i_t, zeros, zeros, h_gt, pair.h_ts)
        assert any("dominant plane" in r.message for r in caplog.records)

    @pytest.mark.slow
    def test_label_criterion(self):
        print("\n=== Testing label criterion over 200 scenes ===")
        residuals = []
        for seed in range(200):
            pair, m_s, m_t, h_gt = scene(seed, category=["RE", "LT", "LL", "SF", "LF"][seed % 5], objects=(0, 3))
            out = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
            residuals.append(label_residual(pair.i_s, out, m_s, h_gt))
        residuals = np.array(residuals)
        print(f"label residuals: max={residuals.max():.4f} mean={residuals.mean():.4f}")
        assert np.mean(residuals < 0.02) >= 0.98
        print("✅ Label criterion test passed")

    def test_realistic_object_motion(self):
        print("\n=== Testing realism criterion ===")
        checked = 0
        for seed in range(12):
            pair, m_s, m_t, h_gt = scene(seed, category="LF", objects=(1, 1))
            if not pair.objects:
                continue
            out = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
            h_c = compose(h_gt, pair.h_ts)
            expected, _ = warp(pair.i_t, h_c)
            obj = pair.objects[0]
            box = np.zeros((128, 128))
            tx, ty = obj.target_xy
            box[ty : ty + obj.size, tx : tx + obj.size] = 1.0
            moved, validity = warp_array(box, h_c)
            region = ndimage.binary_erosion(moved > 0.99, iterations=4) & fully_covered(validity)
            if region.sum() < 50:
                continue
            diff = np.abs(out.data[:, :, 0] - expected.data[:, :, 0])[region]
            assert diff.mean() < 0.02
            checked += 1
        assert checked >= 6
        print(f"✅ Realism criterion test passed on {checked} scenes")

    def test_object_displacement(self):
        print("\n=== Testing object displacement ===")
        within = 0
        checked = 0
        for seed in range(40):
            pair, m_s, m_t, h_gt = scene(seed, category="LF", objects=(1, 1))
            if not pair.objects:
                continue
            h_c = compose(h_gt, pair.h_ts)
            obj = pair.objects[0]
            box = np.zeros((128, 128))
            tx, ty = obj.target_xy
            box[ty : ty + obj.size, tx : tx + obj.size] = 1.0
            moved, validity = warp_array(box, h_c)
            region = ndimage.binary_erosion(moved > 0.99, iterations=4) & fully_covered(validity)
            if region.sum() < 50:
                continue
            out = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
            expected, _ = warp(pair.i_t, h_c)
            dx, dy = best_shift(out.data[:, :, 0], expected.data[:, :, 0], region)
            checked += 1
            within += np.hypot(dx, dy) <= 1.0
        print(f"object lands within 1 px of H_gt·H_ts on {within}/{checked} scenes")
        assert checked >= 20
        assert within / checked >= 0.95
        print("✅ Object displacement test passed")

    def test_deterministic(self):
        pair, m_s, m_t, h_gt = scene(3)
        a = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
        b = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
        assert np.array_equal(a.data, b.data)


class TestGenerateNaive:
    """Tests for the fuse-then-warp baseline."""

    def test_all_plane_masks(self):
        pair, _, _, h_gt = scene(4)
        ones = PlaneMask.ones(128, 128)
        out = generate_naive(pair.i_s, pair.i_t, ones, ones, h_gt)
        expected, _ = warp(pair.i_s, h_gt)
        assert np.allclose(out.data, expected.data, atol=1e-12)

    def test_identity_consistent_masks(self):
        pair, m_s, _, _ = scene(5)
        out = generate_naive(pair.i_s, pair.i_s, m_s, m_s, identity())
        assert np.allclose(out.data, pair.i_s.data, atol=1e-12)

    @pytest.mark.slow
    def test_seam_energy_against_realistic(self):
        print("\n=== Testing seam energy: realistic vs naive over 200 scenes ===")
        wins = 0
        total = 0
        for seed in range(200):
            pair, m_s, m_t, h_gt = scene(seed, category=["RE", "SF", "LF"][seed % 3], objects=(1, 3))
            band = fusion_band(PlaneMask(weights=warp_array(m_s.weights, h_gt)[0]))
            if band.weights.sum() == 0:
                continue
            realistic = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
            naive = generate_naive(pair.i_s, pair.i_t, m_s, m_t, h_gt)
            total += 1
            wins += seam_energy(realistic, band) <= seam_energy(naive, band)
        print(f"realistic wins {wins}/{total}")
        assert total >= 190
        assert wins / total >= 0.95
        print("✅ Seam energy comparison passed")


class TestDisturbance:
    """Tests for make_disturbance."""

    def test_identity_disturbance(self):
        pair, m_s, m_t, h_gt = scene(6)
        ranges = PerturbationRanges.neutral()
        disturbed = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 3, ranges)
        plain = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
        assert np.array_equal(disturbed.data, plain.data)

    def test_identity_disturbance_all_ones_masks(self):
        pair, _, _, h_gt = scene(12)
        ones = PlaneMask.ones(128, 128)
        ranges = PerturbationRanges.neutral()
        disturbed = make_disturbance(pair.i_s, pair.i_t, ones, ones, h_gt, pair.h_ts, 5, ranges)
        plain = generate_realistic(pair.i_s, pair.i_t, ones, ones, h_gt, pair.h_ts)
        assert np.array_equal(disturbed.data, plain.data)

    def test_identity_disturbance_hand_drawn_masks(self):
        pair, _, _, h_gt = scene(13)
        weights = np.zeros((128, 128))
        weights[:, :48] = 1.0
        weights[:, 48:80] = np.linspace(1.0, 0.0, 32)
        weights[90:110, 10:30] = 0.0
        m_s = PlaneMask(weights=weights)
        m_t = PlaneMask(weights=weights[::-1].copy())
        ranges = PerturbationRanges.neutral()
        disturbed = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 9, ranges)
        plain = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
        assert np.array_equal(disturbed.data, plain.data)

    def test_given_delta_matches_seeded(self):
        pair, m_s, m_t, h_gt = scene(14)
        ranges = PerturbationRanges.neutral().model_copy(update={"translation": (4.0, 8.0)})
        delta = sample_disturbance(ranges, 21, FRAME)
        a = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 21, ranges)
        b = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 0, delta=delta)
        assert np.array_equal(a.data, b.data)

    def test_min_shift(self):
        ranges = SamplingConfig().disturbance
        for seed in range(30):
            delta = sample_disturbance(ranges, seed, FRAME, min_shift=2.0)
            assert corner_error(delta, identity(), FRAME) >= 2.0

    def test_masks_shrink_under_disturbance(self):
        pair, m_s, m_t, h_gt = scene(15, objects=(0, 0))
        ranges = PerturbationRanges.neutral().model_copy(update={"translation": (6.0, 8.0)})
        shifted = compose(sample_disturbance(ranges, 2, FRAME), pair.h_ts)
        r_s, r_t = disturbance_masks(pair.i_s, pair.i_t, m_s, m_t, shifted)
        assert np.all(r_s.weights <= m_s.weights)
        assert np.all(r_t.weights <= m_t.weights)
        assert r_s.weights.mean() < m_s.weights.mean()

    def test_deterministic(self):
        pair, m_s, m_t, h_gt = scene(7)
        a = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 11)
        b = make_disturbance(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, 11)
        assert np.array_equal(a.data, b.data)

    def test_disturbance_breaks_alignment(self):
        worse = 0
        for seed in range(8):
            pair, m_s, m_t, h_gt = scene(seed, objects=(0, 0))
            disturbed = disturb(pair, m_s, m_t, h_gt, seed)
            plain = generate_realistic(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts)
            h_c = compose(h_gt, pair.h_ts)
            reference, _ = warp(pair.i_t, h_c)
            region = valid_region(h_c)
            residual_disturbed = np.abs(disturbed.data - reference.data)[region].mean()
            residual_plain = np.abs(plain.data - reference.data)[region].mean()
            worse += residual_disturbed > residual_plain
        assert worse == 8


class TestHelpers:
    """Tests for fusion_band, single-image strategy and sample assembly."""

    def test_fusion_band(self):
        weights = np.zeros((20, 20))
        weights[:, 10:] = 1.0
        band = fusion_band(PlaneMask(weights=weights), radius=2).weights
        assert band[5, 8:12].min() == 1.0
        assert band[5, :7].max() == 0.0
        assert band[5, 13:].max() == 0.0

    def test_fusion_band_uniform_mask(self):
        assert fusion_band(PlaneMask.ones(10, 10)).weights.sum() == 0.0

    def test_single_image(self):
        pair, _, _, h_gt = scene(8)
        out = generate_single_image(pair.i_s, h_gt)
        expected, _ = warp(pair.i_s, h_gt)
        assert np.array_equal(out.data, expected.data)

    def test_assemble_sample(self):
        pair, m_s, m_t, h_gt = scene(9)
        sample = assemble_sample(pair.i_s, pair.i_t, m_s, m_t, h_gt, pair.h_ts, "0009", 1, 42)
        assert sample.provenance.pair_id == "0009"
        assert sample.provenance.iteration == 1
        assert sample.provenance.strategy == "realistic"
        assert sample.i_t_prime.shape == pair.i_s.shape

    def test_assemble_flags_empty_plane(self):
        pair, _, _, h_gt = scene(10)
        zeros = PlaneMask.zeros(128, 128)
        sample = assemble_sample(pair.i_s, pair.i_t, zeros, zeros, h_gt, pair.h_ts, "x", 0, 1, Strategy.NAIVE)
        assert EMPTY_PLANE_FLAG in sample.provenance.flags

    def test_mismatched_dims(self):
        a = ImageBuf(data=np.zeros((8, 8)))
        b = ImageBuf(data=np.zeros((8, 9)))
        with pytest.raises(ValueError):
            generate_naive(a, b, PlaneMask.ones(8, 8), PlaneMask.ones(8, 9), identity())

"""Test cases for LK alignment, the corner-offset regressor and the training losses."""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from mini_homo.config import LKConfig, RegressorConfig
from mini_homo.exceptions import AlignmentError, EmptyDatasetError, NonFiniteLossError, SingularHessianError
from mini_homo.generator import generate_single_image
from mini_homo.homography import (
    corner_error,
    homography_to_offsets,
    identity,
    invert,
    translation,
)
from mini_homo.estimator import (
    CompositeEstimator,
    Estimator,
    IdentityEstimator,
    backward_target,
    init_regressor,
    lk_align,
    load_regressor,
    photometric_residual,
    loss_and_grads,
    offsets_l1,
    predict_homography,
    regressor_forward,
    save_regressor,
    solve_step,
    sup_loss,
    total_loss,
    train_regressor,
)
from mini_homo.schema import CornerOffsets, ImageBuf, Provenance, RegressorHyperParams, TrainingSample

FRAME = (128, 128)


def smooth_texture(seed: int, shape: tuple[int, int], sigma: float = 3.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.random(shape), sigma=sigma)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 0.1 + 0.8 * tex


def shifted_pair(seed: int, dx: int, dy: int, size: int = 128) -> tuple[ImageBuf, ImageBuf]:
    """I_t(p) = I_s(p - (dx, dy)), both cut from one larger texture."""
    big = smooth_texture(seed, (size + 40, size + 40))
    x0, y0 = 20, 20
    i_s = big[y0 : y0 + size, x0 : x0 + size]
    i_t = big[y0 - dy : y0 - dy + size, x0 - dx : x0 - dx + size]
    return ImageBuf(data=i_s), ImageBuf(data=i_t)


def small_sample(seed: int, shift: tuple[float, float] = (2.0, 1.0), size: int = 32) -> TrainingSample:
    i_s = ImageBuf(data=smooth_texture(seed, (size, size), sigma=2.0))
    h_gt = translation(*shift)
    provenance = Provenance(pair_id=f"{seed:04d}", iteration=0, seed=seed, h_ts=identity())
    return TrainingSample(i_s=i_s, i_t_prime=generate_single_image(i_s, h_gt), h_gt=h_gt, provenance=provenance)


def unrelated_sample(seed: int, size: int = 32) -> TrainingSample:
    """I'_t drawn from an independent texture so the forward and backward inputs differ clearly."""
    i_s = ImageBuf(data=smooth_texture(seed, (size, size), sigma=2.0))
    i_t = ImageBuf(data=smooth_texture(seed + 100, (size, size), sigma=2.0))
    provenance = Provenance(pair_id=f"{seed:04d}", iteration=0, seed=seed, h_ts=identity())
    return TrainingSample(i_s=i_s, i_t_prime=i_t, h_gt=translation(2.0, 1.0), provenance=provenance)


def small_model(seed: int = 0, side: int = 8, hidden: list[int] | None = None, frame=(32, 32)):
    cfg = RegressorConfig(input_side=side, hidden=hidden or [16], seed=seed)
    return init_regressor(cfg, frame=frame)


class TestLKAlign:
    """Tests for inverse-compositional Lucas-Kanade."""

    def test_identity_pair(self):
        i_s, _ = shifted_pair(0, 0, 0)
        result = lk_align(i_s, i_s)
        assert result.converged
        assert corner_error(result.homography, identity(), FRAME) < 1e-6
        assert result.final_error < 1e-9

    def test_recovers_translation(self):
        print("\n=== Testing LK translation recovery ===")
        for seed in range(3):
            i_s, i_t = shifted_pair(seed, 4, 2)
            result = lk_align(i_s, i_t)
            err = corner_error(result.homography, translation(-4, -2), FRAME)
            print(f"seed {seed}: corner error {err:.4f}, iterations {result.iterations}, flags {result.flags}")
            assert err < 0.25
        print("✅ LK translation recovery passed")

    def test_warped_target_matches_source(self):
        i_s, i_t = shifted_pair(7, -3, 5)
        result = lk_align(i_s, i_t)
        assert result.final_error < 0.01

    def test_constant_images_flag_zero_gradient(self):
        flat = ImageBuf(data=np.full((64, 64), 0.5))
        result = lk_align(flat, flat)
        assert not result.converged
        assert "zero_gradient" in result.flags
        assert corner_error(result.homography, identity(), (64, 64)) < 1e-9

    def test_never_worse_than_init(self):
        i_s, i_t = shifted_pair(3, 4, 2)
        for init in [translation(-3, -1), translation(10, -12)]:
            before = photometric_residual(i_s.gray(), i_t.gray(), init)
            result = lk_align(i_s, i_t, LKConfig(max_iterations=2), init=init)
            assert result.final_error <= before

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            lk_align(ImageBuf(data=np.zeros((32, 32))), ImageBuf(data=np.zeros((32, 48))))

    def test_one_directional_texture_flags_singular_hessian(self):
        _, x = np.mgrid[0:64, 0:64].astype(np.float64)
        stripes = ImageBuf(data=0.5 + 0.3 * np.sin(x / 5.0))
        result = lk_align(stripes, stripes, LKConfig(damping=0.0))
        assert not result.converged
        assert "singular_hessian" in result.flags
        assert corner_error(result.homography, identity(), (64, 64)) < 1e-9


class TestSolveStep:
    """Tests for the damped Gauss-Newton step."""

    def test_well_conditioned(self):
        hessian = np.diag(np.arange(1.0, 9.0))
        rhs = np.ones(8)
        dp, damped = solve_step(hessian, rhs, damping=1e-3)
        assert not damped
        assert np.allclose(dp, 1.0 / np.arange(1.0, 9.0))

    def test_rank_deficient_is_damped(self):
        hessian = np.diag([1.0] * 7 + [0.0])
        dp, damped = solve_step(hessian, np.ones(8), damping=1e-3)
        assert damped
        assert np.all(np.isfinite(dp))

    def test_singular_without_damping(self):
        hessian = np.diag([1.0] * 7 + [0.0])
        with pytest.raises(SingularHessianError):
            solve_step(hessian, np.ones(8), damping=0.0)
        with pytest.raises(AlignmentError):
            solve_step(hessian, np.ones(8), damping=0.0)


class TestRegressor:
    """Tests for the corner-offset regressor."""

    def test_untrained_predicts_identity(self):
        model = init_regressor(RegressorConfig(), frame=FRAME)
        i_s, i_t = shifted_pair(0, 4, 2)
        offsets = regressor_forward(model, i_s, i_t)
        assert np.all(offsets.d == 0.0)
        assert corner_error(predict_homography(model, i_s, i_t), identity(), FRAME) < 1e-12

    def test_gradient_matches_finite_difference(self):
        print("\n=== Testing regressor gradients ===")
        model = small_model(side=4, hidden=[6], frame=(16, 16))
        rng = np.random.default_rng(1)
        for i in range(len(model.weights)):
            model.weights[i] = rng.normal(0.0, 0.5, size=model.weights[i].shape)
            model.biases[i] = rng.normal(0.0, 0.1, size=model.biases[i].shape)
        x = rng.normal(0.0, 1.0, size=(4, 32))
        y = rng.normal(0.0, 5.0, size=(4, 8))
        wd = 0.01

        _, grad_w, grad_b = loss_and_grads(model, x, y, wd)
        step = 1e-6
        worst = 0.0
        for i, w in enumerate(model.weights):
            for idx in [(0, 0), (w.shape[0] - 1, w.shape[1] - 1), (w.shape[0] // 2, w.shape[1] // 2)]:
                original = w[idx]
                w[idx] = original + step
                up, _, _ = loss_and_grads(model, x, y, wd)
                w[idx] = original - step
                down, _, _ = loss_and_grads(model, x, y, wd)
                w[idx] = original
                numeric = (up - down) / (2 * step)
                worst = max(worst, abs(numeric - grad_w[i][idx]) / max(abs(numeric), 1e-3))
            b = model.biases[i]
            original = b[0]
            b[0] = original + step
            up, _, _ = loss_and_grads(model, x, y, wd)
            b[0] = original - step
            down, _, _ = loss_and_grads(model, x, y, wd)
            b[0] = original
            numeric = (up - down) / (2 * step)
            worst = max(worst, abs(numeric - grad_b[i][0]) / max(abs(numeric), 1e-3))
        print(f"worst relative gradient error: {worst:.2e}")
        assert worst < 1e-4
        print("✅ Regressor gradient check passed")

    def test_memorizes_single_sample(self):
        print("\n=== Testing regressor memorization ===")
        model = small_model()
        hp = RegressorHyperParams(lr=0.02, epochs=600, batch_size=1, seed=0)
        trained, losses = train_regressor(model, [unrelated_sample(0)], hp)
        print(f"L_sup: {losses[0]:.4f} -> {losses[-1]:.4f}")
        assert len(losses) == hp.epochs + 1
        assert losses[0] == pytest.approx(6.0, rel=1e-3)
        assert losses[-1] < 0.2 * losses[0]
        print("✅ Regressor memorization passed")

    def test_zero_learning_rate_keeps_weights(self):
        model = small_model()
        samples = [small_sample(s) for s in range(3)]
        trained, losses = train_regressor(model, samples, RegressorHyperParams(lr=0.0, epochs=2))
        for before, after in zip(model.weights, trained.weights):
            assert np.array_equal(before, after)
        assert losses[0] == losses[-1]

    def test_training_does_not_mutate_input(self):
        model = small_model()
        snapshot = [w.copy() for w in model.weights]
        train_regressor(model, [small_sample(0)], RegressorHyperParams(lr=0.01, epochs=3, batch_size=1))
        for before, after in zip(snapshot, model.weights):
            assert np.array_equal(before, after)

    def test_deterministic(self):
        samples = [small_sample(s) for s in range(4)]
        hp = RegressorHyperParams(lr=0.01, epochs=5, batch_size=2, seed=3)
        a, losses_a = train_regressor(small_model(), samples, hp)
        b, losses_b = train_regressor(small_model(), samples, hp)
        assert losses_a == losses_b
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_exploding_learning_rate(self):
        hp = RegressorHyperParams(lr=1e300, epochs=5, batch_size=1)
        with pytest.raises(NonFiniteLossError):
            train_regressor(small_model(), [small_sample(0)], hp)

    def test_empty_samples(self):
        with pytest.raises(EmptyDatasetError):
            train_regressor(small_model(), [])

    def test_save_load(self):
        model = small_model(seed=5)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_regressor(model, Path(tmpdir) / "model.json")
            loaded = load_regressor(path)
        assert loaded.layer_sizes == model.layer_sizes
        assert loaded.frame == model.frame
        for wa, wb in zip(model.weights, loaded.weights):
            assert np.array_equal(wa, wb)

    def test_load_missing(self):
        with pytest.raises(FileNotFoundError):
            load_regressor("/nonexistent/model.json")


class TestLosses:
    """Tests for the supervised and total losses."""

    def test_one_pixel_on_every_corner(self):
        zeros = CornerOffsets(d=np.zeros(8), width=128, height=128)
        shifted = CornerOffsets(d=[1, 0, 1, 0, 1, 0, 1, 0], width=128, height=128)
        assert sup_loss(shifted, zeros, zeros) == pytest.approx(1.0)
        assert offsets_l1(shifted.d, zeros.d) == pytest.approx(1.0)

    def test_exact_predictions_give_zero(self):
        h_gt = translation(3, -2)
        d_gt = homography_to_offsets(h_gt, FRAME)
        d_bwd = homography_to_offsets(invert(h_gt), FRAME)
        assert sup_loss(d_gt, d_bwd, d_gt) == pytest.approx(0.0, abs=1e-9)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(0)
        d_gt = homography_to_offsets(translation(4, 1), FRAME)
        fwd = CornerOffsets(d=rng.normal(0, 3, 8), width=128, height=128)
        bwd = CornerOffsets(d=rng.normal(0, 3, 8), width=128, height=128)
        swapped = sup_loss(bwd, fwd, backward_target(d_gt))
        assert swapped == pytest.approx(sup_loss(fwd, bwd, d_gt), abs=1e-6)

    def test_frame_mismatch(self):
        a = CornerOffsets(d=np.zeros(8), width=128, height=128)
        b = CornerOffsets(d=np.zeros(8), width=64, height=64)
        with pytest.raises(ValueError):
            sup_loss(a, a, b)

    def test_total_loss_weights(self):
        assert total_loss(1.0, 2.0, 3.0) == pytest.approx(2.3)
        assert total_loss(1.0, 2.0, 3.0, lambda1=0.0, lambda2=0.0) == 1.0


class TestEstimatorWrapper:
    """Tests for the unified estimator front."""

    def test_identity_kind(self):
        i_s, i_t = shifted_pair(0, 4, 2)
        est = Estimator("identity")
        assert est.name == "identity"
        assert corner_error(est.estimate(i_s, i_t), identity(), FRAME) == 0.0
        assert isinstance(est._impl, IdentityEstimator)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Estimator("ransac")

    def test_model_required(self):
        with pytest.raises(ValueError):
            Estimator("composite")
        with pytest.raises(ValueError):
            Estimator("regressor")

    def test_iteration_selection(self):
        model = init_regressor(RegressorConfig(), frame=FRAME)
        assert Estimator.for_iteration(0, model).name == "lk"
        assert Estimator.for_iteration(1, None).name == "lk"
        assert Estimator.for_iteration(1, model).name == "composite"

    def test_st_is_inverse_of_ts(self):
        i_s, i_t = shifted_pair(2, 4, 2)
        est = Estimator("lk")
        h_ts = est.estimate_ts(i_s, i_t)
        h_st = est.estimate_st(i_s, i_t)
        assert np.allclose(h_st.m @ h_ts.m / (h_st.m @ h_ts.m)[2, 2], np.eye(3), atol=1e-9)

    def test_composite_not_worse_than_identity_lk(self):
        model = init_regressor(RegressorConfig(), frame=FRAME)
        i_s, i_t = shifted_pair(4, 4, 2)
        composite = CompositeEstimator(model).align(i_s, i_t)
        plain = lk_align(i_s, i_t)
        assert composite.final_error <= plain.final_error + 1e-12

    def test_from_name(self):
        model = init_regressor(RegressorConfig(), frame=FRAME)
        assert Estimator.from_name("identity").name == "identity"
        assert Estimator.from_name("lk").name == "lk"
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_regressor(model, Path(tmpdir) / "model.json")
            assert Estimator.from_name(str(path)).name == "composite"
            assert Estimator.from_name(str(path), kind="regressor").name == "regressor"

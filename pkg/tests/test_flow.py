'''
Tests for the conditional path, target field and training objectives.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import numpy as np
import pytest
import torch

import maskflow.core.config as mfcf
import maskflow.flows.flow as mff


def _pair(shape=(5, 4), seed=0, dtype=torch.float64):
    g = mff.make_generator(seed)
    return (
        torch.randn(shape, generator=g, dtype=dtype),
        torch.randn(shape, generator=g, dtype=dtype))


class TestPath:
    def test_starts_at_prior(self):
        x0, x1 = _pair()
        assert torch.equal(mff.path_point(x0, x1, 0.0), x0)

    def test_ends_near_data(self):
        x0, x1 = _pair()
        cfg = mff.FlowPathConfig()
        x_t = mff.path_point(x0, x1, 1.0, cfg)
        assert torch.allclose(x_t, x1 + cfg.sigma_min * x0, atol=1e-12)

    def test_scalar_case(self):
        cfg = mff.FlowPathConfig(sigma_min=0.0)
        x_t = mff.path_point(
            torch.tensor([2.0]), torch.tensor([4.0]), 0.5, cfg)
        assert float(x_t) == 3.0

    def test_affine_in_endpoints(self):
        x0, x1 = _pair()
        a = mff.path_point(3.0 * x0, 3.0 * x1, 0.3)
        b = 3.0 * mff.path_point(x0, x1, 0.3)
        assert torch.allclose(a, b, atol=1e-12)

    def test_batched_time(self):
        x0, x1 = _pair(shape=(3, 5, 4))
        t = torch.tensor([0.0, 0.5, 1.0], dtype=torch.float64)
        x_t = mff.path_point(x0, x1, t)
        for b in range(3):
            assert torch.allclose(
                x_t[b], mff.path_point(x0[b], x1[b], float(t[b])))

    def test_time_out_of_range(self):
        x0, x1 = _pair()
        with pytest.raises(mff.FlowError, match=r"\[0, 1\]"):
            mff.path_point(x0, x1, 1.5)
        with pytest.raises(mff.FlowError, match=r"\[0, 1\]"):
            mff.path_point(x0, x1, torch.tensor(-0.1))

    def test_shape_mismatch(self):
        with pytest.raises(mff.FlowError, match="Shape mismatch"):
            mff.path_point(torch.zeros(2, 3), torch.zeros(3, 3), 0.5)

    def test_sigma_range(self):
        with pytest.raises(mfcf.ConfigError, match="sigma_min"):
            mff.FlowPathConfig(sigma_min=1.0)


class TestTargetField:
    def test_zero_prior(self):
        _, x1 = _pair()
        assert torch.equal(mff.target_field(torch.zeros_like(x1), x1), x1)

    def test_stationary_point(self):
        c = torch.full((4, 3), 2.5)
        cfg = mff.FlowPathConfig(sigma_min=0.0)
        assert torch.count_nonzero(mff.target_field(c, c, cfg)) == 0

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        h = 1e-4
        for seed in range(100):
            x0, x1 = _pair(shape=(3, 2), seed=seed)
            t = float(rng.uniform(h, 1.0 - h))
            fd = (mff.path_point(x0, x1, t + h)
                  - mff.path_point(x0, x1, t - h)) / (2 * h)
            assert torch.allclose(
                fd, mff.target_field(x0, x1), atol=1e-6, rtol=0)

    def test_draw_is_consistent(self):
        x1 = torch.randn(2, 6, 4, generator=mff.make_generator(1))
        sample = mff.FlowSample.draw(x1, generator=mff.make_generator(2))
        assert sample.t.shape == (2,)
        assert torch.allclose(
            sample.u_target, mff.target_field(sample.x0, x1))
        assert torch.allclose(
            sample.x_t, mff.path_point(sample.x0, x1, sample.t))


class TestLosses:
    def test_zero_when_equal(self):
        _, u = _pair()
        mask = torch.tensor([True, False, True, False, False])
        assert float(mff.cfm_pretrain_loss(u, u, mask)) == 0.0

    def test_constant_offset(self):
        _, u = _pair()
        mask = np.array([False, True, True, False, True])
        assert float(mff.cfm_pretrain_loss(u + 1.0, u, mask)) == (
            pytest.approx(1.0))

    def test_matches_explicit_loop(self):
        pred, u = _pair()
        mask = [True, False, True, True, False]
        total = 0.0
        count = 0
        for i, m in enumerate(mask):
            if m:
                for j in range(u.shape[1]):
                    total += float(pred[i, j] - u[i, j]) ** 2
                    count += 1

        loss = mff.cfm_pretrain_loss(pred, u, torch.tensor(mask))
        assert float(loss) == pytest.approx(total / count)

    def test_all_true_region_is_plain_mse(self):
        pred, u = _pair()
        region = torch.ones(5, dtype=torch.bool)
        assert float(mff.cfm_finetune_loss(pred, u, region)) == (
            pytest.approx(float(((pred - u) ** 2).mean())))

    def test_region_equal_to_mask_matches_pretrain_loss(self):
        pred, u = _pair()
        mask = torch.tensor([False, True, True, False, True])
        assert float(mff.cfm_finetune_loss(pred, u, mask)) == float(
            mff.cfm_pretrain_loss(pred, u, mask))

    def test_two_frame_toy_case(self):
        pred = torch.tensor([[1.0, 2.0], [0.0, 0.0]])
        u = torch.tensor([[0.0, 0.0], [1.0, 3.0]])
        loss = mff.cfm_finetune_loss(pred, u, torch.tensor([True, True]))
        assert float(loss) == pytest.approx((1 + 4 + 1 + 9) / 4.0)

    def test_padding_is_ignored(self):
        pred, u = _pair(shape=(2, 5, 4))
        region = torch.ones(2, 5, dtype=torch.bool)
        valid = torch.tensor([[True] * 5, [True] * 3 + [False] * 2])
        padded = pred.clone()
        padded[1, 3:] = 1e3
        a = mff.cfm_finetune_loss(pred, u, region & valid)
        b = mff.cfm_finetune_loss(padded, u, region, valid=valid)
        assert float(a) == pytest.approx(float(b))

    def test_empty_selection_rejected(self):
        pred, u = _pair()
        with pytest.raises(mff.FlowError, match="no frames"):
            mff.cfm_pretrain_loss(pred, u, torch.zeros(5, dtype=torch.bool))

    def test_region_length_mismatch_rejected(self):
        pred, u = _pair()
        with pytest.raises(mff.FlowError, match="frames"):
            mff.cfm_finetune_loss(pred, u, torch.ones(4, dtype=torch.bool))


class TestPrior:
    def test_reproducible(self):
        a = mff.sample_prior((10, 8), mff.make_generator(3))
        b = mff.sample_prior((10, 8), mff.make_generator(3))
        assert torch.equal(a, b)

    def test_moments(self):
        x = mff.sample_prior((1000, 1000), mff.make_generator(0))
        assert abs(float(x.mean())) < 0.01
        assert abs(float(x.var()) - 1.0) < 0.02

    def test_seeds_differ(self):
        a = mff.sample_prior((100, 100), mff.make_generator(0))
        b = mff.sample_prior((100, 100), mff.make_generator(1))
        assert float((a != b).float().mean()) >= 0.99

    def test_time_is_uniform(self):
        t = mff.sample_time((10000,), mff.make_generator(0))
        assert float(t.min()) >= 0.0 and float(t.max()) < 1.0
        assert float(t.mean()) == pytest.approx(0.5, abs=0.01)

import numpy as np
import pytest

from tenerv import tensor as tt
from tenerv.codec.bitstream import RAW_BITS, deserialize, serialize
from tenerv.gop import GopPartition, uniform_partition
from tenerv.model import ModelConfig, TeNeRV, TeNeRVBlock, block_forward, count_parameters, match_budget
from tenerv.tensor import Tensor, UsageError

from conftest import rel_error


def small_config(**kw):
    base = dict(frames=4, height=16, width=16, channels=(6, 6, 4), factors=(2, 2), window=3, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def perturbed(model, seed=0, scale=0.1):
    """Randomize every parameter so no gradient path is trivially zero."""
    rng = np.random.default_rng(seed)
    for name, t in model.named_parameters().items():
        model.set_parameter(name, t.data + rng.normal(0, scale, t.shape))
    return model


def model_gradient_errors(model, ts, h=1e-6):
    w = np.random.default_rng(7).uniform(-1, 1, model.forward(ts).shape)
    for p in model.named_parameters().values():
        p.grad = None
    (model.forward(ts) * Tensor(w)).sum().backward()
    errs = {}
    with tt.no_grad():
        for name, p in model.named_parameters().items():
            if not p.requires_grad:
                continue
            num = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = np.sum(w * model.forward(ts).data)
                flat[i] = old - h
                fm = np.sum(w * model.forward(ts).data)
                flat[i] = old
                num.reshape(-1)[i] = (fp - fm) / (2 * h)
            errs[name] = rel_error(p.grad, num)
    return errs


class TestGradients:
    def test_full_model_pretraining(self):
        m = perturbed(TeNeRV(small_config(), seed=1))
        errs = model_gradient_errors(m, [0, 2, 3])
        assert max(errs.values()) <= 1e-3, errs

    def test_full_model_adaptive(self):
        m = TeNeRV(small_config(), seed=2)
        m.activate_gam(GopPartition((2,), 4))
        perturbed(m, seed=3)
        errs = model_gradient_errors(m, [0, 1, 2, 3])
        assert "gop_grids" in errs
        assert max(errs.values()) <= 1e-3, errs


class TestShapes:
    def test_output_shape(self):
        m = TeNeRV(small_config())
        assert m.model_forward(1).shape == (3, 16, 16)
        assert m.forward([0, 1, 3]).shape == (3, 3, 16, 16)

    def test_block_upsamples(self, rng):
        b = TeNeRVBlock.create(4, 5, 3, 3, rng, np.float64)
        assert block_forward(b, Tensor(rng.normal(size=(2, 4, 3, 4))), 0).shape == (2, 5, 9, 12)

    def test_frame_index_checked(self):
        with pytest.raises(IndexError):
            TeNeRV(small_config()).model_forward(4)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            small_config(height=18)
        with pytest.raises(ValueError, match="odd"):
            small_config(kernel_size=4)

    def test_render_clamped(self):
        m = perturbed(TeNeRV(small_config()), scale=2.0)
        frames = m.render(batch=3)
        assert frames.shape == (4, 3, 16, 16)
        assert frames.min() >= 0.0 and frames.max() <= 1.0


class TestBlock:
    def test_identity_kernels(self, rng):
        C, k = 3, 3
        eye_dw = np.zeros((1, C, k, k))
        eye_dw[:, :, 1, 1] = 1.0
        z = lambda *s: Tensor(np.zeros(s))  # noqa: E731
        b = TeNeRVBlock(1, Tensor(np.eye(C)), z(C), Tensor(eye_dw), z(1, C), Tensor(np.eye(C)), z(C))
        x = rng.normal(size=(2, C, 5, 5))
        out = block_forward(b, Tensor(x), 0).data
        np.testing.assert_allclose(out, tt.gelu(tt.gelu(Tensor(x))).data, rtol=0, atol=1e-15)

    def test_duplicated_slices_agree(self, rng):
        b = TeNeRVBlock.create(4, 4, 2, 3, rng, np.float32)
        b.depthwise_kernels = Tensor(np.repeat(b.depthwise_kernels.data, 2, axis=0))
        b.depthwise_bias = Tensor(np.repeat(b.depthwise_bias.data, 2, axis=0))
        x = Tensor(rng.normal(size=(1, 4, 3, 3)).astype(np.float32))
        assert np.array_equal(block_forward(b, x, 0).data, block_forward(b, x, 1).data)

    def test_slice_out_of_range(self, rng):
        b = TeNeRVBlock.create(4, 4, 2, 3, rng, np.float32)
        with pytest.raises(IndexError):
            block_forward(b, Tensor(np.zeros((1, 4, 2, 2), np.float32)), 1)


def pretrained_toy(seed=5, **kw):
    cfg = ModelConfig(frames=8, height=16, width=16, channels=(8, 8, 4), factors=(2, 2), **kw)
    return perturbed(TeNeRV(cfg, seed=seed), seed=seed, scale=0.05)


class TestActivation:
    @pytest.mark.parametrize("kw", [{}, {"shared_depthwise": True}, {"gop_grids": False}, {"window": 1}])
    def test_function_preserving(self, kw):
        m = pretrained_toy(**kw)
        before = [m.model_forward(t).data.copy() for t in range(8)]
        m.activate_gam(GopPartition((3, 5), 8))
        for t in range(8):
            assert np.array_equal(m.model_forward(t).data, before[t])

    def test_slices_duplicated(self):
        m = pretrained_toy()
        m.activate_gam(uniform_partition(8, 3))
        for b in m.blocks:
            assert b.slices == 3
            assert all(np.array_equal(b.depthwise_kernels.data[0], s) for s in b.depthwise_kernels.data)
        assert not m.grids.gop.grids.data.any()

    def test_double_activation(self):
        m = pretrained_toy()
        m.activate_gam(uniform_partition(8, 2))
        with pytest.raises(UsageError):
            m.activate_gam(uniform_partition(8, 2))

    def test_single_gop(self):
        m = pretrained_toy(gop_grids=False)
        before = m.param_report()
        m.activate_gam(GopPartition((), 8))
        assert m.gam_active and m.param_report() == before

    def test_pretraining_ignores_gop_index(self):
        m = pretrained_toy()
        assert (m.gop_indices([0, 5, 7]) == 0).all()


class TestIsolation:
    def test_depthwise_slice_affects_only_its_gop(self):
        m = pretrained_toy()
        p = GopPartition((3, 5), 8)
        m.activate_gam(p)
        before = m.render()
        m.blocks[1].depthwise_kernels.data[1] += 0.5
        after = m.render()
        for t in range(8):
            changed = not np.array_equal(before[t], after[t])
            assert changed == (p.gop_of(t) == 1), t

    def test_gop_grid_affects_only_its_gop(self):
        m = pretrained_toy()
        p = GopPartition((3, 5), 8)
        m.activate_gam(p)
        before = m.render()
        m.grids.gop.grids.data[2] += 0.5
        after = m.render()
        for t in range(8):
            assert (not np.array_equal(before[t], after[t])) == (p.gop_of(t) == 2)

    def test_pointwise_affects_all(self):
        m = pretrained_toy()
        m.activate_gam(GopPartition((3, 5), 8))
        before = m.render()
        m.blocks[0].project_weight.data += 0.3
        after = m.render()
        assert all(not np.array_equal(before[t], after[t]) for t in range(8))


class TestParameterCounts:
    def test_pointwise_count(self, rng):
        b = TeNeRVBlock.create(4, 8, 1, 3, rng, np.float32)
        assert b.project_weight.size + b.project_bias.size == 72
        assert b.expand_weight.size + b.expand_bias.size == 40

    def test_total_is_sum(self):
        r = pretrained_toy().param_report()
        assert r["total"] == sum(v for k, v in r.items() if k != "total")

    @pytest.mark.parametrize("K", [2, 3])
    def test_activation_multiplies_depthwise(self, K):
        m = pretrained_toy()
        before = m.param_report()
        m.activate_gam(uniform_partition(8, K))
        after = m.param_report()
        assert after["depthwise"] == K * before["depthwise"]
        assert after["pointwise"] == before["pointwise"]
        assert after["gop_grids"] == K * 8 * 4 * 4

    def test_matches_serialized_elements(self):
        m = pretrained_toy()
        m.activate_gam(uniform_partition(8, 2))
        decoded = deserialize(serialize(m, RAW_BITS))
        assert sum(t.size for t in decoded.named_parameters().values()) == m.num_parameters()

    def test_count_parameters(self):
        cfg = pretrained_toy().config
        m = TeNeRV(cfg)
        m.activate_gam(uniform_partition(8, 3))
        assert count_parameters(cfg, 3) == m.num_parameters()

    def test_default_size(self):
        cfg = ModelConfig(frames=24, height=96, width=96)
        assert TeNeRV(cfg).num_parameters() == 60075
        assert count_parameters(cfg, 3) == 65211

    def test_match_budget(self):
        cfg = ModelConfig(frames=24, height=96, width=96, shared_depthwise=True)
        target = count_parameters(ModelConfig(frames=24, height=96, width=96), 3)
        matched = match_budget(cfg, target, 3)
        assert abs(count_parameters(matched, 3) - target) / target < 0.02

    def test_frozen_window_not_trainable(self):
        m = pretrained_toy(window=1, freeze_window=True)
        assert all(t is not m.grids.window.weights for t in m.trainable_parameters())

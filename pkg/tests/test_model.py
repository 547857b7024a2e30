"""Layer library and model topologies: gradients, parameter accounting,
checkpoint round-trips."""

import numpy as np
import pytest

from varispace.corpus import ParameterError
from varispace.model import Model, ModelConfig, build_model, \
    load_checkpoint, model_from_checkpoint, save_checkpoint
from varispace.nn import AddChannel, Conv2d, GlobalAvgPool, L2Normalize, \
    Linear, ReLU, Sequential, Standardize
from varispace.objective import LossConfig

from gradcheck import max_relative_gradient_error, random_masks, \
    tiny_model_config, total_loss


def layer_fd_check(layer, x, eps=1e-6):
    """Central finite differences of dot(dy, forward(x)) against backward
    with a fixed random cotangent dy."""
    y = layer.forward(x.copy(), train=False)
    dy = np.random.default_rng(99).normal(size=y.shape)
    dx = layer.backward(dy)
    worst = 0.0
    flat = x.reshape(-1)
    dflat = dx.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = float((dy * layer.forward(x, train=False)).sum())
        flat[idx] = orig - eps
        dn = float((dy * layer.forward(x, train=False)).sum())
        flat[idx] = orig
        fd = (up - dn) / (2 * eps)
        scale = max(abs(fd), abs(dflat[idx]), 1e-8)
        worst = max(worst, abs(fd - dflat[idx]) / scale)
    return worst


class TestLayers:
    def test_linear_gradient(self):
        rng = np.random.default_rng(0)
        layer = Linear(5, 3, rng, dtype=np.float64)
        x = rng.normal(size=(4, 5))
        assert layer_fd_check(layer, x) < 1e-6

    def test_conv_gradient(self):
        rng = np.random.default_rng(1)
        layer = Conv2d(2, 3, rng, dtype=np.float64)
        x = rng.normal(size=(2, 2, 6, 5))
        assert layer_fd_check(layer, x) < 1e-6

    def test_standardize_gradient(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 7))
        assert layer_fd_check(Standardize(), x) < 1e-6

    def test_l2normalize_gradient(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6)) + 0.5
        assert layer_fd_check(L2Normalize(), x) < 1e-6

    def test_global_pool_and_add_channel_shapes(self):
        x = np.arange(24, dtype=np.float64).reshape(2, 3, 2, 2)
        pooled = GlobalAvgPool().forward(x)
        assert pooled.shape == (2, 3)
        expanded = AddChannel().forward(np.zeros((2, 4, 5)))
        assert expanded.shape == (2, 1, 4, 5)

    def test_relu_masks_negatives(self):
        layer = ReLU()
        y = layer.forward(np.array([-1.0, 2.0]))
        assert list(y) == [0.0, 2.0]
        assert list(layer.backward(np.ones(2))) == [0.0, 1.0]


class TestModelConfig:
    def test_unknown_topology(self):
        with pytest.raises(ParameterError):
            ModelConfig(topology="three_towers")

    def test_single_head_spaces(self):
        cfg = ModelConfig(topology="single_head")
        assert cfg.space_names == ("embed", "proj_all")

    def test_multi_head_counts(self):
        cfg = ModelConfig(topology="multi_head")
        assert cfg.head_names == ("all", "pitch_shift", "time_stretch")

    def test_split_trunk_concat_dim(self):
        cfg = ModelConfig(topology="split_trunk", embed_dim=32)
        assert cfg.space_dim("embed_concat") == 32 * 3

    def test_round_trip(self):
        cfg = ModelConfig(topology="split_trunk", conv_channels=(4, 8))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    @pytest.mark.parametrize("topology", ["single_head", "multi_head",
                                          "split_trunk"])
    def test_projections_unit_norm(self, topology):
        cfg = tiny_model_config(topology)
        model = build_model(cfg, seed=0)
        x = np.random.default_rng(0).normal(
            size=(4,) + cfg.input_shape).astype(np.float32)
        bundle = model.forward(x)
        for name, z in bundle.projections.items():
            norms = np.linalg.norm(z, axis=1)
            assert np.allclose(norms, 1.0, atol=1e-6), name
            assert np.all(np.isfinite(z))

    def test_multi_head_k2_exposes_three_projections(self):
        model = build_model(tiny_model_config("multi_head"), seed=0)
        x = np.zeros((2, 6, 4), dtype=np.float32) + 0.5
        bundle = model.forward(x)
        assert len(bundle.projections) == 3

    def test_concat_is_concatenation(self):
        cfg = tiny_model_config("split_trunk")
        model = build_model(cfg, seed=1)
        x = np.random.default_rng(1).normal(
            size=(3,) + cfg.input_shape).astype(np.float32)
        bundle = model.forward(x)
        manual = np.concatenate([bundle.embeddings[f"embed_{h}"]
                                 for h in cfg.head_names], axis=1)
        assert np.array_equal(bundle.embeddings["embed_concat"], manual)

    def test_shape_mismatch_rejected(self):
        model = build_model(tiny_model_config(), seed=0)
        with pytest.raises(ParameterError):
            model.forward(np.zeros((2, 5, 4), dtype=np.float32))

    def test_eval_determinism(self):
        model = build_model(tiny_model_config(), seed=2)
        x = np.random.default_rng(2).normal(size=(2, 6, 4)).astype(np.float32)
        a = model.forward(x).projections["all"]
        b = model.forward(x).projections["all"]
        assert np.array_equal(a, b)


class TestBuildModel:
    def test_seed_reproducible(self):
        a = build_model(ModelConfig(), seed=5)
        b = build_model(ModelConfig(), seed=5)
        for name, p in a.parameters().items():
            assert np.array_equal(p, b.parameters()[name]), name

    def test_split_trunk_param_count_identity(self):
        # split count == single count + K * (replicated tail + head)
        base = dict(conv_channels=(4, 8), embed_dim=16, head_hidden=8,
                    proj_dim=4)
        single = build_model(ModelConfig(topology="single_head", **base),
                             seed=0)
        split = build_model(ModelConfig(topology="split_trunk",
                                        split_blocks=1, **base), seed=0)
        k = 2
        tail_params = sum(
            p.size for name, p in split.parameters().items()
            if name.startswith("tail.all."))
        head_params = sum(
            p.size for name, p in split.parameters().items()
            if name.startswith("head.all."))
        expected = single.param_count() + k * (tail_params + head_params)
        assert split.param_count() == expected

    def test_k0_multi_head_structurally_single(self):
        multi = build_model(ModelConfig(topology="multi_head",
                                        variant_names=()), seed=3)
        single = build_model(ModelConfig(topology="single_head"), seed=3)
        assert set(multi.parameters()) == set(single.parameters())


class TestBackward:
    def test_gradcheck_many_seeds(self):
        # analytic vs 64-bit central differences across 20 seeds
        for seed in range(20):
            err = max_relative_gradient_error(seed)
            assert err < 1e-4, (seed, err)

    def test_zero_loss_gradients_zero(self):
        cfg = tiny_model_config("multi_head")
        model = Model(cfg, seed=0, dtype=np.float64)
        model.forward(np.random.default_rng(0).normal(
            size=(4,) + cfg.input_shape))
        model.backward({})
        for name, g in model.gradients().items():
            assert np.all(g == 0.0), name

    def test_tail_independence(self):
        # loss only on head "all": variant tails get zero gradient, the
        # shared trunk does not
        cfg = tiny_model_config("split_trunk")
        model = Model(cfg, seed=4, dtype=np.float64)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4,) + cfg.input_shape)
        bundle = model.forward(x)
        model.backward({"all": rng.normal(
            size=bundle.projections["all"].shape)})
        grads = model.gradients()
        for name, g in grads.items():
            if name.startswith("tail.pitch_shift.") or \
                    name.startswith("tail.time_stretch."):
                assert np.all(g == 0.0), name
        trunk_norm = sum(np.abs(g).sum() for n, g in grads.items()
                         if n.startswith("trunk."))
        assert trunk_norm > 0.0

    def test_batch_duplication_doubles_summed_gradient(self):
        cfg = tiny_model_config("multi_head")
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3,) + cfg.input_shape)
        dz = rng.normal(size=(3, cfg.proj_dim))

        def head_w_grad(xb, dzb):
            model = Model(cfg, seed=6, dtype=np.float64)
            model.forward(xb)
            model.backward({"all": dzb})
            return model.gradients()["head.all.0.W"].copy()

        g1 = head_w_grad(x, dz)
        g2 = head_w_grad(np.concatenate([x, x]), np.concatenate([dz, dz]))
        assert np.allclose(g2, 2 * g1, rtol=1e-9, atol=1e-12)

    def test_prenorm_scaling_leaves_loss_unchanged(self):
        # scaling pre-normalization projections by c > 0 changes nothing
        cfg = tiny_model_config("multi_head")
        model = Model(cfg, seed=7, dtype=np.float64)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4,) + cfg.input_shape)
        masks = random_masks(rng, 2, 2, 2)
        base = total_loss(model, x, masks, LossConfig(),
                          list(cfg.variant_names)).total
        for name, p in model.parameters().items():
            if name.startswith("head.all."):
                model.set_parameter(name, p * 3.0)
        scaled = total_loss(model, x, masks, LossConfig(),
                            list(cfg.variant_names)).total
        assert abs(base - scaled) < 1e-9


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = tiny_model_config("split_trunk")
        model = build_model(cfg, seed=9)
        path = str(tmp_path / "model.bin")
        save_checkpoint(path, model, meta={"train_state": {"step": 3}})
        loaded, meta, _tensors = model_from_checkpoint(path)
        assert meta["train_state"]["step"] == 3
        assert loaded.config == cfg
        for name, p in model.parameters().items():
            assert np.array_equal(p, loaded.parameters()[name]), name

    def test_byte_stable(self, tmp_path):
        model = build_model(tiny_model_config(), seed=1)
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_checkpoint(p1, model)
        save_checkpoint(p2, model)
        assert (tmp_path / "a.bin").read_bytes() == \
            (tmp_path / "b.bin").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParameterError):
            load_checkpoint(str(path))

    def test_extra_tensors_preserved(self, tmp_path):
        model = build_model(tiny_model_config(), seed=2)
        extra = {"adam.m.trunk.2.0.0.W": np.ones((3, 3), dtype=np.float32)}
        path = str(tmp_path / "m.bin")
        save_checkpoint(path, model, extra_tensors=extra)
        _, tensors = load_checkpoint(path)
        assert np.array_equal(tensors["adam.m.trunk.2.0.0.W"],
                              extra["adam.m.trunk.2.0.0.W"])

import math
import os

import numpy as np
import pytest

from airgap import nn
from airgap.nn import (AblationMask, Adam, CheckpointError, PolicyNetwork,
                       PolicyTemplate, build_policy, load_checkpoint,
                       save_checkpoint)


def analytic_param_count(layers, filters, n_rays, n_actions=25,
                         continuous=False) -> int:
    total = 3 * 1 * filters + filters                 # first conv
    total += (layers - 1) * (3 * filters * filters + filters)
    d_in = n_rays * filters + 6
    for _ in range(layers):
        total += d_in * filters + filters
        d_in = filters
    if continuous:
        total += filters * 2 + 2        # mean head
        total += filters * 1 + 1        # value head
        total += 2                      # log_std
    else:
        total += filters * n_actions + n_actions
    return total


def random_inputs(rng, batch, n_rays):
    return (rng.uniform(0, 1, (batch, n_rays)),
            rng.normal(0, 2, (batch, 3)),
            rng.normal(0, 5, (batch, 3)))


class TestBuildPolicy:
    def test_layer_structure(self):
        net = build_policy(PolicyTemplate(2, 32, 32))
        assert len(net.convs) == 2 and len(net.trunk) == 2
        assert net.head.w.shape == (32, 25)
        assert net.parameter_count == 38105

    def test_parameter_count_over_sweep_grid(self):
        for layers in (2, 3, 4, 5, 6):
            for filters in (32, 48, 64):
                net = build_policy(PolicyTemplate(layers, filters, 32))
                assert net.parameter_count == analytic_param_count(layers, filters, 32)
        for layers in (5, 7, 9):
            net = build_policy(PolicyTemplate(layers, 32, 32), "continuous")
            assert net.parameter_count == analytic_param_count(
                layers, 32, 32, continuous=True)

    def test_deterministic_init(self):
        a = build_policy(PolicyTemplate(3, 16, 32), init_seed=9)
        b = build_policy(PolicyTemplate(3, 16, 32), init_seed=9)
        assert np.array_equal(a.flat_params(), b.flat_params())
        c = build_policy(PolicyTemplate(3, 16, 32), init_seed=10)
        assert not np.array_equal(a.flat_params(), c.flat_params())

    def test_degenerate_rays_rejected(self):
        with pytest.raises(ValueError):
            PolicyTemplate(2, 8, 2)

    def test_template_parse(self):
        t = PolicyTemplate.parse("5x32")
        assert (t.num_layers, t.num_filters) == (5, 32)
        with pytest.raises(ValueError):
            PolicyTemplate.parse("five-by-32")


class TestForward:
    def test_zero_weights_zero_output(self):
        net = build_policy(PolicyTemplate(2, 8, 16))
        net.load_flat(np.zeros(net.parameter_count))
        rng = np.random.default_rng(0)
        out = net.forward(*random_inputs(rng, 4, 16))
        assert np.all(out["q"] == 0.0)

    def test_ablation_equals_zeroed_inputs(self):
        rng = np.random.default_rng(1)
        net = build_policy(PolicyTemplate(2, 8, 16), init_seed=5)
        depth, vel, pos = random_inputs(rng, 3, 16)
        for mask in (AblationMask(zero_depth=True), AblationMask(zero_velocity=True),
                     AblationMask(zero_position=True),
                     AblationMask(True, True, True)):
            masked = net.forward(depth, vel, pos, mask)["q"]
            manual = net.forward(
                np.zeros_like(depth) if mask.zero_depth else depth,
                np.zeros_like(vel) if mask.zero_velocity else vel,
                np.zeros_like(pos) if mask.zero_position else pos)["q"]
            assert np.array_equal(masked, manual)

    def test_hand_computed_tiny_network(self):
        # 1 conv (1 filter), 1 dense (1 unit), 2-action head on 3 rays
        net = build_policy(PolicyTemplate(1, 1, 3), n_actions=2)
        conv_w = np.array([[0.5], [1.0], [-0.25]])   # kernel taps k=0,1,2
        conv_b = np.array([0.1])
        net.convs[0].w[...] = conv_w
        net.convs[0].b[...] = conv_b
        dense_w = np.arange(1, 10).reshape(9, 1) * 0.1
        net.trunk[0].w[...] = dense_w
        net.trunk[0].b[...] = np.array([-0.2])
        net.head.w[...] = np.array([[2.0, -1.0]])
        net.head.b[...] = np.array([0.3, 0.4])

        depth = np.array([[0.2, 0.6, 1.0]])
        vel = np.array([[0.1, -0.2, 0.0]])
        pos = np.array([[1.0, 2.0, math.sqrt(5.0)]])

        # same padding: windows [0, .2, .6], [.2, .6, 1.0], [.6, 1.0, 0]
        conv_out = []
        padded = [0.0, 0.2, 0.6, 1.0, 0.0]
        for n in range(3):
            z = (padded[n] * 0.5 + padded[n + 1] * 1.0 + padded[n + 2] * (-0.25)) + 0.1
            conv_out.append(max(z, 0.0))
        trunk_in = conv_out + [0.1, -0.2, 0.0, 1.0, 2.0, math.sqrt(5.0)]
        z = sum(t * w for t, w in zip(trunk_in, dense_w[:, 0])) - 0.2
        h = max(z, 0.0)
        expected = np.array([h * 2.0 + 0.3, h * (-1.0) + 0.4])

        got = net.forward(depth, vel, pos)["q"][0]
        assert got == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        net = build_policy(PolicyTemplate(1, 4, 16))
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 8)), np.zeros((1, 3)), np.zeros((1, 3)))


class TestBackward:
    def test_dense_gradient_is_outer_product(self):
        rng = np.random.default_rng(2)
        layer = nn.Dense(4, 3, None, rng)
        x = rng.normal(size=(5, 4))
        upstream = rng.normal(size=(5, 3))
        layer.forward(x)
        layer.backward(upstream)
        assert np.allclose(layer.dw, x.T @ upstream)
        assert np.allclose(layer.db, upstream.sum(axis=0))

    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(3)
        net = build_policy(PolicyTemplate(2, 4, 8), init_seed=1)
        net.forward(*random_inputs(rng, 2, 8))
        net.backward({"q": np.zeros((2, 25))})
        for name, g in net.gradients().items():
            assert not np.any(g), name

    def test_backward_without_forward(self):
        net = build_policy(PolicyTemplate(1, 4, 8))
        with pytest.raises(RuntimeError):
            net.backward({"q": np.zeros((1, 25))})

    @pytest.mark.parametrize("spec,layers,filters,n_rays", [
        ("discrete", 1, 3, 8), ("discrete", 2, 4, 8),
        ("discrete", 3, 5, 12), ("continuous", 2, 4, 8),
    ])
    def test_gradients_match_finite_differences(self, spec, layers, filters, n_rays):
        rng = np.random.default_rng(layers * 100 + filters)
        net = build_policy(PolicyTemplate(layers, filters, n_rays), spec,
                           init_seed=7, n_actions=4)
        depth, vel, pos = random_inputs(rng, 2, n_rays)
        if spec == "discrete":
            upstream = {"q": rng.normal(size=(2, 4))}
        else:
            upstream = {"mean": rng.normal(size=(2, 2)),
                        "value": rng.normal(size=(2, 1))}

        net.forward(depth, vel, pos)
        net.backward(upstream)
        grads = {k: v.copy() for k, v in net.gradients().items()}

        def objective():
            out = net.forward(depth, vel, pos)
            return sum(float((out[k] * u).sum()) for k, u in upstream.items())

        h = 1e-5
        worst = 0.0
        for name, p in net.parameters():
            if name == "log_std":
                continue  # not on the forward path; trained analytically
            flat = p.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up_val = objective()
                flat[i] = orig - h
                down = objective()
                flat[i] = orig
                fd = (up_val - down) / (2 * h)
                an = grads[name].ravel()[i]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3))
        assert worst < 1e-5


class TestAdam:
    def test_first_step_is_signed_lr(self):
        # with bias correction, step 1 moves each weight by lr*sign(grad)
        net = build_policy(PolicyTemplate(1, 3, 8), init_seed=0, n_actions=2)
        opt = Adam(net, lr=0.01)
        rng = np.random.default_rng(4)
        depth, vel, pos = random_inputs(rng, 1, 8)
        before = {name: p.copy() for name, p in net.parameters()}
        net.forward(depth, vel, pos)
        net.backward({"q": np.ones((1, 2))})
        grads = {k: v.copy() for k, v in net.gradients().items()}
        opt.step()
        for name, p in net.parameters():
            g = grads[name]
            nz = g != 0
            if np.any(nz):
                delta = p[nz] - before[name][nz]
                assert np.allclose(delta, -0.01 * np.sign(g[nz]), atol=1e-6)

    def test_optimizes_a_quadratic(self):
        net = build_policy(PolicyTemplate(1, 8, 8), init_seed=0, n_actions=1)
        opt = Adam(net, lr=0.02)
        rng = np.random.default_rng(5)
        depth, vel, pos = random_inputs(rng, 4, 8)
        target = np.array([[1.0], [2.0], [-1.0], [0.5]])
        for _ in range(800):
            out = net.forward(depth, vel, pos)["q"]
            err = out - target
            net.backward({"q": 2 * err / 4})
            opt.step()
        final = net.forward(depth, vel, pos)["q"]
        assert np.abs(final - target).max() < 1e-2


class TestCheckpoint:
    def test_roundtrip_bit_exact_and_forward_identical(self, tmp_path):
        net = build_policy(PolicyTemplate(3, 8, 16), init_seed=12)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path, metadata={"step": 50_000, "zone": 1})
        loaded, meta, _ = load_checkpoint(path)
        assert np.array_equal(loaded.flat_params(), net.flat_params())
        assert meta["step"] == 50_000 and meta["zone"] == 1
        rng = np.random.default_rng(6)
        for _ in range(100):
            depth, vel, pos = random_inputs(rng, 1, 16)
            assert np.array_equal(net.forward(depth, vel, pos)["q"],
                                  loaded.forward(depth, vel, pos)["q"])

    def test_wrong_input_size(self, tmp_path):
        net = build_policy(PolicyTemplate(1, 4, 16))
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_input_size=38)

    def test_corrupted_payload(self, tmp_path):
        net = build_policy(PolicyTemplate(1, 4, 16))
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_and_version(self, tmp_path):
        net = build_policy(PolicyTemplate(1, 4, 16))
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = bytearray(path.read_bytes())
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"XXXX" + bytes(blob[4:]))
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
        blob[4] = 99
        bad.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)

    def test_float32_storage_roundtrip(self, tmp_path):
        net = build_policy(PolicyTemplate(1, 4, 16), init_seed=3)
        path = tmp_path / "net32.ckpt"
        save_checkpoint(net, path, dtype="<f4")
        loaded, _, _ = load_checkpoint(path)
        assert np.allclose(loaded.flat_params(), net.flat_params(), atol=1e-6)

    def test_extra_arrays_roundtrip(self, tmp_path):
        net = build_policy(PolicyTemplate(1, 4, 16), init_seed=3)
        opt = Adam(net)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path, extra_arrays=opt.state_arrays())
        _, _, extras = load_checkpoint(path)
        assert set(extras) == set(opt.state_arrays())

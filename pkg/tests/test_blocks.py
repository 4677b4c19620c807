"""Composite blocks: wiring oracles, identity properties, init statistics."""

import numpy as np
import pytest

from hrgrasp import tensor as T
from hrgrasp import blocks as B
from hrgrasp.gradcheck import check_gradients
from hrgrasp.tensor import BNState, ShapeError, Tensor


def make_rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def randomize_bn_stats(bag, seed=0):
    rng = make_rng(seed)
    for st in bag.bn.values():
        st.mean = rng.normal(0, 0.5, st.mean.shape).astype(np.float32)
        st.var = (0.5 + rng.random(st.var.shape)).astype(np.float32)


class TestStem:
    @pytest.mark.parametrize("cin", [1, 4])
    def test_quarter_resolution_output(self, cin):
        bag = B.init_params({"kind": "stem", "cin": cin, "c0": 18}, seed=0)
        x = Tensor(np.ones((1, cin, 224, 224), np.float32))
        out = B.stem(bag, "stem", x, training=True)
        assert out.shape == (1, 18, 56, 56)

    def test_zero_input_zero_beta_gives_zero(self):
        bag = B.init_params({"kind": "stem", "cin": 2, "c0": 6}, seed=1)
        x = Tensor(np.zeros((1, 2, 16, 16), np.float32))
        out = B.stem(bag, "stem", x, training=False)
        np.testing.assert_array_equal(out.data, 0)

    def test_indivisible_size_rejected(self):
        bag = B.init_params({"kind": "stem", "cin": 1, "c0": 4}, seed=2)
        with pytest.raises(ShapeError, match="divisible"):
            B.stem(bag, "stem", Tensor(np.zeros((1, 1, 30, 30), np.float32)), True)


class TestResidualBlock:
    def test_zero_weights_identity_on_nonnegative(self):
        bag = B.init_params({"kind": "residual", "channels": 5, "prefix": "rb"}, seed=3)
        for name, t in bag.tensors.items():
            if name.endswith((".weight", ".beta", ".bias")):
                t.data = np.zeros_like(t.data)
        x = Tensor(np.abs(make_rng(4).standard_normal((2, 5, 8, 8))).astype(np.float32))
        out = B.residual_block(bag, "rb", x, training=False)
        np.testing.assert_allclose(out.data, x.data, atol=1e-7)

    def test_shape_preserved(self):
        bag = B.init_params({"kind": "residual", "channels": 3, "prefix": "rb"}, seed=5)
        x = Tensor(make_rng(6).standard_normal((2, 3, 10, 12)).astype(np.float32))
        assert B.residual_block(bag, "rb", x, training=True).shape == x.shape

    def test_channel_mismatch_rejected(self):
        bag = B.init_params({"kind": "residual", "channels": 3, "prefix": "rb"}, seed=7)
        with pytest.raises(ShapeError, match="channels"):
            B.residual_block(bag, "rb", Tensor(np.zeros((1, 4, 8, 8), np.float32)), True)

    def test_matches_primitive_composition(self):
        bag = B.init_params({"kind": "residual", "channels": 4, "prefix": "rb"}, seed=8)
        randomize_bn_stats(bag, seed=9)
        x = Tensor(make_rng(10).standard_normal((2, 4, 9, 9)).astype(np.float32))
        got = B.residual_block(bag, "rb", x, training=False)

        # independent recomposition from tensor-core primitives
        y = T.conv2d(x, bag["rb.conv1.weight"], bag["rb.conv1.bias"], 1, 1)
        y = T.batchnorm2d(y, bag["rb.conv1.gamma"], bag["rb.conv1.beta"],
                          bag.bn["rb.conv1"], training=False)
        y = T.relu(y)
        y = T.conv2d(y, bag["rb.conv2.weight"], bag["rb.conv2.bias"], 1, 1)
        y = T.batchnorm2d(y, bag["rb.conv2.gamma"], bag["rb.conv2.beta"],
                          bag.bn["rb.conv2"], training=False)
        ref = T.relu(T.add(x, y))
        assert np.max(np.abs(got.data - ref.data)) < 1e-6

    def test_gradients(self):
        bag = B.init_params({"kind": "residual", "channels": 3, "prefix": "rb"}, seed=11)
        for t in bag.tensors.values():
            t.data = t.data.astype(np.float64)
        x = Tensor(make_rng(12).standard_normal((1, 3, 6, 6)), requires_grad=True)

        def loss_fn():
            y = B.residual_block(bag, "rb", x, training=True)
            return T.mean_all(T.mul(y, y))

        probes = [x, bag["rb.conv1.weight"], bag["rb.conv2.gamma"]]
        assert check_gradients(loss_fn, probes, n_probes=18, rng=make_rng(13)) < 1e-3


class TestFuseLayer:
    def _branches(self, seed, shapes):
        rng = make_rng(seed)
        return [Tensor(np.abs(rng.standard_normal(s)).astype(np.float32)) for s in shapes]

    def test_zero_cross_weights_identity(self):
        ch = [6, 12]
        bag = B.init_params({"kind": "fuse", "channels": ch, "prefix": "f"}, seed=14)
        for name, t in bag.tensors.items():
            if name.endswith((".weight", ".beta", ".bias")):
                t.data = np.zeros_like(t.data)
        branches = self._branches(15, [(1, 6, 8, 8), (1, 12, 4, 4)])
        outs = B.fuse_layer(bag, "f", branches, training=False)
        for got, src in zip(outs, branches):
            np.testing.assert_allclose(got.data, src.data, atol=1e-7)

    def test_shapes_preserved(self):
        ch = [18, 36]
        bag = B.init_params({"kind": "fuse", "channels": ch, "prefix": "f"}, seed=16)
        branches = self._branches(17, [(1, 18, 56, 56), (1, 36, 28, 28)])
        outs = B.fuse_layer(bag, "f", branches, training=True)
        assert [o.shape for o in outs] == [b.shape for b in branches]

    def test_needs_two_branches(self):
        bag = B.init_params({"kind": "fuse", "channels": [4, 8], "prefix": "f"}, seed=18)
        with pytest.raises(ShapeError, match="2 branches"):
            B.fuse_layer(bag, "f", self._branches(19, [(1, 4, 8, 8)]), True)

    def test_three_branch_matches_primitive_composition(self):
        ch = [4, 8, 16]
        bag = B.init_params({"kind": "fuse", "channels": ch, "prefix": "f"}, seed=20)
        randomize_bn_stats(bag, seed=21)
        branches = self._branches(22, [(2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2)])
        outs = B.fuse_layer(bag, "f", branches, training=False)

        def unit(prefix, x, stride, padding):
            y = T.conv2d(x, bag[f"{prefix}.weight"], bag[f"{prefix}.bias"],
                         stride, padding)
            return T.batchnorm2d(y, bag[f"{prefix}.gamma"], bag[f"{prefix}.beta"],
                                 bag.bn[prefix], training=False)

        refs = []
        for i in range(3):
            total = branches[i]
            for j in range(3):
                if j == i:
                    continue
                if j < i:
                    y = branches[j]
                    for s in range(i - j):
                        y = unit(f"f.d{j}_{i}.s{s}", y, 2, 1)
                else:
                    y = T.bilinear_upsample(branches[j], 2 ** (j - i))
                    y = unit(f"f.u{j}_{i}", y, 1, 0)
                total = T.add(total, y)
            refs.append(T.relu(total))
        for got, ref in zip(outs, refs):
            assert np.max(np.abs(got.data - ref.data)) < 1e-6

    def test_gradients_through_fuse(self):
        ch = [3, 6]
        bag = B.init_params({"kind": "fuse", "channels": ch, "prefix": "f"}, seed=23)
        for t in bag.tensors.values():
            t.data = t.data.astype(np.float64)
        rng = make_rng(24)
        b0 = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
        b1 = Tensor(rng.standard_normal((1, 6, 3, 3)), requires_grad=True)

        def loss_fn():
            outs = B.fuse_layer(bag, "f", [b0, b1], training=True)
            return T.mean_all(T.mul(y := T.concat_channels(
                [outs[0], T.bilinear_upsample(outs[1], 2)]), y))

        probes = [b0, b1, bag["f.d0_1.s0.weight"], bag["f.u1_0.weight"]]
        assert check_gradients(loss_fn, probes, n_probes=16, rng=make_rng(25)) < 1e-3


class TestInitParams:
    def test_same_seed_bit_identical(self):
        a = B.init_params({"kind": "residual", "channels": 8, "prefix": "p"}, seed=42)
        b = B.init_params({"kind": "residual", "channels": 8, "prefix": "p"}, seed=42)
        for name in a.tensors:
            assert np.array_equal(a[name].data, b[name].data), name

    def test_he_std_for_cin18(self):
        rng = make_rng(99)
        draws = B.he_weight(rng, 80, 18, 3)  # 80*18*9 > 1e4 draws
        std = draws.std()
        target = np.sqrt(2.0 / (9 * 18))
        assert abs(std - target) / target < 0.2

    def test_bn_constants(self):
        bag = B.init_params({"kind": "conv_bn", "cout": 7, "cin": 3, "prefix": "c"}, seed=1)
        assert np.all(bag["c.gamma"].data == 1.0)
        assert np.all(bag["c.beta"].data == 0.0)
        assert np.all(bag.bn["c"].mean == 0.0) and np.all(bag.bn["c"].var == 1.0)

    def test_biases_zero(self):
        bag = B.init_params({"kind": "stem", "cin": 3, "c0": 12}, seed=2)
        assert np.all(bag["stem.conv1.bias"].data == 0.0)
        assert np.all(bag["stem.conv2.bias"].data == 0.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown block kind"):
            B.init_params({"kind": "pooling"}, seed=0)

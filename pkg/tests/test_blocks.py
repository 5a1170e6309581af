import numpy as np
import pytest

from lowlight import ops
from lowlight.blocks import (SCA, SSA1, SSA2, SSAB, VARIANTS, AddSkip, Expansion, SaliencyGate, attention_map,
                             dot_product_attention, dot_product_attention_macs, global_context, make_skip,
                             siamese_split)
from lowlight.errors import ConfigError, ShapeError
from lowlight.gradsuite import run_suite, select
from lowlight.tensor import Tensor


def zero_params(module):
    for p in module.parameters():
        p.data[:] = 0.0
    return module


def delta_dw(expansion):
    k = expansion.dw.kernel.data
    k[:] = 0.0
    k[1, 1] = 1.0


class TestSiameseSplit:
    def test_shapes(self, rng):
        split = siamese_split(Tensor(rng.standard_normal((2, 2, 4))), Expansion(4, rng), heads=2)
        assert split.Q.shape == split.P.shape == (4, 2, 2)
        assert (split.N, split.h, split.C) == (4, 2, 4)

    def test_duplicating_weights(self, rng):
        exp = Expansion(4, rng)
        exp.conv.weight.data[:] = np.hstack([np.eye(4), np.eye(4)])
        delta_dw(exp)
        x = rng.standard_normal((3, 3, 4))
        split = siamese_split(Tensor(x), exp, heads=2)
        np.testing.assert_array_equal(split.Q.data, x.reshape(9, 2, 2))
        np.testing.assert_array_equal(split.P.data, x.reshape(9, 2, 2))

    def test_heads_must_divide(self, rng):
        with pytest.raises(ConfigError):
            siamese_split(Tensor(np.ones((2, 2, 6))), Expansion(6, rng), heads=4)


class TestAttention:
    def test_zero_q_is_uniform(self, rng):
        a = attention_map(Tensor(np.zeros((5, 2, 3))), SaliencyGate(2, 3, rng)).data
        np.testing.assert_allclose(a, 1 / 5, rtol=1e-15)

    def test_hand_softmax(self, rng):
        gate = SaliencyGate(1, 1, rng)
        gate.W.data[:] = 1.0
        q = np.array([np.log(1.0), np.log(3.0)]).reshape(2, 1, 1) * np.sqrt(gate.D)
        np.testing.assert_allclose(attention_map(Tensor(q), gate).data[:, 0], [0.25, 0.75], rtol=1e-14)

    def test_mass_conservation(self, rng):
        a = attention_map(Tensor(rng.standard_normal((40, 4, 2))), SaliencyGate(4, 2, rng)).data
        np.testing.assert_allclose(a.sum(0), 1.0, atol=1e-12)

    def test_uniform_weights_give_mean(self, rng):
        q = rng.standard_normal((6, 2, 3))
        g = global_context(Tensor(np.full((6, 2), 1 / 6)), Tensor(q)).data
        np.testing.assert_allclose(g, q.mean(0), rtol=1e-13)

    def test_one_hot_selects(self, rng):
        q = rng.standard_normal((6, 2, 3))
        a = np.zeros((6, 2))
        a[4] = 1.0
        np.testing.assert_array_equal(global_context(Tensor(a), Tensor(q)).data, q[4])

    def test_matches_double_loop(self, rng):
        a, q = rng.standard_normal((7, 3)), rng.standard_normal((7, 3, 4))
        expected = np.zeros((3, 4))
        for n in range(7):
            for head in range(3):
                expected[head] += a[n, head] * q[n, head]
        np.testing.assert_allclose(global_context(Tensor(a), Tensor(q)).data, expected, rtol=1e-13)

    def test_context_is_permutation_invariant(self, rng):
        gate = SaliencyGate(2, 3, rng)
        q = rng.standard_normal((10, 2, 3))
        perm = rng.permutation(10)
        g1 = global_context(attention_map(Tensor(q), gate), Tensor(q)).data
        g2 = global_context(attention_map(Tensor(q[perm]), gate), Tensor(q[perm])).data
        np.testing.assert_allclose(g1, g2, rtol=1e-12)


class TestSSA:
    def test_ssa1_zero_weights_identity_l2(self, rng):
        block = zero_params(SSA1(4, 2, rng))
        block.L2.data[:] = np.eye(4)
        x = rng.standard_normal((3, 3, 4))
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_ssa2_zero_q(self, rng):
        block = SSA2(4, 2, rng)
        block.expand.conv.weight.data[:, :4] = 0.0
        block.expand.conv.bias.data[:] = 0.0
        x = rng.standard_normal((3, 3, 4))
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_ssa2_zero_p(self, rng):
        block = SSA2(4, 2, rng)
        block.expand.conv.weight.data[:, 4:] = 0.0
        x = rng.standard_normal((3, 3, 4))
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_ssab_degenerate_doubles(self, rng):
        block = zero_params(SSAB(4, 2, rng))
        block.first.L2.data[:] = np.eye(4)
        x = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(block(Tensor(x)).data, 2 * x)

    def test_ssab_is_sum_of_parts(self, rng):
        block = SSAB(8, 2, rng)
        x = Tensor(rng.standard_normal((3, 3, 8)))
        y1 = block.first(x)
        np.testing.assert_allclose(block(x).data, y1.data + block.second(y1).data, rtol=1e-14)

    def test_variants_param_counts(self, rng):
        counts = {v: SSAB(8, 2, np.random.default_rng(0), v).num_params() for v in VARIANTS}
        assert counts["ssa1_only"] < counts["full"]
        assert counts["ssa2_only"] < counts["full"]
        assert counts["ssa1_ssa1"] > counts["full"] > counts["ssa2_ssa2"]

    def test_unknown_variant(self, rng):
        with pytest.raises(ConfigError):
            SSAB(8, 2, rng, "ssa3")

    def test_permutation_equivariance_with_delta_kernels(self, rng):
        block = SSAB(4, 2, rng)
        for part in (block.first, block.second):
            delta_dw(part.expand)
        x = rng.standard_normal((3, 4, 4))
        perm = rng.permutation(12)
        out = block(Tensor(x)).data.reshape(12, 4)
        out_perm = block(Tensor(x.reshape(12, 4)[perm].reshape(3, 4, 4))).data.reshape(12, 4)
        np.testing.assert_allclose(out_perm, out[perm], rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_shape_preserved_random_configs(self, variant):
        rng = np.random.default_rng(hash(variant) % 2**32)
        for _ in range(10):
            heads = int(rng.integers(1, 4))
            c = heads * int(rng.integers(1, 4))
            h, w = (int(v) for v in rng.integers(1, 6, size=2))
            x = Tensor(rng.standard_normal((h, w, c)))
            assert SSAB(c, heads, rng, variant)(x).shape == (h, w, c)


class TestMacs:
    def test_ssab_linear_in_positions(self, rng):
        block = SSAB(32, 2, rng)
        assert block.macs(64, 64)[0] == 4 * block.macs(32, 32)[0]
        assert block.macs(32, 32)[1] == 0

    def test_ssab_formula(self, rng):
        n, c = 16 * 16, 8
        expand = n * c * 2 * c + n * 9 * 2 * c
        expected = (expand + 3 * n * c + 2 * n * c * c) + (expand + n * c)
        assert SSAB(c, 2, rng).macs(16, 16)[0] == expected

    def test_dot_product_attention_quadratic(self):
        assert dot_product_attention_macs(64, 64, 32) / dot_product_attention_macs(32, 32, 32) >= 15

    def test_dot_product_reference_runs(self, rng):
        c = 4
        ws = [rng.standard_normal((c, c)) for _ in range(4)]
        x = rng.standard_normal((3, 3, c))
        assert dot_product_attention(x, *ws).shape == x.shape


class TestSCA:
    def test_saturated_gate_is_plain_skip(self, rng):
        sca = SCA(8, rng)
        sca.mlp2_bias.data[:] = 20.0
        sca.mlp2.data[:] = 0.0
        s, d = rng.standard_normal((4, 4, 8)), rng.standard_normal((4, 4, 8))
        out = sca(Tensor(s), Tensor(d)).data
        np.testing.assert_allclose(out, AddSkip()(Tensor(s), Tensor(d)).data, atol=1e-6 * np.abs(s).max())

    def test_closed_gate_gives_deep(self, rng):
        sca = SCA(8, rng)
        sca.mlp2.data[:] = 0.0
        sca.mlp2_bias.data[:] = -800.0
        s, d = rng.standard_normal((4, 4, 8)), rng.standard_normal((4, 4, 8))
        np.testing.assert_allclose(sca(Tensor(s), Tensor(d)).data, d, atol=1e-300)

    def test_gate_depends_on_deep_branch(self, rng):
        sca = SCA(8, rng)
        s = Tensor(rng.standard_normal((4, 4, 8)))
        d1, d2 = rng.standard_normal((2, 4, 4, 8))
        diff = (sca(s, Tensor(d1)).data - d1) - (sca(s, Tensor(d2)).data - d2)
        assert np.abs(diff).max() > 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            SCA(8, rng)(Tensor(np.ones((2, 2, 8))), Tensor(np.ones((4, 4, 8))))

    def test_reduction_must_divide(self, rng):
        with pytest.raises(ConfigError):
            SCA(6, rng)

    @pytest.mark.parametrize("mode", ["sca", "se", "eca", "add"])
    def test_skip_modes_preserve_shape(self, mode, rng):
        skip = make_skip(mode, 8, rng)
        s, d = Tensor(rng.standard_normal((3, 5, 8))), Tensor(rng.standard_normal((3, 5, 8)))
        assert skip(s, d).shape == (3, 5, 8)

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError):
            make_skip("concat", 8, rng)


@pytest.mark.parametrize("name", select("blocks"))
def test_block_gradients(name):
    (result,) = run_suite([name])
    assert result.passed, result.line()

"""Attention-gated fusion block and baseline late-fusion rules."""

import numpy as np
import pytest

from conftest import fd_gradients, rel_err
from depest import autodiff as ad
from depest.errors import ConfigError, ShapeError
from depest.fusion import (
    BANK_HEADS,
    AttentionalFusion,
    ChannelAttention,
    SubAttentionalBank,
    baseline_fuse,
)


class TestChannelAttention:
    def test_output_in_unit_interval(self, rng):
        att = ChannelAttention(rng=rng, dtype=np.float64)
        w = att(ad.tensor(rng.normal(size=(2, 1, 3, 16))))
        assert w.data.shape == (2, 1, 3, 16)
        assert np.all(w.data > 0.0) and np.all(w.data < 1.0)

    def test_fresh_block_outputs_half(self, rng):
        # fresh BN ends both paths at beta=0, so the sigmoid sees 0
        att = ChannelAttention(rng=rng, dtype=np.float64)
        att.local_bn2.gamma.data[...] = 0.0
        att.global_bn2.gamma.data[...] = 0.0
        w = att(ad.tensor(rng.normal(size=(2, 1, 3, 8))))
        np.testing.assert_allclose(w.data, 0.5, atol=1e-12)

    def test_global_path_is_spatially_constant(self, rng):
        att = ChannelAttention(rng=rng, dtype=np.float64)
        # zero the local path's last BN; remaining signal is pooled only
        att.local_bn2.gamma.data[...] = 0.0
        att.local_bn2.beta.data[...] = 0.0
        w = att(ad.tensor(rng.normal(size=(3, 1, 2, 5))))
        for b in range(3):
            np.testing.assert_allclose(w.data[b], w.data[b].flat[0], atol=1e-12)

    def test_bad_reduction_rejected(self):
        with pytest.raises(ConfigError):
            ChannelAttention(channels=3, reduction=2)

    def test_non_4d_rejected(self, rng):
        att = ChannelAttention(rng=rng)
        with pytest.raises(ShapeError):
            att(ad.tensor(rng.normal(size=(3, 16))))


class TestAttentionalFusion:
    def test_shape_preserved(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        y = rng.normal(size=(2, 1, 3, 32))
        out = fus(ad.tensor(y))
        assert out.data.shape == y.shape

    def test_unbatched_lift(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        out = fus(ad.tensor(rng.normal(size=(1, 2, 16))))
        assert out.data.shape == (1, 2, 16)

    def test_convex_combination_identity(self, rng):
        # output must equal conv(Y)*w' + Y*(1-w') with the logged weights
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        y = rng.normal(size=(2, 1, 3, 8))
        out = fus(ad.tensor(y))
        expect = fus.last_conv_y * fus.last_wp + y * (1.0 - fus.last_wp)
        np.testing.assert_allclose(out.data, expect, atol=1e-9)

    def test_weights_logged_in_unit_interval(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        fus(ad.tensor(rng.normal(size=(2, 1, 3, 8))))
        for w in (fus.last_w, fus.last_wp):
            assert w.shape == (2, 1, 3, 8)
            assert np.all(w > 0.0) and np.all(w < 1.0)

    def test_saturation_high_passes_conv_only(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        fus.force_saturation(high=True)
        y = rng.normal(size=(2, 1, 3, 8))
        out = fus(ad.tensor(y))
        conv_y = fus.last_conv_y
        assert np.max(np.abs(out.data - conv_y)) < 1e-6

    def test_saturation_low_passes_input_only(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        fus.force_saturation(high=False)
        y = rng.normal(size=(2, 1, 3, 8))
        out = fus(ad.tensor(y))
        assert np.max(np.abs(out.data - y)) < 1e-6

    def test_fresh_block_blends_half_half(self, rng):
        # zero all final-BN gammas: every attention weight is exactly 0.5
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        for att in (fus.att_mid, fus.att_out):
            att.local_bn2.gamma.data[...] = 0.0
            att.global_bn2.gamma.data[...] = 0.0
        y = rng.normal(size=(2, 1, 3, 8))
        out = fus(ad.tensor(y))
        np.testing.assert_allclose(out.data, 0.5 * fus.last_conv_y + 0.5 * y, atol=1e-12)

    def test_gradients_flow_to_all_parameters(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        y = ad.tensor(rng.normal(size=(2, 1, 3, 6)), requires_grad=True)
        ad.backward(ad.sum_(ad.mul(fus(y), fus(y))))
        assert y.grad is not None
        for name, p in fus.named_parameters():
            assert p.grad is not None, name

    def test_full_stack_gradient_matches_fd(self, rng):
        fus = AttentionalFusion(rng=rng, dtype=np.float64)
        fus.eval()  # freeze BN stats so the fd probe sees a fixed function
        y = rng.normal(size=(1, 1, 2, 5))

        def f(a):
            out = fus(ad.tensor(a))
            return float(ad.sum_(ad.mul(out, out)).data)

        yt = ad.tensor(y.copy(), requires_grad=True)
        ad.backward(ad.sum_(ad.mul(fus(yt), fus(yt))))
        (num,) = fd_gradients(f, [y])
        assert rel_err(yt.grad, num) < 1e-4


class TestBank:
    def test_wrong_head_count_rejected(self):
        with pytest.raises(ConfigError):
            SubAttentionalBank(n_heads=4)

    def test_eight_heads_eight_outputs(self, rng):
        bank = SubAttentionalBank(rng=rng, dtype=np.float64)
        outs = bank(ad.tensor(rng.normal(size=(2, 1, 3, 8))))
        assert len(outs) == BANK_HEADS

    def test_heads_have_independent_parameters(self, rng):
        bank = SubAttentionalBank(rng=rng, dtype=np.float64)
        p0 = bank.heads[0].conv_first.weight
        p1 = bank.heads[1].conv_first.weight
        assert p0 is not p1
        assert not np.array_equal(p0.data, p1.data)

    def test_gradient_isolation_between_heads(self, rng):
        # a loss built from head 3 alone must not touch other heads
        bank = SubAttentionalBank(rng=rng, dtype=np.float64)
        outs = bank(ad.tensor(rng.normal(size=(1, 1, 3, 8))))
        ad.backward(ad.sum_(ad.mul(outs[3], outs[3])))
        for i, head in enumerate(bank.heads):
            for name, p in head.named_parameters():
                if i == 3:
                    assert p.grad is not None, f"head 3 {name}"
                else:
                    assert p.grad is None, f"head {i} {name}"

    def test_mutating_one_head_leaves_others_fixed(self, rng):
        bank = SubAttentionalBank(rng=rng, dtype=np.float64)
        x = ad.tensor(rng.normal(size=(1, 1, 3, 8)))
        before = [o.data.copy() for o in bank(x)]
        bank.heads[5].conv_refine.weight.data += 1.0
        after = [o.data.copy() for o in bank(x)]
        for i in range(BANK_HEADS):
            if i == 5:
                assert not np.allclose(before[i], after[i])
            else:
                np.testing.assert_allclose(before[i], after[i], atol=1e-12)


class TestBaselines:
    def make_vecs(self, rng, n=3, d=6):
        arrays = [rng.normal(size=d) for _ in range(n)]
        return arrays, [ad.tensor(a.copy(), requires_grad=True) for a in arrays]

    def test_multiplication(self, rng):
        arrays, vecs = self.make_vecs(rng)
        out = baseline_fuse("multiplication", vecs)
        np.testing.assert_allclose(out.data, arrays[0] * arrays[1] * arrays[2], atol=1e-12)

    def test_concatenation_order(self, rng):
        arrays, vecs = self.make_vecs(rng)
        out = baseline_fuse("concatenation", vecs)
        np.testing.assert_array_equal(out.data, np.concatenate(arrays))

    def test_median_is_lower_median(self, rng):
        vecs = [ad.tensor(np.array([1.0, 5.0])), ad.tensor(np.array([2.0, 6.0])),
                ad.tensor(np.array([3.0, 4.0])), ad.tensor(np.array([9.0, 0.0]))]
        out = baseline_fuse("median", vecs)
        # even count: lower of the two middle values, per coordinate
        np.testing.assert_array_equal(out.data, [2.0, 4.0])

    def test_max(self, rng):
        arrays, vecs = self.make_vecs(rng)
        out = baseline_fuse("max", vecs)
        np.testing.assert_allclose(out.data, np.max(arrays, axis=0), atol=1e-12)

    def test_summation_and_mean(self, rng):
        arrays, vecs = self.make_vecs(rng)
        np.testing.assert_allclose(baseline_fuse("summation", vecs).data, np.sum(arrays, axis=0), atol=1e-12)
        np.testing.assert_allclose(baseline_fuse("mean", vecs).data, np.mean(arrays, axis=0), atol=1e-12)

    def test_aliases(self, rng):
        arrays, vecs = self.make_vecs(rng)
        np.testing.assert_allclose(baseline_fuse("mult", vecs).data, baseline_fuse("multiplication", vecs).data)
        np.testing.assert_allclose(baseline_fuse("concat", vecs).data, baseline_fuse("concatenation", vecs).data)
        np.testing.assert_allclose(baseline_fuse("sum", vecs).data, baseline_fuse("summation", vecs).data)

    @pytest.mark.parametrize("method", ["multiplication", "median", "max", "summation", "mean"])
    def test_permutation_invariant_methods(self, method, rng):
        arrays, _ = self.make_vecs(rng, n=4)
        perm = [2, 0, 3, 1]
        a = baseline_fuse(method, [ad.tensor(arrays[i]) for i in range(4)])
        b = baseline_fuse(method, [ad.tensor(arrays[i]) for i in perm])
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_concatenation_is_order_sensitive(self, rng):
        arrays, _ = self.make_vecs(rng, n=2)
        a = baseline_fuse("concat", [ad.tensor(arrays[0]), ad.tensor(arrays[1])])
        b = baseline_fuse("concat", [ad.tensor(arrays[1]), ad.tensor(arrays[0])])
        assert not np.allclose(a.data, b.data)

    def test_batched_inputs(self, rng):
        stacked = rng.normal(size=(4, 3, 6))  # [B, n, d]
        out = baseline_fuse("mean", ad.tensor(stacked))
        np.testing.assert_allclose(out.data, stacked.mean(axis=1), atol=1e-12)
        out = baseline_fuse("concat", ad.tensor(stacked))
        assert out.data.shape == (4, 18)

    def test_gradients_flow(self, rng):
        for method in ("multiplication", "concatenation", "median", "max", "summation", "mean"):
            arrays, vecs = self.make_vecs(rng)
            ad.backward(ad.sum_(ad.mul(baseline_fuse(method, vecs), baseline_fuse(method, vecs))))
            for v in vecs:
                assert v.grad is not None, method

    def test_multiplication_gradient_matches_fd(self, rng):
        arrays, vecs = self.make_vecs(rng)
        ad.backward(ad.sum_(baseline_fuse("multiplication", vecs)))
        num = fd_gradients(lambda a, b, c: (a * b * c).sum(), arrays)
        for v, n in zip(vecs, num):
            assert rel_err(v.grad, n) < 1e-4

    def test_unknown_method_rejected(self, rng):
        _, vecs = self.make_vecs(rng)
        with pytest.raises(ConfigError):
            baseline_fuse("average", vecs)

    def test_single_vector_rejected(self, rng):
        with pytest.raises(ShapeError):
            baseline_fuse("mean", [ad.tensor(rng.normal(size=4))])

    def test_ragged_vectors_rejected(self, rng):
        with pytest.raises(ShapeError):
            baseline_fuse("mean", [ad.tensor(rng.normal(size=4)), ad.tensor(rng.normal(size=5))])

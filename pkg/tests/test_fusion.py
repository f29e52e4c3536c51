import numpy as np
import pytest

from mffnet import tensor as T
from mffnet.attention import CoAttentionPair
from mffnet.fusion import FusionModule, enhance, tfn_fuse, tfn_matrix
from mffnet.layers import Linear
from mffnet.tensor import Tensor, grad_check

from conftest import randt


def test_tfn_scalar_case():
    m = tfn_matrix(Tensor(np.array([2.0])), Tensor(np.array([3.0]))).data
    np.testing.assert_array_equal(m, [[6, 2], [3, 1]])


def test_tfn_zero_x_leaves_only_border(rng):
    y = rng.standard_normal(3)
    m = tfn_matrix(Tensor(np.zeros(3)), Tensor(y)).data
    np.testing.assert_array_equal(m[3], np.append(y, 1.0))
    np.testing.assert_array_equal(m[:3, :3], np.zeros((3, 3)))
    np.testing.assert_array_equal(m[:3, 3], np.zeros(3))
    assert m[3, 3] == 1.0


def test_tfn_elementwise_oracle(rng):
    x, y = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    m = tfn_matrix(Tensor(x), Tensor(y)).data
    for b in range(2):
        for i in range(3):
            assert m[b, i, 3] == x[b, i]
            for j in range(3):
                assert m[b, i, j] == x[b, i] * y[b, j]
        for j in range(3):
            assert m[b, 3, j] == y[b, j]
        assert m[b, 3, 3] == 1.0


def test_tfn_rejects_unequal_dims():
    with pytest.raises(T.DimensionError):
        tfn_matrix(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_tfn_fuse_projects_row_major_flattening(rng):
    proj = Linear(16, 5, rng)
    x, y = randt(rng, 3), randt(rng, 3)
    fused, m = tfn_fuse(x, y, proj)
    np.testing.assert_allclose(fused.data, m.data.reshape(-1) @ proj.weight.data + proj.bias.data)


def test_tfn_fuse_gradient(rng):
    proj = Linear(16, 4, rng)
    x, y = randt(rng, 2, 3), randt(rng, 2, 3)
    w = Tensor(rng.standard_normal((2, 4)))
    assert grad_check(lambda: T.sum_axis(tfn_fuse(x, y, proj)[0] * w),
                      proj.parameters() + [x, y], max_coords=32) < 1e-6


def test_enhance_output_is_twice_model_width(rng):
    pair = CoAttentionPair(8, 2, rng)
    for k in (1, 3, 7):
        assert enhance(randt(rng, 2, 8), randt(rng, 2, k, 8), pair).shape == (2, 16)


def test_enhance_symmetric_input_gives_equal_halves(rng):
    pair = CoAttentionPair(4, 2, rng)
    r_it = randt(rng, 4)
    out = enhance(r_it, Tensor(r_it.data[None]), pair).data
    np.testing.assert_array_equal(out[:4], out[4:])


def _module(rng, **kw):
    return FusionModule(6, 5, 8, 2, 7, rng, **kw)


def test_first_fusion_symmetric_projection(rng):
    fm = _module(rng)
    v = randt(rng, 3, 8)
    r_it, seq_t, seq_i = fm.first_fusion(v, Tensor(v.data.copy()))
    np.testing.assert_array_equal(seq_t.data, seq_i.data)
    pooled = seq_t.data.mean(0)
    np.testing.assert_allclose(r_it.data, np.concatenate([pooled, pooled]) @ fm.fuse_rit.weight.data
                               + fm.fuse_rit.bias.data)


def test_first_fusion_zero_weights_give_bias(rng):
    fm = _module(rng)
    fm.fuse_rit.weight.data[...] = 0.0
    r_it, _, _ = fm.first_fusion(randt(rng, 3, 8), randt(rng, 4, 8))
    np.testing.assert_array_equal(r_it.data, fm.fuse_rit.bias.data)


@pytest.mark.parametrize("n,p", [(1, 1), (3, 5), (9, 2)])
def test_fusion_shape_contract(n, p, rng):
    out = _module(rng)(randt(rng, 2, n, 6), randt(rng, 2, p, 5))
    assert out.R_M.shape == (2, 7)
    assert out.tfn_matrix.shape == (2, 17, 17)
    assert out.r_ct_seq.shape == (2, n, 8) and out.r_ci_seq.shape == (2, p, 8)


def test_fusion_has_three_shared_pairs(rng):
    fm = _module(rng)
    pairs = [m for m in (fm.pair1, fm.pair2, fm.pair3)]
    assert len({id(p.block) for p in pairs}) == 3
    block_size = pairs[0].num_parameters()
    assert all(p.num_parameters() == block_size for p in pairs)


def test_no_enhance_feeds_r_it_into_both_arms(rng):
    fm = _module(rng, enhance=False)
    assert fm.pair2 is None and fm.pair3 is None
    out = fm(randt(rng, 2, 3, 6), randt(rng, 2, 4, 5))
    m = out.tfn_matrix.data
    assert m.shape == (2, 9, 9)
    np.testing.assert_array_equal(m[:, 8, :8], out.r_it.data)
    np.testing.assert_array_equal(m[:, :8, 8], out.r_it.data)


def test_no_consistency_keeps_only_first_pair(rng):
    fm = _module(rng, consistency=False)
    out = fm(randt(rng, 2, 3, 6), randt(rng, 2, 4, 5))
    assert out.R_M is None and out.r_it is None
    assert out.r_ct_seq.shape == (2, 3, 8)
    names = {n.split(".")[0] for n, _ in fm.named_parameters()}
    assert names == {"proj_text", "proj_image", "pair1"}


def test_fusion_module_gradient(rng):
    fm = FusionModule(4, 3, 8, 2, 4, rng)
    R_T, R_I = randt(rng, 2, 3, 4), randt(rng, 2, 3, 3)
    w = Tensor(rng.standard_normal((2, 4)))
    assert grad_check(lambda: T.sum_axis(fm(R_T, R_I).R_M * w), fm.parameters() + [R_T, R_I],
                      max_coords=12, floor=1e-6) < 1e-4

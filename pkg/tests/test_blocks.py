import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pggan import blocks as B
from pggan import ops
from pggan.tensor import GradTape, Tensor


def block_params(block, prefix="gen.b", seed=0, const=None):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in block.param_shapes().items():
        role = name.rsplit(".", 1)[1]
        if role == "gain":
            data = np.ones(shape)
        elif role in ("shift", "bias"):
            data = np.zeros(shape)
        else:
            data = np.full(shape, const) if const is not None else rng.normal(0, 0.3, size=shape)
        params[f"{prefix}.{name}"] = Tensor(data, requires_grad=True)
    return params


def test_residual_layer_order():
    blk = B.build_residual_block("b", 8, dilation=4)
    assert [l.op for l in blk.layers] == ["conv", "norm", "act", "conv", "norm"]
    assert [l.op for l in blk.post] == ["act"]
    assert blk.skip
    assert [l.dilation for l in blk.conv_layers()] == [4, 1]
    assert [l.dilation for l in B.build_residual_block("c", 8, 4).conv_layers()] == [1, 4]
    assert [l.padding for l in B.build_residual_block("c", 8, 4).conv_layers()] == [1, 4]


def test_residual_kind_validation():
    with pytest.raises(ValueError):
        B.build_residual_block("a", 8, dilation=2)
    with pytest.raises(ValueError):
        B.build_residual_block("d", 8)
    with pytest.raises(ValueError):
        B.build_residual_block("b", 8, dilation=0)


def test_conv_before_norm_has_no_bias():
    shapes = B.build_residual_block("a", 4).param_shapes()
    assert "conv1.bias" not in shapes and "conv1.weight" in shapes
    assert "conv.bias" in B.build_downsample(4, 8, norm=False).param_shapes()


@pytest.mark.parametrize("kind,d", [("a", 1), ("b", 1), ("b", 2), ("b", 8), ("c", 4)])
def test_residual_preserves_shape(kind, d):
    blk = B.build_residual_block(kind, 4, d)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 4, 16, 16)))
    assert B.run_block(blk, block_params(blk), "gen.b", x).shape == x.shape


def test_downsample_and_upsample_shapes():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 4, 16, 16)))
    down = B.build_downsample(4, 8)
    assert B.run_block(down, block_params(down), "gen.b", x).shape == (1, 8, 8, 8)
    up = B.build_upsample_iconv(4, 2)
    assert B.run_block(up, block_params(up), "gen.b", x).shape == (1, 2, 32, 32)
    tup = B.build_upsample_tconv(4, 2, kernel=4, stride=2)
    assert B.run_block(tup, block_params(tup), "gen.b", x).shape == (1, 2, 32, 32)


def test_dilation_schedule():
    assert B.dilation_schedule(4) == [1, 2, 4, 8]
    assert B.dilation_schedule(6) == [1, 2, 4, 8, 16, 32]
    with pytest.raises(ValueError):
        B.dilation_schedule(0)


# ---------------------------------------------------------------------------
# receptive field

def test_receptive_field_examples():
    assert B.receptive_field([(3, 1, 1)]).rf == 3
    assert B.receptive_field([(3, 1, 1)] * 4).rf == 9
    assert B.receptive_field([(3, 1, 2)]).rf == 5
    assert B.receptive_field([(3, 2, 1), (3, 2, 1)]).rf == 7
    assert B.receptive_field([(3, 1, d) for d in (1, 2, 4, 8)]).rf == 31
    with pytest.raises(ValueError):
        B.receptive_field([])


def _footprint(layers, size=65):
    """Width of the input region with non-zero gradient w.r.t. one central output pixel."""
    x = Tensor(np.random.default_rng(0).normal(size=(1, 1, size, size)), requires_grad=True)
    with GradTape() as tape:
        h = x
        for k, s, d in layers:
            h = ops.conv2d(h, Tensor(np.ones((1, 1, k, k))), None, s, d * (k - 1) // 2, d)
        c = h.shape[2] // 2
        mask = np.zeros(h.shape)
        mask[0, 0, c, c] = 1.0
        loss = ops.total(ops.mul(h, mask))
    tape.backward(loss)
    cols = np.nonzero(np.abs(x.grad[0, 0]).sum(axis=0))[0]
    return int(cols.max() - cols.min() + 1)


@pytest.mark.parametrize("layers", [
    [(3, 1, 1)] * 3,
    [(3, 1, 1), (3, 1, 2), (3, 1, 4)],
    [(7, 1, 1), (3, 2, 1), (3, 2, 1), (3, 1, 2)],
    [(3, 1, 1), (3, 1, 1), (3, 1, 2), (3, 1, 1), (3, 1, 4), (3, 1, 1), (3, 1, 8), (3, 1, 1)],
])
def test_receptive_field_matches_gradient_footprint(layers):
    assert B.receptive_field(layers).rf == _footprint(layers)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 3, 5]), st.just(1), st.sampled_from([1, 2, 4])), min_size=1, max_size=4))
def test_receptive_field_property(layers):
    assert B.receptive_field(layers).rf == _footprint(layers, size=81)


def test_dilated_stack_sees_more_than_plain_stack():
    dres = [B.build_residual_block("b", 4, d) for d in B.dilation_schedule(4)]
    plain = [B.build_residual_block("a", 4) for _ in range(4)]
    rf = lambda bs: B.receptive_field([l for b in bs for l in B.block_rf_layers(b)]).rf  # noqa: E731
    assert rf(dres) == 39 and rf(plain) == 17


# ---------------------------------------------------------------------------
# upsampling contrast

def _overlap_counts(size, k, s, p):
    """How many (input, tap) pairs land on each output index of a 1-D transposed conv."""
    out = (size - 1) * s - 2 * p + k
    counts = np.zeros(out, dtype=int)
    for i in range(size):
        for t in range(k):
            o = i * s + t - p
            if 0 <= o < out:
                counts[o] += 1
    return counts


def test_iconv_constant_input_gives_constant_interior():
    blk = B.build_upsample_iconv(2, 3, kernel=3, norm=False, act=None)
    out = B.run_block(blk, block_params(blk, const=0.25), "gen.b", Tensor(np.full((1, 2, 8, 8), 1.5))).data
    interior = out[:, :, 1:-1, 1:-1]
    assert interior.var() < 1e-12
    np.testing.assert_allclose(interior, 0.25 * 2 * 9 * 1.5)


def test_tconv_constant_input_matches_overlap_counts():
    blk = B.build_upsample_tconv(2, 3, kernel=3, stride=2, norm=False, act=None)
    out = B.run_block(blk, block_params(blk, const=0.25), "gen.b", Tensor(np.full((1, 2, 8, 8), 1.5))).data
    pad = blk.layers[0].padding
    c = _overlap_counts(8, 3, 2, pad)
    expected = 0.25 * 2 * 1.5 * np.outer(c, c)
    np.testing.assert_array_equal(out[0, 0], expected)
    interior = out[:, :, 2:-2, 2:-2]
    assert interior.var() > 0
    # stride-periodic: shifting by the stride reproduces the pattern
    np.testing.assert_array_equal(interior[..., 2:, :], interior[..., :-2, :])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qconvlab.errors import InvalidArgumentError, LayoutMismatchError, ShapeError
from qconvlab.tensor import (
    INTERLEAVED_PANEL,
    NCHW,
    NHWC,
    NHWC_WC,
    ElemType,
    Layout,
    Tensor,
    pack_interleaved_panels,
    pack_nchw_to_nchwc,
    pack_nhwc_wc,
    transpose_nchw_nhwc,
    unpack_nchwc_to_nchw,
)

from conftest import nchw


def test_elem_type_widths():
    assert (ElemType.FP32.nbytes, ElemType.I8.nbytes, ElemType.I32.nbytes) == (4, 1, 4)


@pytest.mark.parametrize("block", [4, 8, 16])
def test_nchwc_blocks_allowed(block):
    assert Layout.nchwc(block).name == f"NCHW{block}c"


@pytest.mark.parametrize("block", [0, 2, 12, 32])
def test_nchwc_block_rejected(block):
    with pytest.raises(InvalidArgumentError):
        Layout.nchwc(block)


def test_panel_has_four_rows():
    assert INTERLEAVED_PANEL.block == 4
    with pytest.raises(InvalidArgumentError):
        Layout("PANEL", 8)


def test_layout_parse_round_trip():
    for layout in (NCHW, NHWC, NHWC_WC, INTERLEAVED_PANEL, Layout.nchwc(8)):
        assert Layout.parse(layout.name) == layout


def test_tensor_checks_dtype_and_rank():
    with pytest.raises(InvalidArgumentError):
        Tensor(np.zeros((1, 1, 1, 1), np.float64), NCHW, ElemType.FP32)
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1), np.float32), NCHW, ElemType.FP32)


def test_pack_index_mapping():
    x = np.arange(32 * 16, dtype=np.float32).reshape(1, 32, 4, 4)
    packed = pack_nchw_to_nchwc(nchw(x), 16)
    assert packed.shape == (1, 2, 4, 4, 16)
    assert packed.layout == Layout.nchwc(16)
    assert packed.data[0, 1, 1, 2, 1] == x[0, 17, 1, 2]


def test_pack_single_block_preserves_channel_order():
    x = np.broadcast_to(np.arange(16, dtype=np.float32)[None, :, None, None], (1, 16, 2, 2))
    packed = pack_nchw_to_nchwc(nchw(x), 16)
    assert packed.shape == (1, 1, 2, 2, 16)
    np.testing.assert_array_equal(packed.data[0, 0, 1, 0], np.arange(16))


def test_pack_pads_channels_with_zeros(rng):
    x = rng.standard_normal((1, 8, 2, 2)).astype(np.float32)
    packed = pack_nchw_to_nchwc(nchw(x), 16)
    assert packed.shape == (1, 1, 2, 2, 16)
    assert not packed.data[..., 8:].any()
    np.testing.assert_array_equal(unpack_nchwc_to_nchw(packed, 8).data, x)


def test_pack_round_trip_random(rng):
    for _ in range(100):
        shape = tuple(rng.integers(1, 6, size=4))
        shape = (shape[0], int(rng.integers(1, 40)), shape[2], shape[3])
        x = rng.standard_normal(shape).astype(np.float32)
        block = int(rng.choice([4, 8, 16]))
        back = unpack_nchwc_to_nchw(pack_nchw_to_nchwc(nchw(x), block), shape[1])
        np.testing.assert_array_equal(back.data, x)


def test_pack_rejects_bad_inputs(rng):
    x = nchw(rng.standard_normal((1, 4, 2, 2)).astype(np.float32))
    with pytest.raises(LayoutMismatchError):
        pack_nchw_to_nchwc(transpose_nchw_nhwc(x), 16)
    with pytest.raises(InvalidArgumentError):
        pack_nchw_to_nchwc(x, 6)


def test_unpack_zero_case():
    z = Tensor(np.zeros((1, 1, 2, 2, 16), np.float32), Layout.nchwc(16), ElemType.FP32)
    out = unpack_nchwc_to_nchw(z, 8)
    assert out.shape == (1, 8, 2, 2) and out.layout == NCHW
    assert not out.data.any()


def test_unpack_recovers_odd_channel_count(rng):
    x = rng.standard_normal((2, 24, 5, 5)).astype(np.float32)
    back = unpack_nchwc_to_nchw(pack_nchw_to_nchwc(nchw(x), 16), 24)
    assert back.data.tobytes() == x.tobytes()


def test_unpack_capacity_error():
    z = Tensor(np.zeros((1, 1, 2, 2, 16), np.float32), Layout.nchwc(16), ElemType.FP32)
    with pytest.raises(InvalidArgumentError):
        unpack_nchwc_to_nchw(z, 17)
    with pytest.raises(LayoutMismatchError):
        unpack_nchwc_to_nchw(nchw(np.zeros((1, 1, 1, 1), np.float32)), 1)


def test_transpose_index_mapping(rng):
    x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    t = transpose_nchw_nhwc(nchw(x))
    assert t.layout == NHWC and t.shape == (1, 3, 3, 2)
    assert t.data[0, 2, 0, 1] == x[0, 1, 2, 0]


def test_transpose_is_involution(rng):
    for _ in range(100):
        x = rng.standard_normal(tuple(rng.integers(1, 6, size=4))).astype(np.float32)
        t = nchw(x)
        twice = transpose_nchw_nhwc(transpose_nchw_nhwc(t))
        assert twice.layout == NCHW
        np.testing.assert_array_equal(twice.data, x)


def test_transpose_constant_tensor_same_buffer():
    x = np.full((2, 3, 4, 5), 7.5, dtype=np.float32)
    t = transpose_nchw_nhwc(nchw(x))
    assert t.data.tobytes() == x.tobytes()


def test_transpose_rejects_blocked():
    packed = pack_nchw_to_nchwc(nchw(np.zeros((1, 4, 2, 2), np.float32)), 4)
    with pytest.raises(LayoutMismatchError):
        transpose_nchw_nhwc(packed)


def test_nhwc_wc_packing(rng):
    x = rng.standard_normal((1, 3, 4, 5)).astype(np.float32)
    t = transpose_nchw_nhwc(nchw(x))
    wc = pack_nhwc_wc(t, pad=1)
    assert wc.layout == NHWC_WC and wc.shape == (1, 6, 7 * 3)
    assert wc.data[0, 1, 1 * 3 + 2] == x[0, 2, 0, 0]
    assert wc.data[0, 4, 5 * 3 + 1] == x[0, 1, 3, 4]
    assert not wc.data[0, 0].any()


def test_interleaved_panels_pad_rows_and_depth():
    m = np.arange(1, 31, dtype=np.int8).reshape(5, 6)
    panels = pack_interleaved_panels(m)
    assert panels.layout == INTERLEAVED_PANEL and panels.shape == (2, 4, 8)
    np.testing.assert_array_equal(panels.data.reshape(8, 8)[:5, :6], m)
    assert not panels.data.reshape(8, 8)[5:].any() and not panels.data[:, :, 6:].any()


channel_shapes = st.tuples(
    st.integers(1, 3), st.integers(1, 40), st.integers(1, 6), st.integers(1, 6)
).filter(lambda s: s[1] % 16 != 0)


@settings(max_examples=60, deadline=None)
@given(shape=channel_shapes, block=st.sampled_from([4, 8, 16]), seed=st.integers(0, 2**32 - 1),
       elem=st.sampled_from([ElemType.FP32, ElemType.I8]))
def test_pack_properties(shape, block, seed, elem):
    r = np.random.default_rng(seed)
    if elem is ElemType.FP32:
        x = r.standard_normal(shape).astype(np.float32)
    else:
        x = r.integers(-128, 128, size=shape).astype(np.int8)
    t = Tensor.from_array(x, NCHW)
    packed = pack_nchw_to_nchwc(t, block)
    c = shape[1]
    flat = packed.data.transpose(0, 1, 4, 2, 3).reshape(shape[0], -1, shape[2], shape[3])
    assert not flat[:, c:].any()
    assert packed.size == shape[0] * packed.shape[1] * block * shape[2] * shape[3]
    assert packed.size - t.size == shape[0] * (packed.shape[1] * block - c) * shape[2] * shape[3]
    back = unpack_nchwc_to_nchw(packed, c)
    assert back.elem is elem
    assert back.data.tobytes() == x.tobytes()

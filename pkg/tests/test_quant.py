import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from qconvlab import kernels, quant
from qconvlab.errors import ElemTypeError, InvalidArgumentError
from qconvlab.kernels import ConvSpec
from qconvlab.quant import QuantParams, calibrate_maxabs, dequantize, dequantize_accumulator, quantize
from qconvlab.tensor import NC, NCHW, ElemType, Tensor

from conftest import nchw, oihw


def fp32(values):
    return Tensor.from_array(np.asarray(values, dtype=np.float32).reshape(1, -1), NC)


def codes(values):
    return Tensor.from_array(np.asarray(values, dtype=np.int8).reshape(1, -1), NC)


def test_calibrate_maxabs_definition():
    qp = calibrate_maxabs(fp32([-1.0, 0.5, 0.25]))
    assert qp.scale == np.float32(1.0) / np.float32(127)
    assert qp.scale.dtype == np.float32


def test_calibrate_all_zero_sentinel():
    assert calibrate_maxabs(fp32([0.0, 0.0, -0.0])).scale == 1.0


def test_calibrate_empty_is_error():
    with pytest.raises(InvalidArgumentError):
        calibrate_maxabs(np.zeros(0, np.float32))


def test_quant_params_reject_bad_scale():
    for bad in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(InvalidArgumentError):
            QuantParams(bad)


@pytest.mark.parametrize("x, expected", [(3.2, 6), (100.0, 127), (-100.0, -127), (1.25, 2), (1.75, 4), (-1.25, -2)])
def test_quantize_examples(x, expected):
    assert quantize(fp32([x]), QuantParams(0.5)).data[0, 0] == expected


def test_quantize_preserves_layout_and_shape(rng):
    x = nchw(rng.standard_normal((2, 3, 4, 5)).astype(np.float32))
    q = quantize(x, calibrate_maxabs(x))
    assert q.layout == NCHW and q.shape == x.shape and q.elem is ElemType.I8


def test_quantize_type_error():
    with pytest.raises(ElemTypeError):
        quantize(codes([1]), QuantParams(1.0))


def test_dequantize_examples():
    assert dequantize(codes([6]), QuantParams(0.5)).data[0, 0] == 3.0
    for scale in (0.001, 0.5, 3.7):
        assert dequantize(codes([0]), QuantParams(scale)).data[0, 0] == 0.0
    with pytest.raises(ElemTypeError):
        dequantize(fp32([1.0]), QuantParams(1.0))


def test_dequantize_accumulator_examples():
    acc = Tensor.from_array(np.array([[10, 0]], dtype=np.int32), NC)
    out = dequantize_accumulator(acc, 0.5, 0.1).data
    assert out.dtype == np.float32
    assert out[0, 0] == pytest.approx(0.5, rel=1e-6)
    assert out[0, 1] == 0.0
    with pytest.raises(ElemTypeError):
        dequantize_accumulator(codes([1]), 0.5, 0.1)
    with pytest.raises(InvalidArgumentError):
        dequantize_accumulator(acc, 0.0, 0.1)


def test_round_trip_within_half_step(rng):
    for _ in range(100):
        x = fp32(rng.standard_normal(int(rng.integers(1, 500))) * rng.uniform(0.01, 100))
        qp = calibrate_maxabs(x)
        err = np.abs(dequantize(quantize(x, qp), qp).data - x.data)
        assert err.max() <= qp.scale / 2 + 1e-6 * max(1.0, float(np.abs(x.data).max()))


finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)
arrays = hnp.arrays(np.float32, st.integers(1, 64), elements=finite)


@settings(max_examples=200, deadline=None)
@given(arrays)
def test_codes_stay_in_symmetric_range(x):
    q = quantize(fp32(x), calibrate_maxabs(x)).data
    assert q.min() >= -127 and q.max() <= 127


@settings(max_examples=200, deadline=None)
@given(x=arrays, scale=st.floats(1e-3, 10.0))
def test_codes_never_hit_minus_128(x, scale):
    assert quantize(fp32(x), QuantParams(scale)).data.min() >= -127


@settings(max_examples=200, deadline=None)
@given(arrays)
def test_round_trip_error_bound(x):
    qp = calibrate_maxabs(x)
    err = np.abs(dequantize(quantize(fp32(x), qp), qp).data.astype(np.float64) - x.reshape(1, -1))
    # fp32 rounding of x/scale and of q*scale adds at most a few ulps of |x|
    ulp_slack = 4 * np.finfo(np.float32).eps * np.abs(x).max()
    assert err.max() <= qp.scale / 2 + ulp_slack + 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays)
def test_calibration_sign_flip_invariant(x):
    assert calibrate_maxabs(x).scale == calibrate_maxabs(-x).scale


@settings(max_examples=200, deadline=None)
@given(x=arrays, k=st.integers(-20, 20))
def test_codes_invariant_under_power_of_two_scaling(x, k):
    c = np.float32(2.0 ** k)
    scaled = x * c
    assume(np.all(np.isfinite(scaled)) and (np.abs(x).max() == 0 or np.abs(scaled).max() > 1e-30))
    assume(np.array_equal(scaled / c, x))  # no subnormal loss
    q1 = quantize(fp32(x), calibrate_maxabs(x)).data
    q2 = quantize(fp32(scaled), calibrate_maxabs(scaled)).data
    np.testing.assert_array_equal(q1, q2)


@settings(max_examples=200, deadline=None)
@given(x=arrays, c=st.floats(1e-3, 1e3))
def test_codes_invariant_under_positive_scaling(x, c):
    # For arbitrary c the fp32 rounding of c*x and of the new scale can move a
    # quotient sitting within a few ulps of a rounding boundary; codes must agree
    # everywhere else.
    scaled = (x * np.float32(c)).astype(np.float32)
    assume(np.all(np.isfinite(scaled)))
    qp = calibrate_maxabs(x)
    assume(np.abs(x).max() > 1e-20)
    q1 = quantize(fp32(x), qp).data.ravel()
    q2 = quantize(fp32(scaled), calibrate_maxabs(scaled)).data.ravel()
    quotient = x.astype(np.float64) / float(qp.scale)
    near_tie = np.abs(np.abs(quotient - np.floor(quotient)) - 0.5) < 1e-4
    near_clip = np.abs(quotient) > 126.9
    mask = ~(near_tie | near_clip)
    np.testing.assert_array_equal(q1[mask], q2[mask])


def test_mac_error_bound_formula():
    # k * (sx/2*|w| + sw/2*|x| + sx*sw/4)
    assert quant.mac_error_bound(10, 0.5, 0.1, 2.0, 3.0) == pytest.approx(10 * (0.25 * 2 + 0.05 * 3 + 0.0125))
    assert quant.mac_error_bound(10, 0.5, 0.1, 2.0, 3.0, in_error=0.1) > quant.mac_error_bound(10, 0.5, 0.1, 2.0, 3.0)


def test_int8_conv_pipeline_within_analytic_bound(rng):
    for _ in range(50):
        c, o = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        k = int(rng.choice([1, 3]))
        h = int(rng.integers(k, 9))
        x = rng.standard_normal((1, c, h, h)).astype(np.float32) * np.float32(rng.uniform(0.1, 10))
        w = rng.uniform(-0.5, 0.5, (o, c, k, k)).astype(np.float32)
        spec = ConvSpec.from_weight(w.shape, 1, k // 2)
        reference = kernels.conv2d_direct_f32(nchw(x), oihw(w), spec).data

        qx, qw = calibrate_maxabs(x), calibrate_maxabs(w)
        acc = kernels.conv2d_nchw_spatial_pack(quantize(nchw(x), qx), quantize(oihw(w), qw), spec, ElemType.I8)
        approx = dequantize_accumulator(acc, qx.scale, qw.scale).data

        bound = quant.mac_error_bound(spec.reduction_length, qx.scale, qw.scale, np.abs(w).max(), np.abs(x).max())
        fp32_slack = 1e-5 * spec.reduction_length * np.abs(w).max() * np.abs(x).max()
        assert np.abs(approx - reference).max() <= bound + fp32_slack


@pytest.mark.parametrize("ulps", [1, 2, 317, 5000, 2**23 - 1])
def test_subnormal_range_keeps_half_step_bound(ulps):
    m = np.float32(ulps * np.finfo(np.float32).smallest_subnormal)
    x = np.array([m, -m, m / 3], dtype=np.float32)
    qp = calibrate_maxabs(x)
    assert qp.scale > 0
    q = quant.quantize_array(x, qp.scale)
    assert np.abs(q).max() <= 127
    err = np.abs(q.astype(np.float64) * float(qp.scale) - x)
    assert err.max() <= float(qp.scale) / 2 + float(np.finfo(np.float32).smallest_subnormal)

import numpy as np
import pytest

from qconvlab.tensor import NCHW, OIHW, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def nchw(arr):
    return Tensor.from_array(arr, NCHW)


def oihw(arr):
    return Tensor.from_array(arr, OIHW)


def naive_conv_int(x, w, stride, pad):
    """Integer convolution by explicit summation over every tap, int64."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x.astype(np.int64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, o, oh, ow), dtype=np.int64)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]
            out += np.einsum("nchw,oc->nohw", window, w[:, :, i, j].astype(np.int64))
    return out


def scalar_conv_f32(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=np.float32)
    for b in range(n):
        for m in range(o):
            for y in range(oh):
                for xx in range(ow):
                    acc = np.float32(0.0)
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yi = y * stride + i - pad
                                xj = xx * stride + j - pad
                                if 0 <= yi < h and 0 <= xj < wd:
                                    acc = np.float32(acc + x[b, ch, yi, xj] * w[m, ch, i, j])
                    out[b, m, y, xx] = acc
    return out

import numpy as np
import pytest

from omnimixer import tensor as T
from omnimixer.conv import (ZERO_PAD, PaddingMode, conv_transpose2d, depthwise_conv2d, pad2d,
                            upsample2x)
from omnimixer.errors import ConfigError
from omnimixer.tensor import Tensor
from reference import naive_conv_transpose, naive_depthwise

CIRC = PaddingMode("circular", "replicate")


def np_pad(x, p, mode):
    x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(p, p)], mode="wrap" if mode.horizontal == "circular" else "constant")
    vkind = "edge" if mode.vertical == "replicate" else "constant"
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(p, p), (0, 0)], mode=vkind)


class TestDepthwise:
    def test_constant_field(self):
        x = Tensor(np.full((1, 2, 5, 6), 0.5), dtype=np.float64)
        k = np.zeros((2, 3, 3))
        k[:, 0, 1], k[:, 1, 1], k[:, 2, 2] = 1.0, 2.0, 0.5
        out = depthwise_conv2d(x, Tensor(k, dtype=np.float64), None, CIRC)
        np.testing.assert_allclose(out.data, 0.5 * 3.5)

    def test_roll_equivariance(self, f64, rng):
        x = rng.standard_normal((2, 3, 5, 8))
        k = Tensor(rng.standard_normal((3, 3, 3)))
        a = depthwise_conv2d(Tensor(np.roll(x, 1, axis=-1)), k, None, CIRC).data
        b = np.roll(depthwise_conv2d(Tensor(x), k, None, CIRC).data, 1, axis=-1)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("mode", [CIRC, ZERO_PAD, PaddingMode("circular", "zero")])
    def test_forward_and_gradients_vs_naive_loops(self, f64, rng, mode):
        xv, kv, bv = rng.standard_normal((1, 4, 8, 8)), rng.standard_normal((4, 3, 3)), rng.standard_normal(4)
        g_out = rng.standard_normal((1, 4, 8, 8))
        x, k, b = (Tensor(v, requires_grad=True) for v in (xv, kv, bv))
        out = depthwise_conv2d(x, k, b, mode)
        ref = naive_depthwise(np_pad(xv, 1, mode), kv) + bv[None, :, None, None]
        assert np.max(np.abs(out.data - ref)) < 1e-10
        (out * Tensor(g_out)).sum().backward()

        # gradient oracles by explicit loops over every tap
        xp = np_pad(xv, 1, mode)
        gk = np.zeros_like(kv)
        for c in range(4):
            for a in range(3):
                for bb in range(3):
                    gk[c, a, bb] = np.sum(xp[0, c, a:a + 8, bb:bb + 8] * g_out[0, c])
        gxp = np.zeros_like(xp)
        for c in range(4):
            for i in range(8):
                for j in range(8):
                    gxp[0, c, i:i + 3, j:j + 3] += kv[c] * g_out[0, c, i, j]
        gx = np.zeros_like(xv)
        hp, wp = xp.shape[-2:]
        for i in range(hp):
            for j in range(wp):
                si, sj = i - 1, j - 1
                if mode.horizontal == "circular":
                    sj %= 8
                elif not 0 <= sj < 8:
                    continue
                if mode.vertical == "replicate":
                    si = min(max(si, 0), 7)
                elif not 0 <= si < 8:
                    continue
                gx[0, :, si, sj] += gxp[0, :, i, j]
        assert np.max(np.abs(k.grad - gk)) < 1e-10
        assert np.max(np.abs(x.grad - gx)) < 1e-10
        assert np.max(np.abs(b.grad - g_out.sum(axis=(0, 2, 3)))) < 1e-10

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            depthwise_conv2d(T.zeros((1, 2, 4, 4)), T.zeros((2, 2, 2)), None)

    def test_counts_k2hwc_macs(self):
        with T.count_macs() as box:
            depthwise_conv2d(T.zeros((1, 5, 4, 6)), T.zeros((5, 3, 3)), None)
        assert box[0] == 9 * 4 * 6 * 5


class TestPad:
    def test_circular_wraps_columns(self):
        x = Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
        out = pad2d(x, 1, 1, CIRC).data[0, 0]
        np.testing.assert_array_equal(out[1:-1, 0], [3, 7, 11])
        np.testing.assert_array_equal(out[0], out[1])

    def test_adjoint_identity(self, f64, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        y = rng.standard_normal((2, 3, 6, 9))
        xt = Tensor(x, requires_grad=True)
        (pad2d(xt, 1, 2, CIRC) * Tensor(y)).sum().backward()
        lhs = np.sum(np_pad_hw(x, 1, 2) * y)
        assert abs(lhs - np.sum(x * xt.grad)) < 1e-12


def np_pad_hw(x, ph, pw):
    x = np.pad(x, [(0, 0), (0, 0), (0, 0), (pw, pw)], mode="wrap")
    return np.pad(x, [(0, 0), (0, 0), (ph, ph), (0, 0)], mode="edge")


class TestUpsample:
    def test_matches_bilinear_oracle(self, f64, rng):
        x = rng.standard_normal((2, 3, 4, 6))
        out = upsample2x(Tensor(x)).data
        h, w = 4, 6
        ref = np.zeros((2, 3, 8, 12))
        for i in range(8):
            for j in range(12):
                sy = min(max((i + 0.5) / 2 - 0.5, 0.0), h - 1)
                sx = (j + 0.5) / 2 - 0.5
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                fy, fx = sy - y0, sx - x0
                y1 = min(y0 + 1, h - 1)
                x0w, x1w = x0 % w, (x0 + 1) % w
                ref[..., i, j] = ((1 - fy) * ((1 - fx) * x[..., y0, x0w] + fx * x[..., y0, x1w])
                                  + fy * ((1 - fx) * x[..., y1, x0w] + fx * x[..., y1, x1w]))
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_constant_preserved(self):
        out = upsample2x(Tensor(np.full((1, 1, 3, 4), 0.25))).data
        np.testing.assert_allclose(out, 0.25)

    def test_adjoint_identity(self, f64, rng):
        x = rng.standard_normal((1, 2, 3, 4))
        y = rng.standard_normal((1, 2, 6, 8))
        xt = Tensor(x, requires_grad=True)
        out = upsample2x(xt)
        (out * Tensor(y)).sum().backward()
        assert abs(np.sum(out.data * y) - np.sum(x * xt.grad)) < 1e-12


class TestConvTranspose:
    def test_forward_matches_scatter_oracle(self, f64, rng):
        x = rng.standard_normal((2, 3, 3, 4))
        w = rng.standard_normal((3, 2 * 16))
        b = rng.standard_normal(2)
        out = conv_transpose2d(Tensor(x), Tensor(w), Tensor(b)).data
        assert out.shape == (2, 2, 6, 8)
        assert np.max(np.abs(out - naive_conv_transpose(x, w, b, 2))) < 1e-10

    def test_counts_macs(self):
        with T.count_macs() as box:
            conv_transpose2d(T.zeros((1, 3, 2, 2)), T.zeros((3, 5 * 16)), None)
        assert box[0] == 4 * 3 * 5 * 16

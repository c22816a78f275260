import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from widr import kernels
from oracles import conv2d_reference

needs_ext = pytest.mark.skipif(kernels._ext is None, reason="compiled backend not built")


def _conv(x, w):
    n, _, h, wd = x.shape
    oh, ow = (h - 1) // 2 + 1, (wd - 1) // 2 + 1
    out = kernels.im2col(x) @ w.reshape(w.shape[0], -1).T
    return out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)


class TestIm2col:
    @pytest.mark.parametrize("shape", [(1, 1, 5, 5), (2, 3, 8, 8), (2, 2, 7, 6), (1, 4, 1, 1)])
    def test_matches_direct_convolution(self, rng, shape):
        x = rng.normal(size=shape)
        w = rng.normal(size=(5, shape[1], 3, 3))
        np.testing.assert_allclose(_conv(x, w), conv2d_reference(x, w), rtol=1e-12, atol=1e-12)

    def test_column_layout(self):
        x = np.arange(2 * 4 * 4, dtype=float).reshape(1, 2, 4, 4)
        cols = kernels.im2col(x)
        assert cols.shape == (4, 18)
        # output (1, 1) centres on input (2, 2); column c*9 + ki*3 + kj
        np.testing.assert_array_equal(cols[3, 9:18].reshape(3, 3), x[0, 1, 1:4, 1:4])
        # top-left output window sees padding in its first row and column
        np.testing.assert_array_equal(cols[0, 0:3], [0, 0, 0])

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_col2im_is_adjoint(self, n, c, h, w, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, c, h, w))
        cols = kernels.im2col(x)
        y = rng.normal(size=cols.shape)
        lhs = np.sum(cols * y)
        rhs = np.sum(x * kernels.col2im(y, x.shape))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestAssignNearest:
    def test_ties_go_to_lowest_index(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        c = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        labels, d2 = kernels.assign_nearest(x, c)
        np.testing.assert_array_equal(labels, [0, 0])
        np.testing.assert_array_equal(d2, [1.0, 0.0])

    def test_against_full_distance_matrix(self, rng):
        x = rng.normal(size=(50, 6))
        c = rng.normal(size=(7, 6))
        full = ((x[:, None, :] - c[None]) ** 2).sum(-1)
        labels, d2 = kernels.assign_nearest(x, c)
        np.testing.assert_array_equal(labels, full.argmin(1))
        np.testing.assert_allclose(d2, full.min(1), rtol=1e-12)


class TestVladAccumulate:
    def test_sums_residuals(self):
        x = np.array([[1.0, 1.0], [3.0, 1.0], [10.0, 0.0]])
        c = np.array([[0.0, 0.0], [10.0, 1.0]])
        out = kernels.vlad_accumulate(x, c, np.array([0, 0, 1]))
        np.testing.assert_array_equal(out, [[4.0, 2.0], [0.0, -1.0]])

    def test_unused_centroid_row_is_zero(self, rng):
        x = rng.normal(size=(5, 3))
        out = kernels.vlad_accumulate(x, np.zeros((3, 3)), np.zeros(5, dtype=np.int64))
        np.testing.assert_array_equal(out[1:], 0.0)


@needs_ext
class TestBackendsAgree:
    """The compiled loops must reproduce the numpy fallbacks bit for bit."""

    def test_im2col(self, rng):
        x = rng.normal(size=(3, 4, 11, 9))
        np.testing.assert_array_equal(kernels._ext.im2col(x, 3, 2, 1), kernels.py_im2col(x, 3, 2, 1))

    def test_col2im(self, rng):
        shape = (3, 4, 11, 9)
        cols = rng.normal(size=(3 * 6 * 5, 36))
        np.testing.assert_array_equal(
            kernels._ext.col2im(cols, *shape, 3, 2, 1), kernels.py_col2im(cols, shape, 3, 2, 1)
        )

    def test_assign_nearest(self, rng):
        x = rng.normal(size=(200, 17))
        c = rng.normal(size=(9, 17))
        la, da = kernels._ext.assign_nearest(x, c)
        lb, db = kernels.py_assign_nearest(x, c)
        np.testing.assert_array_equal(la, lb)
        np.testing.assert_array_equal(da, db)

    def test_vlad_accumulate(self, rng):
        x = rng.normal(size=(200, 17))
        c = rng.normal(size=(9, 17))
        labels = rng.integers(0, 9, size=200)
        np.testing.assert_array_equal(
            kernels._ext.vlad_accumulate(x, c, labels), kernels.py_vlad_accumulate(x, c, labels)
        )

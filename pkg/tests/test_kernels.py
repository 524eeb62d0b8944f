import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airtemp import _kernels_py as py
from airtemp import kernels

cy = pytest.importorskip("airtemp._kernels", reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9))
def test_im2col_col2im_parity(seed, c, h, w):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    np.testing.assert_array_equal(cy.im2col3x3(x), py.im2col3x3(x))
    cols = rng.standard_normal((c * 9, h * w)).astype(np.float32)
    np.testing.assert_allclose(cy.col2im3x3(cols, c, h, w), py.col2im3x3(cols, c, h, w), atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_masked_l1_parity(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 8, 3))
    pred = rng.standard_normal(shape).astype(np.float32)
    obs = rng.standard_normal(shape).astype(np.float32)
    mask = rng.random(shape) < 0.6
    mask.flat[0] = True
    lc, gc, nc = cy.masked_l1(pred, obs, mask)
    lp, gp, np_ = py.masked_l1(pred, obs, mask)
    assert nc == np_ == mask.sum()
    assert lc == pytest.approx(lp, rel=1e-9)
    np.testing.assert_array_equal(gc, gp)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
def test_select_ranks_parity(seed, k):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((k, 3, 4)).astype(np.float32)
    values[rng.random(values.shape) < 0.2] = 0.5          # ties
    lo, hi = sorted(rng.choice(k, 2, replace=False))
    for a, b in zip(cy.select_ranks(values, lo, hi), py.select_ranks(values, lo, hi)):
        np.testing.assert_array_equal(a, b)

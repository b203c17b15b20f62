import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from tailoredas.errors import InvalidN
from tailoredas.kernels import EPANECHNIKOV, KernelSpec, default_bandwidths, kernel_1d, kernel_2d

BIWEIGHT = KernelSpec("biweight")


@pytest.mark.parametrize("u, expected", [(0.0, 0.75), (1.0, 0.0), (0.5, 0.5625), (-1.7, 0.0)])
def test_epanechnikov_values(u, expected):
    assert kernel_1d(EPANECHNIKOV, u) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("u, v, expected", [(0, 0, 0.5625), (1, 0, 0.0), (0.5, 0.5, 0.31640625)])
def test_product_kernel_values(u, v, expected):
    assert kernel_2d(EPANECHNIKOV, u, v) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("spec", [EPANECHNIKOV, BIWEIGHT, KernelSpec("epanechnikov", 4), KernelSpec("biweight", 4)])
def test_kernels_integrate_to_one(spec):
    total, _ = quad(lambda u: float(kernel_1d(spec, u)), -1, 1)
    assert abs(total - 1) < 1e-6


@pytest.mark.parametrize("spec", [EPANECHNIKOV, BIWEIGHT])
def test_second_moment_nonzero_for_order_two(spec):
    m2, _ = quad(lambda u: u**2 * float(kernel_1d(spec, u)), -1, 1)
    assert m2 > 0


def test_fourth_order_kernel_kills_second_moment():
    m2, _ = quad(lambda u: u**2 * float(kernel_1d(KernelSpec("epanechnikov", 4), u)), -1, 1)
    assert abs(m2) < 1e-10


def test_bad_kernel_spec():
    with pytest.raises(ValueError):
        KernelSpec("gaussian")
    with pytest.raises(ValueError):
        KernelSpec("epanechnikov", 3)


@given(st.floats(-3, 3), st.sampled_from([EPANECHNIKOV, BIWEIGHT]))
def test_symmetric_and_nonnegative(u, spec):
    assert kernel_1d(spec, u) == kernel_1d(spec, -u)
    assert kernel_1d(spec, u) >= 0


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_2d_is_exact_product(u, v):
    assert kernel_2d(EPANECHNIKOV, u, v) == kernel_1d(EPANECHNIKOV, u) * kernel_1d(EPANECHNIKOV, v)


def test_vectorised_evaluation():
    u = np.linspace(-2, 2, 9)
    out = kernel_1d(EPANECHNIKOV, u)
    assert out.shape == u.shape
    assert np.all(out[np.abs(u) >= 1] == 0)


def test_default_bandwidths():
    h, _ = default_bandwidths(100_000, 1.0)
    assert h == pytest.approx(0.1, rel=1e-12)
    _, ht = default_bandwidths(64, 1.0)
    assert ht == pytest.approx(0.5, rel=1e-12)
    h, ht = default_bandwidths(500, 1.0)
    assert h == pytest.approx(500**-0.2, rel=1e-12)
    assert h == pytest.approx(0.28854, abs=1e-5)
    h2, ht2 = default_bandwidths(500, 10.0)
    assert (h2, ht2) == pytest.approx((10 * h, 10 * ht))


def test_bandwidth_errors():
    with pytest.raises(InvalidN):
        default_bandwidths(1)
    with pytest.raises(ValueError):
        default_bandwidths(10, 0.0)
    assert math.isfinite(default_bandwidths(2)[0])

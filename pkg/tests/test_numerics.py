import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harqdelay.numerics import (
    PolynomialCoefficients,
    lower_incomplete_gamma,
    regularized_lower_gamma,
    spectral_radius,
    unique_positive_root,
)


@pytest.mark.parametrize("m", [1, 2, 3, 5, 10, 20])
@pytest.mark.parametrize("x", [1e-8, 1e-3, 0.1, 0.7654, 1.0, 3.0, 10.0, 40.0])
def test_gamma_matches_mpmath(m, x):
    ref = float(mpmath.gammainc(m, 0, x))
    assert lower_incomplete_gamma(m, x) == pytest.approx(ref, rel=1e-12)


def test_gamma_order_one_is_one_minus_exp():
    # the value frozen for the threshold at n = 82 bits
    assert lower_incomplete_gamma(1, 0.7654) == pytest.approx(0.5348521653763249, rel=1e-13)


def test_gamma_tiny_argument_has_no_cancellation():
    # gamma(3, x) ~ x^3 / 3 for small x
    assert lower_incomplete_gamma(3, 1e-6) == pytest.approx(1e-18 / 3, rel=1e-9)


def test_gamma_at_zero():
    assert lower_incomplete_gamma(4, 0.0) == 0.0


@pytest.mark.parametrize("m", [0, -1, 1.5])
def test_gamma_rejects_bad_order(m):
    with pytest.raises(ValueError):
        lower_incomplete_gamma(m, 1.0)


def test_gamma_rejects_negative_argument():
    with pytest.raises(ValueError):
        lower_incomplete_gamma(2, -0.1)


@given(st.integers(1, 15), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_regularized_gamma_is_a_cdf(m, x, y):
    lo, hi = sorted((x, y))
    a, b = regularized_lower_gamma(m, lo), regularized_lower_gamma(m, hi)
    assert 0.0 <= a <= b <= 1.0 + 1e-15


@given(st.integers(1, 12), st.floats(1e-3, 30.0))
def test_gamma_order_recursion(m, x):
    # gamma(m+1, x) = m gamma(m, x) - x^m e^-x
    lhs = lower_incomplete_gamma(m + 1, x)
    rhs = m * lower_incomplete_gamma(m, x) - x**m * math.exp(-x)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-300)


coeffs = st.lists(st.floats(0.0, 50.0), min_size=1, max_size=8).filter(lambda b: any(v > 1e-6 for v in b))


@given(coeffs)
def test_root_matches_companion_eigenvalues(b):
    poly = PolynomialCoefficients(tuple(b))
    roots = np.roots(poly.numpy_coefficients())
    ref = max(r.real for r in roots if abs(r.imag) < 1e-7 * max(1.0, abs(r)) and r.real > 0)
    assert unique_positive_root(poly) == pytest.approx(ref, rel=1e-9)


@given(coeffs)
def test_root_sign_pattern(b):
    poly = PolynomialCoefficients(tuple(b))
    y = unique_positive_root(poly)
    assert poly(0.5 * y) < 0 < poly(2.0 * y)
    assert y <= 1.0 + max(poly.b)


def test_root_of_known_quadratic():
    # y^2 - y - 1: golden ratio
    assert unique_positive_root(PolynomialCoefficients((1.0, 1.0))) == pytest.approx((1 + 5**0.5) / 2, rel=1e-14)


@pytest.mark.parametrize("b", [(), (0.0, 0.0), (1.0, -0.5)])
def test_polynomial_validation(b):
    with pytest.raises(ValueError):
        PolynomialCoefficients(b)


def test_polynomial_derivative():
    poly = PolynomialCoefficients((2.0, 0.5, 3.0))
    h = 1e-6
    num = (poly(1.3 + h) - poly(1.3 - h)) / (2 * h)
    assert poly.derivative(1.3) == pytest.approx(num, rel=1e-7)


def test_spectral_radius_known_values():
    assert spectral_radius(np.eye(2)) == pytest.approx(1.0, rel=1e-13)
    assert spectral_radius([[0.25, 1.0], [0.25, 0.0]]) == pytest.approx(0.6403882032022076, rel=1e-12)
    assert spectral_radius(np.diag([0.3, 0.7])) == pytest.approx(0.7, rel=1e-12)


def test_spectral_radius_cyclic_matrix():
    # all eigenvalues on the unit circle; plain power iteration would oscillate
    C = np.roll(np.eye(5), 1, axis=0)
    assert spectral_radius(C) == pytest.approx(1.0, rel=1e-12)


@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_spectral_radius_matches_eigvals(M, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, (M, M)) * (rng.uniform(size=(M, M)) < 0.7)
    A += np.eye(M) * 1e-3  # keep it irreducible-ish and nonzero
    ref = np.abs(np.linalg.eigvals(A)).max()
    assert spectral_radius(A) == pytest.approx(ref, rel=1e-9)


def test_spectral_radius_rejects_negative_and_nonsquare():
    with pytest.raises(ValueError):
        spectral_radius([[1.0, -1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_gamma_order_two_closed_form():
    assert lower_incomplete_gamma(2, 1.0) == pytest.approx(1 - 2 / math.e, rel=1e-14)


@pytest.mark.parametrize("b, root", [((1.0, 4.0), (1 + 17**0.5) / 2), ((3.0,), 3.0), ((0.0, 0.0, 1.0), 1.0)])
def test_root_examples(b, root):
    assert unique_positive_root(PolynomialCoefficients(b)) == pytest.approx(root, rel=1e-13)

from fractions import Fraction

from hypothesis import given, settings, strategies as st

from dualfields import series

fracs = st.fractions(min_value=-3, max_value=3, max_denominator=7)


@given(st.lists(fracs, min_size=1, max_size=6).map(lambda c: [Fraction(1)] + c))
@settings(max_examples=60, deadline=None)
def test_inverse_roundtrip(coeffs):
    order = len(coeffs) - 1
    inv = series.inverse(coeffs, order)
    assert series.mul(coeffs, inv, order) == [1] + [0] * order


@given(st.lists(fracs, min_size=1, max_size=5), st.integers(0, 6))
@settings(max_examples=60, deadline=None)
def test_power_matches_repeated_product(tail, n):
    coeffs = [Fraction(1)] + tail
    order = len(coeffs) - 1
    expected = [Fraction(1)] + [Fraction(0)] * order
    for _ in range(n):
        expected = series.mul(expected, coeffs, order)
    assert series.power(coeffs, n, order) == expected


@given(st.lists(fracs, min_size=1, max_size=5))
@settings(max_examples=40, deadline=None)
def test_exp_log_inverse(tail):
    coeffs = [Fraction(1)] + tail
    order = len(coeffs) - 1
    assert series.exp_of(series.log_of(coeffs, order), order) == series.pad(coeffs, order)


def test_binomial_series_integer_exponent():
    # (1 + 2t)^3 = 1 + 6t + 12t^2 + 8t^3
    assert series.binomial_series(Fraction(2), Fraction(3), 4) == [1, 6, 12, 8, 0]


def test_exponential_series():
    assert series.exponential_series(Fraction(-1), 3) == [1, -1, Fraction(1, 2), Fraction(-1, 6)]

"""Truncated power series over an arbitrary scalar field.

Coefficient lists are plain Python lists so the same code runs on
``fractions.Fraction`` (exact identity checks) and ``float``.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence


def pad(a: Sequence, order: int, zero=0) -> list:
    a = list(a[: order + 1])
    return a + [zero * 1] * (order + 1 - len(a))


def mul(a: Sequence, b: Sequence, order: int) -> list:
    """Product of two series truncated after ``t**order``."""
    zero = (a[0] if a else 0) * 0
    out = [zero] * (order + 1)
    for i, x in enumerate(a[: order + 1]):
        if not x:
            continue
        for j, y in enumerate(b[: order + 1 - i]):
            out[i + j] += x * y
    return out


def inverse(a: Sequence, order: int) -> list:
    """Multiplicative inverse; requires a nonzero constant term."""
    a = pad(a, order, a[0] * 0)
    if not a[0]:
        raise ZeroDivisionError("series with zero constant term is not invertible")
    b = [1 / a[0] if not isinstance(a[0], int) else Fraction(1, a[0])]
    for m in range(1, order + 1):
        acc = a[1] * b[m - 1]
        for j in range(2, m + 1):
            acc += a[j] * b[m - j]
        b.append(-acc * b[0])
    return b


def exp_of(p: Sequence, order: int) -> list:
    """``exp(p(t))`` for a series with ``p[0] == 0``.

    Uses ``m E_m = sum_q q p_q E_{m-q}``, which only divides by integers.
    """
    p = pad(p, order, p[0] * 0 if len(p) else 0)
    one = p[0] * 0 + 1
    out = [one]
    for m in range(1, order + 1):
        acc = p[1] * out[m - 1]
        for q in range(2, m + 1):
            acc += q * p[q] * out[m - q]
        out.append(acc / m)
    return out


def log_of(a: Sequence, order: int) -> list:
    """``log(a(t))`` for a series with ``a[0] == 1``."""
    a = pad(a, order, a[0] * 0)
    if a[0] != 1:
        raise ValueError("log_of needs a unit constant term")
    zero = a[0] * 0
    out = [zero] * (order + 1)
    # a' = a * l'  =>  m a_m = sum_{q=1}^m q l_q a_{m-q}
    for m in range(1, order + 1):
        acc = m * a[m]
        for q in range(1, m):
            acc -= q * out[q] * a[m - q]
        out[m] = acc / m
    return out


def power(a: Sequence, n: int, order: int) -> list:
    """``a(t)**n`` for a nonnegative integer ``n`` by repeated squaring."""
    one = (a[0] * 0) + 1
    result = [one] + [one * 0] * order
    base = pad(a, order, a[0] * 0)
    while n:
        if n & 1:
            result = mul(result, base, order)
        n >>= 1
        if n:
            base = mul(base, base, order)
    return result


def binomial_series(a, beta, order: int) -> list:
    """Coefficients of ``(1 + a t)**beta`` for any rational ``beta``."""
    out = [a * 0 + 1]
    c = a * 0 + 1
    for m in range(1, order + 1):
        c = c * (beta - m + 1) / m
        out.append(c * a**m)
    return out


def exponential_series(a, order: int) -> list:
    """Coefficients of ``exp(a t)``."""
    out = [a * 0 + 1]
    for m in range(1, order + 1):
        out.append(out[-1] * a / m)
    return out

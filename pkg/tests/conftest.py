from fractions import Fraction

import pytest

from dualfields.core_model import ModelSpec, Torus, nearest_neighbor_kernel

IRW = ModelSpec(0, Fraction(1), Fraction(1, 2))
SEP2 = ModelSpec(-1, Fraction(2), Fraction(1, 2))
SIP1 = ModelSpec(1, Fraction(1), Fraction(1, 2))
MODELS = [IRW, SEP2, SIP1]


@pytest.fixture(params=MODELS, ids=lambda s: s.name)
def spec(request):
    return request.param


@pytest.fixture
def nn1():
    return nearest_neighbor_kernel(1)


@pytest.fixture
def ring5():
    return Torus(1, 5)


# criterion number -> (verdict, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"CRITERION {number:2d}: {verdict}  {detail}")

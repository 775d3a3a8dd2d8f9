import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualfields.core_model import (
    DualConfig, EmptySupport, InvalidModel, ModelError, ModelSpec, OutOfSupport, ReducibleKernel,
    SymmetryViolation, Torus, ZeroAtOriginViolation, as_fraction, build_kernel, factorial_moment,
    lambda_weight, nearest_neighbor_kernel, nu_marginal_pmf, nu_pmf_array, nu_sample, pi_weight,
    raw_moments, Lambda_of, N_of, Pi_of, xi_of_coords,
)

from conftest import IRW, SEP2, SIP1


def test_as_fraction_parses_strings():
    assert as_fraction("3/4") == Fraction(3, 4)
    assert as_fraction(2) == 2


@pytest.mark.parametrize("args", [(2, 1, "1/2"), (-1, "3/2", "1/2"), (-1, 2, 2), (1, 0, 1), (0, 1, 0)])
def test_invalid_models_rejected(args):
    with pytest.raises(InvalidModel):
        ModelSpec(*args)


def test_model_properties():
    assert SEP2.cap == 2 and SIP1.cap is None
    assert SIP1.mobility == Fraction(3, 4)
    assert SEP2.mobility == Fraction(3, 4)
    assert IRW.mobility == Fraction(1, 2)


def test_nearest_neighbour_kernel():
    k = nearest_neighbor_kernel(2)
    assert k.chi == Fraction(1, 2)  # sum_r r_1^2 p(r)
    assert sum(k.weights.values()) == 1
    assert k.moment((0,)) == 0 and k.moment((0, 1)) == 0


def test_kernel_errors():
    with pytest.raises(SymmetryViolation):
        build_kernel(1, 1, {1: "2/3", -1: "1/3"})
    with pytest.raises(ZeroAtOriginViolation):
        build_kernel(1, 1, {0: 1, 1: 1, -1: 1})
    with pytest.raises(EmptySupport):
        build_kernel(1, 1, {1: 0, -1: 0})
    with pytest.raises(ReducibleKernel):
        build_kernel(1, 2, {2: 1, -2: 1})
    with pytest.raises(ModelError):
        build_kernel(1, 1, {2: 1, -2: 1})


def test_kernel_normalises_and_hashes():
    a = build_kernel(1, 2, {1: 2, -1: 2, 2: 1, -2: 1})
    b = build_kernel(1, 2, {-2: "1/6", 2: "1/6", 1: "1/3", -1: "1/3"})
    assert a == b and hash(a) == hash(b)
    assert a.chi == Fraction(2, 3) + Fraction(1, 3) * 4


def test_torus_checks():
    with pytest.raises(ModelError):
        Torus(1, 2).check_kernel(nearest_neighbor_kernel(1))
    t = Torus(2, 4)
    assert t.V == 16
    assert t.site(t.coords(7)) == 7
    assert t.shift(t.site((3, 0)), (1, 0)) == t.site((0, 0))


@pytest.mark.parametrize("spec", [IRW, SEP2, SIP1], ids=lambda s: s.name)
def test_marginal_is_normalised_with_mean_rho(spec):
    p = nu_pmf_array(spec, 200)
    assert p.sum() == pytest.approx(1.0, abs=1e-14)
    assert (np.arange(len(p)) * p).sum() == pytest.approx(float(spec.rho), abs=1e-12)
    assert raw_moments(spec, 1)[1] == spec.rho


def test_factorial_moments_exact():
    assert factorial_moment(IRW, 3) == Fraction(1, 8)
    # Binomial(2, 1/4): E[eta(eta-1)] = 2 * 1 * (1/4)^2
    assert factorial_moment(SEP2, 2) == Fraction(1, 8)
    # NegBin(alpha=1): E[(eta)_j] = (alpha)_j (rho/alpha)^j
    assert factorial_moment(SIP1, 3) == Fraction(6, 8)


def test_nu_sample_deterministic_and_capped():
    t = Torus(1, 64)
    a = nu_sample(SEP2, t, 3)
    assert (a == nu_sample(SEP2, t, 3)).all()
    assert a.max() <= 2
    with pytest.raises(OutOfSupport):
        nu_marginal_pmf(SEP2, 3)


def test_lambda_and_pi_weights():
    assert [lambda_weight(SEP2, m) for m in range(3)] == [1, 2, 1]
    assert [lambda_weight(IRW, m) for m in range(4)] == [1, 1, Fraction(1, 2), Fraction(1, 6)]
    assert lambda_weight(SIP1, 3) == 1
    assert lambda_weight(SIP1, 3, "printed") == 36
    assert pi_weight(IRW, 3) == 1
    with pytest.raises(OutOfSupport):
        lambda_weight(SEP2, 3)


def test_dual_config_behaviour():
    xi = DualConfig.from_sites([3, 1, 3])
    assert dict(xi) == {1: 1, 3: 2}
    assert xi.order == 3 and xi.get(5) == 0
    assert xi.moved(3, 4) == DualConfig.from_sites([1, 3, 4])
    assert hash(xi) == hash(xi_of_coords((3, 3, 1)))
    assert N_of(xi) == 3  # 3! / (1! 2!) orderings
    with pytest.raises(OutOfSupport):
        DualConfig.from_sites([0, 0, 0]).check(SEP2)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=4))
@settings(max_examples=50, deadline=None)
def test_coordinate_measure_identity(x):
    # Pi(x) = k! Lambda(xi(x)) / N(xi(x)) with N the number of orderings
    xi = xi_of_coords(x)
    k = len(x)
    assert Pi_of(SIP1, x) == math.factorial(k) * Lambda_of(SIP1, xi) / N_of(xi)

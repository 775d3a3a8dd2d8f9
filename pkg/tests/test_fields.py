from fractions import Fraction

import numpy as np
import pytest

from dualfields.core_model import Torus, nearest_neighbor_kernel, nu_sample
from dualfields.dynamics import replica_seed, simulate
from dualfields.fields import (
    GridBeyondHorizon, PowerSumField, TestFunction, carre_du_champ_definition,
    carre_du_champ_exact, drift_closed, drift_dual_form, drift_exact, dynkin_martingale,
    field_eval, field_eval_coordinate_form, field_eval_enumerated, field_eval_mixed,
    grad_decomposition, grad_field, gradient_energy, qv_closed, site_values, test_function,
)
from dualfields.orthopoly import default_table

from conftest import IRW, SEP2, SIP1

NN = nearest_neighbor_kernel(1)
BUMP = TestFunction("bump", value=Fraction(16))
MODELS = [IRW, SEP2, SIP1]


def same(a, b):
    """Exact equality for rationals; the scale n^{-kd/2} is irrational for odd kd."""
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return float(a) == pytest.approx(float(b), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s.name)
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_field_forms_agree_exactly(spec, k):
    t = Torus(1, 5)
    table = default_table(spec)
    eta = np.array([1, 0, 2, 1, 0]) if spec.cap else np.array([3, 0, 2, 1, 1])
    y = field_eval(k, table, BUMP, eta, t, exact=True).value
    assert same(y, field_eval_enumerated(k, table, BUMP, eta, t))
    if k == 0:
        assert y == 1
    if k >= 1:
        assert same(y, field_eval_mixed(k, table, BUMP, BUMP, eta, t, exact=True))
        pv = BUMP.exact_values(t)

        def f(x):
            out = Fraction(1)
            for s in x:
                out *= pv[s]
            return out

        import math
        assert same(field_eval_coordinate_form(k, table, f, eta, t), math.factorial(k) * y)


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s.name)
def test_drift_and_carre_du_champ_identities(spec):
    t = Torus(1, 5)
    table = default_table(spec)
    eta = np.array([1, 2, 0, 1, 1]) if spec.cap else np.array([2, 0, 1, 3, 0])
    for k in (1, 2, 3):
        assert drift_exact(k, table, BUMP, eta, t, NN, exact=True) == drift_dual_form(k, table, BUMP, eta, t, NN)
        assert carre_du_champ_exact(k, table, BUMP, eta, t, NN, exact=True) == \
            carre_du_champ_definition(k, table, BUMP, eta, t, NN, exact=True)


def test_gradient_decomposition_exact():
    t = Torus(1, 5)
    for spec in MODELS:
        table = default_table(spec)
        eta = np.array([1, 0, 2, 1, 0])
        for k in (1, 2, 3):
            assert same(grad_field(k, table, BUMP, eta, 0, 1, t, exact=True),
                        grad_decomposition(k, table, BUMP, eta, 0, 1, t, exact=True))


def test_constant_function_has_zero_drift_and_gradient():
    t = Torus(1, 8)
    one = TestFunction("constant")
    table = default_table(SIP1)
    eta = nu_sample(SIP1, t, 1)
    assert drift_exact(2, table, one, eta, t, NN) == pytest.approx(0, abs=1e-12)
    assert drift_closed(2, table, one, eta, t, NN) == 0
    assert qv_closed(2, table, one, eta, t, NN) == 0


def test_test_function_derivatives():
    u = np.linspace(0, 1, 7, endpoint=False)[:, None]
    for kind in ("sin", "cos", "gauss"):
        f = TestFunction(kind)
        h = 1e-4
        fd = (f.phi(u + h) - f.phi(u - h)) / (2 * h)
        assert np.allclose(f.grad(u)[:, 0], fd, atol=1e-6)
        lap = (f.phi(u + h) - 2 * f.phi(u) + f.phi(u - h)) / h**2
        assert np.allclose(f.laplace(u), lap, atol=1e-4)
    assert test_function({"kind": "sin", "freq": 2}).freq == 2
    assert site_values(BUMP, Torus(1, 4), exact=True)[2] == 1


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s.name)
def test_power_sum_field_matches_tree_path(spec):
    t = Torus(1, 16)
    phi = TestFunction("sin")
    table = default_table(spec)
    eta = nu_sample(spec, t, 11)
    for k in (1, 2, 3):
        psf = PowerSumField(spec, NN, t, table, phi, k)
        v = psf.values(eta)
        assert v["Y"] == pytest.approx(field_eval(k, table, phi, eta, t).value, rel=1e-11, abs=1e-12)
        assert v["drift"] == pytest.approx(drift_exact(k, table, phi, eta, t, NN), rel=1e-10, abs=1e-10)
        assert v["cdc"] == pytest.approx(carre_du_champ_exact(k, table, phi, eta, t, NN), rel=1e-10)
        assert v["closed"] == pytest.approx(drift_closed(k, table, phi, eta, t, NN), rel=1e-10, abs=1e-12)
        assert v["qv_closed"] == pytest.approx(qv_closed(k, table, phi, eta, t, NN), rel=1e-10, abs=1e-12)
        batch = np.stack([eta, nu_sample(spec, t, 12)])
        assert psf.field(batch)[0] == pytest.approx(v["Y"], rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s.name)
def test_fast_path_matches_replayed_martingale(spec):
    t = Torus(1, 12)
    phi = TestFunction("sin")
    table = default_table(spec)
    k, T = 2, 0.05
    seed = replica_seed(1, 0)
    eta = nu_sample(spec, t, seed)
    grid = np.array([0.0, T / 2, T])
    traj = simulate(spec, NN, t, eta, T, t.n, seed)
    ms = dynkin_martingale(k, table, phi, traj, grid, t, NN)
    out = PowerSumField(spec, NN, t, table, phi, k).run(eta, seed, grid)
    assert np.allclose(out[:, 0], ms.Y, rtol=1e-9, atol=1e-9)
    assert np.allclose(out[:, 1], ms.drift_integral, rtol=1e-8, atol=1e-9)
    assert np.allclose(out[:, 2], ms.cdc_integral, rtol=1e-8, atol=1e-9)
    assert ms.M[0] == 0
    with pytest.raises(GridBeyondHorizon):
        dynkin_martingale(k, table, phi, traj, [2 * T], t, NN)


def test_gradient_energy_riemann_sum():
    t = Torus(1, 64)
    G, per_site, _ = gradient_energy(TestFunction("sin"), t, NN)
    # sum_x |phi'(x/n)|^2 p(+-1) * 1 = sum_x (2 pi)^2 cos^2 = n (2 pi)^2 / 2
    assert G == pytest.approx(64 * (2 * np.pi) ** 2 / 2, rel=1e-12)
    assert per_site.shape == (64,)


def test_empty_configuration_martingale_is_trivial():
    t = Torus(1, 8)
    table = default_table(SIP1)
    traj = simulate(SIP1, NN, t, np.zeros(8, dtype=int), 0.1, 8, 3)
    ms = dynkin_martingale(0, table, TestFunction("sin"), traj, [0, 0.1], t, NN)
    assert np.all(ms.M == 0)

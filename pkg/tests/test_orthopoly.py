from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dualfields import series
from dualfields.core_model import ModelSpec, Torus, nearest_neighbor_kernel, DualConfig
from dualfields.dynamics import check_duality_pointwise
from dualfields.orthopoly import (
    ProductDuality, TableOverflow, build_generating_pair, build_table, candidate_pairs,
    default_table, dual_configs, exact_gram, gram_schmidt_oracle, poly_in_n, resolve_convention,
    truncated_gram,
)

from conftest import IRW, SEP2, SIP1

SEP1 = ModelSpec(-1, 1, Fraction(1, 2))


def test_selected_conventions():
    irw, sep, sip = (resolve_convention(s) for s in (IRW, SEP2, SIP1))
    assert (irw.source, irw.sign_e, irw.sign_h) == ("ansatz", 1, -1)
    assert sep.source == "mean_zero_repair[family]"
    assert (sip.source, sip.sign_e, sip.sign_h) == ("family", 1, 1)
    assert resolve_convention(SEP1).source == "mean_zero_repair[family]"
    # every rejected attempt is recorded with a reason
    attempts = sip.metadata["attempts"]
    assert attempts[0]["source"] == "ansatz" and attempts[-1]["verdict"] == "selected"


def test_frozen_tables():
    sip = default_table(SIP1)
    assert [list(map(str, r[:4])) for r in sip.dd[:4]] == [
        ["1", "1", "1", "1"], ["1", "-1", "-3", "-5"], ["1", "-3", "-3", "1"], ["1", "-5", "1", "11"]]
    assert sip.norm_sq[:4] == (1, 3, 9, 27)
    sep = default_table(SEP2)
    assert [sep.dd[m][n] for m in range(3) for n in range(3)] == [1, 1, 1, 2, -2, -6, 1, -3, 9]
    assert sep.norm_sq == (1, 6, 9)
    irw = default_table(IRW)
    assert irw.dd[2][:4] == (Fraction(1, 2), Fraction(-3, 2), Fraction(1, 2), Fraction(13, 2))


def test_degree_one_constants_measured_vs_printed():
    assert default_table(IRW).c_sigma == -2 and IRW.c_printed == 2
    assert default_table(SEP2).c_sigma == 4 and SEP2.c_printed == 5
    assert default_table(SIP1).c_sigma == 2 and SIP1.c_printed == 2
    for spec in (IRW, SEP2, SIP1):
        t = default_table(spec)
        # dd(1, n) = -c (n - rho)
        assert all(t.dd[1][n] == -t.c_sigma * (n - spec.rho) for n in range(6))
        assert t.g_tilde[1] == t.c_sigma == -t.g[1]


@pytest.mark.parametrize("spec", [IRW, SEP2, SIP1], ids=lambda s: s.name)
def test_gram_is_diagonal_and_matches_gram_schmidt(spec):
    t = default_table(spec)
    G = exact_gram(spec, t.pair, 4)
    assert all(G[a][b] == 0 for a in range(len(G)) for b in range(len(G)) if a != b)
    gs = gram_schmidt_oracle(spec, 4)
    P = poly_in_n(t.pair, len(gs) - 1)
    for m, q in enumerate(gs):
        assert [P[m][m] * c for c in q] == P[m]


def test_truncated_gram_certifies_tail():
    G, n_used, tail = truncated_gram(SIP1, default_table(SIP1).pair, 4)
    assert tail < 1e-16 and n_used > 10
    assert G[2, 2] == pytest.approx(9, rel=1e-13)


def test_sep_degrees_above_cap_vanish_on_support():
    t = default_table(SEP1)
    assert t.dd[2][:2] == (0, 0) and t.dd[3][:2] == (0, 0)


def test_flipped_pair_breaks_duality():
    torus, kernel = Torus(1, 5), nearest_neighbor_kernel(1)
    flipped = build_generating_pair(SIP1, 4, 1, -1, "family")
    pd = ProductDuality(build_table(SIP1, flipped, 3, 6))
    # separated dual particles do not see the sign of h; a doubled site does
    xi = DualConfig.from_sites([1, 1])
    res = [check_duality_pointwise(SIP1, kernel, torus, xi, eta, pd)
           for eta in ([1, 0, 2, 0, 0], [0, 1, 1, 3, 0], [2, 2, 0, 1, 1])]
    assert any(r != 0 for r in res)


def test_candidate_order():
    cands = candidate_pairs(SIP1, 3)
    assert [(c.source, c.sign_e, c.sign_h) for c in cands[:4]] == [
        ("ansatz", 1, 1), ("ansatz", 1, -1), ("ansatz", -1, 1), ("ansatz", -1, -1)]


@given(st.integers(0, 6), st.integers(0, 40))
@settings(max_examples=80, deadline=None)
def test_shift_columns_match_direct_expansion(m, n):
    t = default_table(SIP1).extended(6, 40)
    direct = series.mul(t.pair.e_series(6), series.power(t.pair.h_series(6), n, 6), 6)
    assert t.value(m, n) == direct[m]


def test_table_overflow_and_auto_extension():
    t = default_table(SIP1)
    with pytest.raises(TableOverflow):
        t.value(t.m_max + 1, 0)
    pd = ProductDuality(t)
    assert pd.eval_DD(DualConfig.from_sites([0] * 6), [60]) == t.extended(6, 60).dd[6][60]
    with pytest.raises(TableOverflow):
        ProductDuality(default_table(SEP2)).mu_of(DualConfig.from_sites([0, 0, 0]))


def test_lambda_over_mu_constant_on_each_level():
    torus = Torus(1, 4)
    for spec in (IRW, SEP2, SIP1):
        pd = ProductDuality(default_table(spec))
        for k in range(1, 4):
            ratios = set()
            for xi in dual_configs(torus, k, spec):
                lam = Fraction(1)
                for c in xi.values():
                    lam *= pd.table.lam(c)
                ratios.add(lam / pd.mu_of(xi))
            assert len(ratios) == 1


def test_dump_csv(tmp_path):
    path = default_table(SEP2).dump_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "m,n,numerator,denominator"
    assert (tmp_path / "t.json").exists()

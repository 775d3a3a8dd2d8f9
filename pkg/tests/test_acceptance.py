"""Acceptance criteria 1-11, one test each.

Every test records a single ``CRITERION n: PASS|FAIL`` line (collected in the
terminal summary) and then asserts the verdict.  Tolerances and seeds are
pinned below; the Monte Carlo settings are the full-size ones.
"""

import time
from fractions import Fraction

import pytest

from dualfields import verify
from dualfields.core_model import ModelSpec, Torus, nearest_neighbor_kernel
from dualfields.fields import TestFunction

from conftest import record

IRW = ModelSpec(0, Fraction(1), Fraction(1, 2))
SEP = ModelSpec(-1, Fraction(2), Fraction(1, 2))
SIP = ModelSpec(1, Fraction(1), Fraction(1, 2))
MODELS = (IRW, SEP, SIP)
NN = nearest_neighbor_kernel(1)
SIN = TestFunction("sin")
GAUSS = TestFunction("gauss", width=0.15, center=0.3)

SEED = 20240601
TOL = {
    "gram_offdiagonal": 1e-12, "gram_tail": 1e-16, "lambda_mu_ratio": 1e-10,
    "gradient_relative": 1e-8, "n_se": 3.0, "qv_relative": 0.05,
    "drift_slope_target": -1.0, "drift_slope_window": 0.3,
    "analytic_t0": 1e-10, "moment_slope": 0.1,
}
MC = {"n": 64, "T": 0.1, "replicas": 10_000, "n_list": (8, 16, 32, 64),
      "cov_L": 8, "cov_t": (0.01, 0.05, 0.1), "cov_replicas": 10_000, "moment_samples": 100_000}
LIMIT = {1: 120, 2: 60, 3: 60, 4: 120, 5: 60, 6: 600, 7: 1200, 8: 1800, 9: 600, 10: 600}


def _timed(number, fn):
    t0 = time.perf_counter()
    out = fn()
    elapsed = time.perf_counter() - t0
    return out, elapsed, elapsed <= LIMIT[number]


def test_criterion_01_exact_duality():
    reps, elapsed, fast = _timed(1, lambda: [
        verify.suite_duality(s, Torus(1, 6), NN, k_max=3, n_eta=200, seed=SEED) for s in MODELS])
    ok = all(r.passed for r in reps) and fast
    worst = max(r.summary["max_abs_residual"] for r in reps)
    record(1, ok, f"max |residual| = {worst} over {sum(r.summary['checked'] for r in reps)} "
                  f"(xi, eta) pairs, {elapsed:.1f}s")
    assert ok


def test_criterion_02_orthogonality():
    reps, elapsed, fast = _timed(2, lambda: [
        verify.suite_orthogonality(s, 4, 3, Torus(1, 5), None, TOL["gram_offdiagonal"],
                                   TOL["gram_tail"], TOL["lambda_mu_ratio"]) for s in MODELS])
    ok = all(r.passed for r in reps) and fast
    offd = max(r.summary["max_normalized_offdiagonal"] for r in reps)
    tail = max(r.summary["tail_bound"] for r in reps)
    spread = max(max(r.summary["lambda_over_mu_spread"].values()) for r in reps)
    record(2, ok, f"float off-diagonal {offd:.2e}, tail {tail:.1e}, Lambda/mu spread {spread:.1e}, "
                  f"exact off-diagonals zero, {elapsed:.1f}s")
    assert ok


def test_criterion_03_recursion():
    reps, elapsed, fast = _timed(3, lambda: [verify.suite_recursion(s, 6, 40) for s in MODELS])
    ok = all(r.passed for r in reps) and fast
    cs = ", ".join(f"{r.config['model']['sigma']}: c={r.summary['c_measured']}" for r in reps)
    record(3, ok, f"coefficient-exact for m<=6, n<=40; {cs}; {elapsed:.1f}s")
    assert ok


def test_criterion_04_gradient_decomposition():
    rep, elapsed, fast = _timed(4, lambda: verify.suite_gradient(
        MODELS, 100, 3, Torus(1, 8), SIN, SEED, TOL["gradient_relative"]))
    ok = rep.passed and fast and rep.summary["cases"] == 100
    record(4, ok, f"max relative difference {rep.summary['max_relative_difference']:.2e} "
                  f"over {rep.summary['cases']} cases, {elapsed:.1f}s")
    assert ok


def test_criterion_05_carre_du_champ_identity():
    rep, elapsed, fast = _timed(5, lambda: verify.suite_carre_du_champ(
        MODELS, 3, 4, (5, 8, 16), SEED))
    ok = rep.passed and fast
    record(5, ok, f"{rep.summary['instances']} exact instances (V <= 16, k <= 3), {elapsed:.1f}s")
    assert ok


def test_criterion_06_martingale_k1():
    rep, elapsed, fast = _timed(6, lambda: verify.suite_martingale(
        SIP, SIN, 1, MC["n"], MC["T"], MC["replicas"], SEED, n_se=TOL["n_se"],
        qv_rel_tol=TOL["qv_relative"]))
    s = rep.summary
    ok = rep.passed and fast
    record(6, ok, f"mean M_T = {s['M_T'].mean:.4f} +/- {s['M_T'].std_error:.4f}; "
                  f"QV {s['cdc_integral'].mean:.4f} vs target {s['qv_target']:.4f} "
                  f"(rel {s['qv_relative_error']:.2%}); {elapsed:.0f}s")
    assert ok


def test_criterion_07_martingale_k2():
    rep, elapsed, fast = _timed(7, lambda: verify.suite_martingale(
        SIP, SIN, 2, MC["n"], MC["T"], MC["replicas"], SEED, n_se=TOL["n_se"]))
    s = rep.summary
    ok = rep.passed and fast
    record(7, ok, f"M_T {s['M_T'].mean:.4f}+/-{s['M_T'].std_error:.4f}; "
                  f"N_T {s['N_T'].mean:.4f}+/-{s['N_T'].std_error:.4f}; "
                  f"QV minus closed form {s['closed_target_difference'].mean:.4f}"
                  f"+/-{s['closed_target_difference'].std_error:.4f} "
                  f"(rel gap {s['relative_gap']:.2%}); checks {s['checks']}; {elapsed:.0f}s")
    assert ok


def test_criterion_08_drift_closure_scaling():
    rep, elapsed, fast = _timed(8, lambda: verify.suite_drift_scaling(
        SIP, SIN, 2, MC["n_list"], MC["T"], MC["replicas"], SEED, target=TOL["drift_slope_target"],
        tolerance=TOL["drift_slope_window"]))
    sc = rep.summary["scaling"]
    ok = rep.passed and fast
    record(8, ok, f"slope {sc['slope']:.3f} +/- {sc['slope_se']:.3f} (window "
                  f"{TOL['drift_slope_target'] - TOL['drift_slope_window']:.1f}.."
                  f"{TOL['drift_slope_target'] + TOL['drift_slope_window']:.1f}); exact-oracle slope "
                  f"{rep.summary.get('exact_oracle_slope', float('nan')):.3f}; {elapsed:.0f}s")
    assert ok


def test_criterion_09_covariance():
    def run():
        return [verify.suite_covariance(SIP, SIN, GAUSS, k, MC["cov_L"], MC["cov_t"],
                                        MC["cov_replicas"], SEED, n_se=TOL["n_se"],
                                        analytic_tol=TOL["analytic_t0"]) for k in (1, 2)]
    reps, elapsed, fast = _timed(9, run)
    ok = all(r.passed for r in reps) and fast
    worst_z = max(abs(e.mean - x) / e.std_error for r in reps
                  for e, x in zip(r.summary["estimates"], r.summary["exact"]))
    ana = max(r.summary["analytic_relative_error"] for r in reps)
    record(9, ok, f"max |MC - exact| / SE = {worst_z:.2f}; analytic t=0 rel error {ana:.1e}; {elapsed:.0f}s")
    assert ok


def test_criterion_10_moment_boundedness():
    rep, elapsed, fast = _timed(10, lambda: verify.suite_moments(
        SIP, SIN, (1, 2, 3), MC["n_list"], MC["moment_samples"], SEED, slope_tol=TOL["moment_slope"]))
    ok = rep.passed and fast
    sl = "; ".join(f"k={k}: 2nd {v['second']:+.3f} (exact {v['second_exact']:+.3f}), 4th {v['fourth']:+.3f}"
                   + (f" (exact {v['fourth_exact']:+.3f})" if "fourth_exact" in v else "")
                   for k, v in rep.summary["slopes"].items())
    record(10, ok, f"{sl}; {elapsed:.0f}s")
    assert ok


def test_criterion_11_determinism(tmp_path):
    small = [
        lambda: verify.suite_duality(SIP, Torus(1, 5), NN, 2, 10, seed=SEED, mc_replicas=20),
        lambda: verify.suite_orthogonality(SEP),
        lambda: verify.suite_recursion(IRW),
        lambda: verify.suite_gradient(MODELS, 9, seed=SEED),
        lambda: verify.suite_carre_du_champ(MODELS, 2, 1, (6,), SEED),
        lambda: verify.suite_taylor(NN, SIN),
        lambda: verify.suite_drift_scaling(SIP, SIN, 2, (8, 10, 12), 0.05, 20, SEED),
        lambda: verify.suite_qv_replacement(SIP, SIN, 2, (8, 10, 12), 0.05, 20, SEED),
        lambda: verify.suite_martingale(SIP, SIN, 2, 12, 0.05, 20, SEED),
        lambda: verify.suite_covariance(SIP, SIN, GAUSS, 2, 6, (0.01,), 20, SEED),
        lambda: verify.suite_moments(SIP, SIN, (1, 2), (8, 12, 16), 500, SEED),
    ]
    identical = []
    for i, make in enumerate(small):
        verify._PATH_CACHE.clear()
        make().write(tmp_path / f"{i}a")
        verify._PATH_CACHE.clear()
        make().write(tmp_path / f"{i}b")
        identical.append((tmp_path / f"{i}a/data.csv").read_bytes() == (tmp_path / f"{i}b/data.csv").read_bytes())
    ok = all(identical)
    record(11, ok, f"{sum(identical)}/{len(identical)} suites byte-identical on re-run")
    assert ok

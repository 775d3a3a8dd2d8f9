"""Experiment suites: exact identity checks and Monte Carlo scaling diagnostics.

Every suite returns a :class:`SuiteReport`; ``SuiteReport.write`` emits
``report.json`` and ``data.csv``.  Per-replica randomness is derived from
``(master seed, stream keys, replica index)`` only, so results do not depend
on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fastsim, series
from .core_model import (
    DualConfig, Kernel, ModelSpec, Torus, lambda_weight, nearest_neighbor_kernel, nu_sample,
    sample_marginal,
)
from .dynamics import (
    DualStateSpace, check_duality_pointwise, exact_semigroup, replica_seed, simulate,
    simulate_dual,
)
from .fields import (
    PowerSumField, TestFunction, carre_du_champ_definition, field_eval, carre_du_champ_exact,
    grad_decomposition, grad_field, grad_s1_term, site_values, z_field,
)
from .orthopoly import (
    DualityTable, GeneratingPair, ProductDuality, build_table, default_table, dual_configs,
    exact_gram, gram_schmidt_oracle, poly_in_n, resolve_convention, truncated_gram,
)

SCHEMA_VERSION = 1

__all__ = [
    "EstimateWithError", "ScalingReport", "SuiteReport", "ConventionUnresolved", "SUITES",
    "suite_duality", "suite_orthogonality", "suite_recursion", "suite_gradient",
    "suite_carre_du_champ", "suite_taylor", "suite_drift_scaling", "suite_qv_replacement",
    "suite_martingale", "suite_covariance", "suite_moments", "collect_paths",
    "exact_drift_error_moment", "exact_covariance", "analytic_cross_moment",
]


class ConventionUnresolved(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# statistics containers


@dataclass
class EstimateWithError:
    mean: float
    std_error: float
    replicas: int
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("an estimate needs at least two replicas")
        if self.std_error < 0:
            raise ValueError("negative standard error")

    @classmethod
    def from_samples(cls, values, seeds: dict | None = None) -> "EstimateWithError":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("an estimate needs at least two replicas")
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size),
                   seeds or {})

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_se * self.std_error

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "replicas": self.replicas}


@dataclass
class ScalingReport:
    n_values: list
    estimates: list
    slope: float
    slope_se: float
    target: float
    tolerance: float
    verdict: bool

    @classmethod
    def fit(cls, n_values, estimates: Sequence[EstimateWithError], target: float,
            tolerance: float) -> "ScalingReport":
        if len(set(n_values)) < 3:
            raise ValueError("a scaling fit needs at least three distinct n")
        x = np.log(np.asarray(n_values, dtype=float))
        y = np.log(np.array([e.mean for e in estimates]))
        coef, cov = np.polyfit(x, y, 1, cov="unscaled") if len(x) > 2 else (np.polyfit(x, y, 1), None)
        resid = y - np.polyval(coef, x)
        dof = max(len(x) - 2, 1)
        s2 = float(resid @ resid) / dof
        slope_se = float(math.sqrt(cov[0, 0] * s2)) if cov is not None else float("nan")
        slope = float(coef[0])
        return cls(list(n_values), list(estimates), slope, slope_se, target, tolerance,
                   abs(slope - target) <= tolerance)

    def as_dict(self) -> dict:
        return {"n_values": list(self.n_values), "estimates": [e.as_dict() for e in self.estimates],
                "slope": self.slope, "slope_se": self.slope_se, "target": self.target,
                "tolerance": self.tolerance, "verdict": "PASS" if self.verdict else "FAIL"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (EstimateWithError, ScalingReport)):
        return _jsonable(obj.as_dict())
    return obj


@dataclass
class SuiteReport:
    suite: str
    passed: bool
    summary: dict
    columns: list
    rows: list
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def data_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else
                        str(v) for v in row])
        return buf.getvalue()

    def report_dict(self) -> dict:
        return _jsonable({
            "schema_version": SCHEMA_VERSION, "suite": self.suite,
            "verdict": "PASS" if self.passed else "FAIL", "summary": self.summary,
            "config": self.config, "seeds": self.seeds,
            "timing": {"elapsed_seconds": round(self.elapsed, 3)},
        })

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.report_dict(), indent=2, sort_keys=True) + "\n")
        (out / "data.csv").write_text(self.data_csv())
        return out


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        rep = fn(*args, **kwargs)
        rep.elapsed = time.perf_counter() - t0
        return rep
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _table_for(spec: ModelSpec, pair: GeneratingPair | None, m_max: int = 4, n_max: int = 40):
    if pair is None:
        try:
            return default_table(spec, m_max, n_max)
        except RuntimeError as exc:
            raise ConventionUnresolved(str(exc)) from exc
    return build_table(spec, pair, m_max, n_max)


# ---------------------------------------------------------------------------
# exact identity suites


@_timed
def suite_duality(spec: ModelSpec, torus: Torus | None = None, kernel: Kernel | None = None,
                  k_max: int = 3, n_eta: int = 200, cap: int = 3, seed: int = 0,
                  pair: GeneratingPair | None = None, mc_replicas: int = 0,
                  mc_times: Sequence[float] = (0.05, 0.2)) -> SuiteReport:
    """Exact generator duality on every ``xi`` with ``|xi| <= k_max`` against
    ``n_eta`` random occupancies, plus an optional Monte Carlo semigroup check."""
    torus = torus or Torus(1, 6)
    kernel = kernel or nearest_neighbor_kernel(torus.d)
    torus.check_kernel(kernel)
    table = _table_for(spec, pair, max(k_max, 1), cap + 2)
    pd = ProductDuality(table)
    rng = np.random.default_rng(replica_seed(seed, 0, 1))
    top = cap if spec.cap is None else min(cap, spec.cap)
    etas = [rng.integers(0, top + 1, size=torus.V) for _ in range(n_eta)]
    rows = []
    worst = Fraction(0)
    checked = 0
    for k in range(k_max + 1):
        nonzero = 0
        for xi in dual_configs(torus, k, spec):
            for eta in etas:
                res = check_duality_pointwise(spec, kernel, torus, xi, eta, pd)
                checked += 1
                if res != 0:
                    nonzero += 1
                    worst = max(worst, abs(res))
        rows.append(["exact", k, len(dual_configs(torus, k, spec)), len(etas), nonzero, "", "", ""])
    passed = worst == 0
    summary = {"checked": checked, "max_abs_residual": worst, "convention": table.pair.as_dict()}
    if mc_replicas:
        mc = _duality_monte_carlo(spec, kernel, torus, pd, seed, mc_replicas, mc_times)
        for rec in mc:
            rows.append(["monte_carlo", rec["k"], rec["xi"], rec["eta"], rec["t"],
                         rec["lhs"], rec["rhs"], rec["se"]])
        mc_ok = all(abs(r["lhs"] - r["rhs"]) <= 3 * r["se"] for r in mc)
        summary["monte_carlo_pass"] = mc_ok
        passed = passed and mc_ok
    return SuiteReport("duality", passed, summary,
                       ["mode", "k", "n_xi_or_xi", "n_eta_or_eta", "nonzero_or_t", "lhs", "rhs", "se"],
                       rows, {"model": spec.as_dict(), "L": torus.L, "d": torus.d, "k_max": k_max},
                       {"master": seed})


def _duality_monte_carlo(spec, kernel, torus, pd, seed, replicas, times):
    """``E_eta[D(xi, eta_t)]`` against ``E_xi[D(xi_t, eta)]`` for a few pairs."""
    rng = np.random.default_rng(replica_seed(seed, 0, 2))
    out = []
    top = 2 if spec.cap is None else min(2, spec.cap)
    cases = []
    for k in (1, 2):
        sites = sorted(rng.choice(torus.V, size=k, replace=spec.cap is None))
        xi = DualConfig.from_sites(int(s) for s in sites)
        if spec.cap is not None and any(c > spec.cap for c in xi.values()):
            xi = DualConfig.from_sites(range(k))
        eta = rng.integers(0, top + 1, size=torus.V)
        cases.append((k, xi, eta))
    for (k, xi, eta), t in itertools.product(cases, times):
        lhs = np.empty(replicas)
        rhs = np.empty(replicas)
        for r in range(replicas):
            s = replica_seed(seed, r, 3, k, int(round(t * 1e6)))
            traj = simulate(spec, kernel, torus, eta, t, 1, s)
            lhs[r] = float(pd.eval_D(xi, traj.replay()))
            dual = simulate_dual(spec, kernel, torus, xi, t, s)
            rhs[r] = float(pd.eval_D(dual.state_at(t), eta))
        se = math.sqrt(lhs.var(ddof=1) / replicas + rhs.var(ddof=1) / replicas)
        out.append({"k": k, "xi": repr(dict(xi)), "eta": " ".join(map(str, eta)), "t": t,
                    "lhs": float(lhs.mean()), "rhs": float(rhs.mean()), "se": se})
    return out


def _lambda_mu_ratios(spec, table, torus, k):
    pd = ProductDuality(table)
    ratios = []
    for xi in dual_configs(torus, k, spec):
        lam = Fraction(1)
        for c in xi.values():
            lam *= table.lam(c)
        ratios.append(lam / pd.mu_of(xi))
    return ratios


@_timed
def suite_orthogonality(spec: ModelSpec, m_max: int = 4, k_max: int = 3,
                        torus: Torus | None = None, pair: GeneratingPair | None = None,
                        gram_tol: float = 1e-12, tail_tol: float = 1e-16,
                        ratio_tol: float = 1e-10) -> SuiteReport:
    """Gram matrix of the single-site polynomials (exact and truncated float),
    per-degree norms, and constancy of ``Lambda / mu`` on each ``Omega_k``."""
    torus = torus or Torus(1, 5)
    table = _table_for(spec, pair, max(m_max, k_max), 8)
    G_exact = exact_gram(spec, table.pair, m_max)
    G_float, n_used, tail = truncated_gram(spec, table.pair, m_max, tail_tol)
    size = len(G_exact)
    rows = []
    exact_off_zero = True
    worst_rel = 0.0
    for a in range(size):
        for b in range(size):
            ex = G_exact[a][b]
            fl = float(G_float[a, b])
            norm = math.sqrt(float(G_exact[a][a]) * float(G_exact[b][b]))
            rel = abs(fl) / norm if a != b else abs(fl - float(ex)) / float(ex)
            if a != b:
                exact_off_zero &= ex == 0
            worst_rel = max(worst_rel, rel) if a != b else worst_rel
            rows.append(["gram", a, b, str(ex), fl, rel])
    diag_rel = max(abs(float(G_float[m, m]) - float(G_exact[m][m])) / float(G_exact[m][m])
                   for m in range(size))
    mean_dd1 = G_exact[0][1] if size > 1 else Fraction(0)
    ratio_spread = {}
    for k in range(1, k_max + 1):
        r = _lambda_mu_ratios(spec, table, torus, k)
        spread = max(abs(x / r[0] - 1) for x in r)
        ratio_spread[k] = float(spread)
        rows.append(["lambda_over_mu", k, len(r), str(r[0]), float(r[0]), float(spread)])
    # Gram-Schmidt oracle: dd(m, .) must be a multiple of the monic q_m
    gs = gram_schmidt_oracle(spec, m_max)
    P = poly_in_n(table.pair, len(gs) - 1)
    gs_ok = all(all(P[m][j] * 1 == P[m][m] * gs[m][j] for j in range(m + 1)) for m in range(len(gs)))
    passed = (exact_off_zero and mean_dd1 == 0 and worst_rel < gram_tol and diag_rel < gram_tol
              and tail < tail_tol and all(v <= ratio_tol for v in ratio_spread.values()) and gs_ok)
    summary = {"exact_offdiagonal_zero": exact_off_zero, "max_normalized_offdiagonal": worst_rel,
               "max_relative_diagonal_error": diag_rel, "truncation_n": n_used, "tail_bound": tail,
               "lambda_over_mu_spread": ratio_spread, "gram_schmidt_proportional": gs_ok,
               "mean_dd1": mean_dd1, "norms": [str(x) for x in table.norm_sq[:size]]}
    return SuiteReport("orthogonality", passed, summary,
                       ["kind", "a", "b", "exact", "float", "relative"], rows,
                       {"model": spec.as_dict(), "m_max": m_max, "k_max": k_max})


@_timed
def suite_recursion(spec: ModelSpec, m_max: int = 6, n_max: int = 40,
                    pair: GeneratingPair | None = None) -> SuiteReport:
    """Shift-built columns against direct expansion of ``e(t) h(t)**n``; the
    degree-one shift coefficients."""
    base = _table_for(spec, pair)
    table = build_table(spec, base.pair, m_max, n_max)
    e = table.pair.e_series(m_max)
    h = table.pair.h_series(m_max)
    hi = table.pair.h_inv_series(m_max)
    mismatches = 0
    down_mismatches = 0
    for n in range(n_max + 1):
        direct = series.mul(e, series.power(h, n, m_max), m_max)
        mismatches += sum(direct[m] != table.dd[m][n] for m in range(m_max + 1))
        if n >= 1:
            down = series.mul([table.dd[m][n] for m in range(m_max + 1)], hi, m_max)
            down_mismatches += sum(down[m] != table.dd[m][n - 1] for m in range(m_max + 1))
    g1_ok = table.g_tilde[1] == table.c_sigma == -table.g[1]
    inv_ok = series.mul(h, hi, m_max) == [1] + [0] * m_max
    rows = [["g", m, str(table.g[m]), str(table.g_tilde[m])] for m in range(m_max + 1)]
    passed = mismatches == 0 and down_mismatches == 0 and g1_ok and inv_ok
    return SuiteReport("recursion", passed,
                       {"up_mismatches": mismatches, "down_mismatches": down_mismatches,
                        "g_tilde1_equals_c_equals_minus_g1": g1_ok, "h_times_h_inv_is_one": inv_ok,
                        "c_measured": table.c_sigma, "c_printed": spec.c_printed},
                       ["kind", "m", "g", "g_tilde"], rows,
                       {"model": spec.as_dict(), "m_max": m_max, "n_max": n_max})


def _random_case(spec, torus, kernel, rng):
    """A stationary occupancy and an admissible move ``i -> j``."""
    for _ in range(1000):
        eta = sample_marginal(spec, torus.V, rng).astype(np.int64)
        occupied = np.flatnonzero(eta)
        if occupied.size == 0:
            continue
        i = int(occupied[rng.integers(occupied.size)])
        r = kernel.support[int(rng.integers(len(kernel.support)))]
        j = torus.shift(i, r)
        if spec.cap is None or eta[j] < spec.cap:
            return eta, i, j
    raise RuntimeError("could not draw an admissible move")


@_timed
def suite_gradient(specs: Sequence[ModelSpec], cases: int = 100, k_max: int = 3,
                   torus: Torus | None = None, phi: TestFunction | None = None, seed: int = 0,
                   rel_tol: float = 1e-8) -> SuiteReport:
    """Definition-based gradient against the auxiliary-field decomposition,
    including the ``s = 1`` term and the partition identity of the Z-fields."""
    torus = torus or Torus(1, 8)
    kernel = nearest_neighbor_kernel(torus.d)
    phi = phi or TestFunction("sin")
    rng = np.random.default_rng(replica_seed(seed, 0, 4))
    rows = []
    worst = 0.0
    worst_partition = 0.0
    for m, spec in enumerate(specs):
        table = _table_for(spec, None, max(k_max, 1), 30)
        share = cases // len(specs) + (1 if m < cases % len(specs) else 0)
        for c in range(share):
            k = 1 + c % k_max
            eta, i, j = _random_case(spec, torus, kernel, rng)
            direct = grad_field(k, table, phi, eta, i, j, torus)
            decomp = grad_decomposition(k, table, phi, eta, i, j, torus)
            scale = max(abs(direct), abs(decomp), 1e-300)
            rel = abs(direct - decomp) / scale
            if abs(direct) < 1e-12 and abs(decomp) < 1e-12:
                rel = 0.0
            worst = max(worst, rel)
            zs = [z_field(k, ell, table, phi, eta, i, j, torus) for ell in range(k + 1)]
            fv = field_eval(k, table, phi, eta, torus).value
            part = abs(sum(zs) - fv) / max(sum(abs(z) for z in zs), 1e-12)
            worst_partition = max(worst_partition, part)
            s1 = grad_s1_term(k, table, phi, eta, i, j, torus)
            rows.append([spec.name, k, i, j, direct, decomp, rel, s1, part])
    passed = worst <= rel_tol and worst_partition <= 1e-10
    return SuiteReport("gradient", passed,
                       {"cases": len(rows), "max_relative_difference": worst,
                        "max_partition_error": worst_partition, "tolerance": rel_tol},
                       ["model", "k", "i", "j", "grad_definition", "grad_decomposition",
                        "relative_difference", "s1_term", "partition_error"], rows,
                       {"L": torus.L, "phi": phi.as_dict(), "k_max": k_max}, {"master": seed})


@_timed
def suite_carre_du_champ(specs: Sequence[ModelSpec], k_max: int = 3, instances: int = 4,
                         sizes: Sequence[int] = (5, 8, 16), seed: int = 0) -> SuiteReport:
    """Sum-of-squares form of the carre-du-champ against ``L(f^2) - 2 f L f``,
    exactly, with a rational test function."""
    phi = TestFunction("bump", value=Fraction(16))
    rng = np.random.default_rng(replica_seed(seed, 0, 5))
    rows = []
    all_equal = True
    for spec in specs:
        table = _table_for(spec, None, max(k_max, 1), 30)
        for L in sizes:
            torus = Torus(1, L)
            kernel = nearest_neighbor_kernel(1)
            for inst in range(instances):
                eta = sample_marginal(spec, L, rng).astype(np.int64)
                for k in range(1, k_max + 1):
                    a = carre_du_champ_exact(k, table, phi, eta, torus, kernel, exact=True)
                    b = carre_du_champ_definition(k, table, phi, eta, torus, kernel, exact=True)
                    equal = a == b
                    all_equal &= equal
                    rows.append([spec.name, L, inst, k, str(a), str(b), int(equal)])
    return SuiteReport("carre_du_champ", all_equal, {"instances": len(rows), "all_exact": all_equal},
                       ["model", "L", "instance", "k", "sum_of_squares", "definition", "equal"],
                       rows, {"sizes": list(sizes), "k_max": k_max}, {"master": seed})


@_timed
def suite_taylor(kernel: Kernel, phi: TestFunction, n_list: Sequence[int] = (8, 16, 32, 64, 128),
                 growth_tol: float = 0.1) -> SuiteReport:
    """Odd and cross moments of the kernel vanish; the rescaled Taylor remainder
    ``n^{-d} sum_x |psi_n(x/n)|`` does not grow with ``n``."""
    d = kernel.d
    odd = [kernel.moment((l,)) for l in range(d)]
    cross = [kernel.moment((a, b)) for a in range(d) for b in range(d) if a != b]
    moments_ok = all(v == 0 for v in odd) and all(v == 0 for v in cross)
    rows = []
    sizes = []
    for n in n_list:
        torus = Torus(d, n)
        pts = torus.points()
        base = phi.phi(pts)
        disc = np.zeros(torus.V)
        for r in kernel.support:
            shifted = phi.phi((pts + np.array(r, dtype=float) / n) % 1.0)
            disc += float(kernel.weights[r]) * (shifted - base)
        psi = n * (n**2 * disc - float(kernel.chi) / 2 * phi.laplace(pts))
        size = float(np.abs(psi).sum() / n**d)
        sizes.append(size)
        rows.append([n, size, float(np.abs(psi).max())])
    if max(sizes) < 1e-9:
        slope = 0.0
    else:
        pos = [(n, s) for n, s in zip(n_list, sizes) if s > 0]
        slope = float(np.polyfit(np.log([p[0] for p in pos]), np.log([p[1] for p in pos]), 1)[0])
    bounded = slope <= growth_tol
    return SuiteReport("taylor", moments_ok and bounded,
                       {"odd_moments_zero": moments_ok, "remainder_slope": slope,
                        "remainder_sizes": sizes},
                       ["n", "mean_abs_remainder", "max_abs_remainder"], rows,
                       {"kernel": kernel.as_dict(), "phi": phi.as_dict(), "n_list": list(n_list)})


# ---------------------------------------------------------------------------
# Monte Carlo path collection


_PATH_CACHE: dict = {}


def _path_chunk(args):
    spec, kernel, torus, phi, k, seed, stream, grid, start, stop = args
    table = _table_for(spec, None, max(k, 1), 40)
    psf = PowerSumField(spec, kernel, torus, table, phi, k)
    out = np.empty((stop - start, len(grid), len(fastsim.OUTPUT_COLUMNS)))
    for r in range(start, stop):
        s = replica_seed(seed, r, *stream)
        rng = np.random.default_rng(s)
        eta = sample_marginal(spec, torus.V, rng).astype(np.int64)
        out[r - start] = psf.run(eta, s, grid)
    return out


def collect_paths(spec: ModelSpec, kernel: Kernel, torus: Torus, phi: TestFunction, k: int,
                  grid: Sequence[float], replicas: int, seed: int, workers: int = 1,
                  stream: tuple = ()) -> np.ndarray:
    """Array ``(replicas, len(grid), len(OUTPUT_COLUMNS))`` of stationary paths.

    Results are memoised per process, so suites sharing a setting reuse runs.
    """
    grid = tuple(float(g) for g in grid)
    stream = (torus.n, k) + tuple(stream)
    key = (spec, kernel, torus, phi, k, grid, replicas, seed, stream)
    if key in _PATH_CACHE:
        return _PATH_CACHE[key]
    workers = max(1, int(workers))
    bounds = np.linspace(0, replicas, workers * 4 + 1 if workers > 1 else 2).astype(int)
    jobs = [(spec, kernel, torus, phi, k, seed, stream, np.array(grid), int(a), int(b))
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if workers == 1:
        parts = [_path_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_path_chunk, jobs))
    result = np.concatenate(parts, axis=0)
    _PATH_CACHE[key] = result
    return result


def _col(name):
    return fastsim.OUTPUT_COLUMNS.index(name)


def _riemann_gradient(phi: TestFunction, torus: Torus) -> float:
    g = phi.grad(torus.points())
    return float((g**2).sum() / torus.n**torus.d)


# ---------------------------------------------------------------------------
# exact dual-semigroup oracles


def _phi_of(xi, pv):
    out = 1.0
    for s, c in xi.items():
        out *= pv[s] ** c
    return out


def _dual_weights(spec, table, space):
    lam = np.array([float(v) for v in space.Lambda])
    pd = ProductDuality(table)
    mu = np.array([float(pd.mu_of(xi)) for xi in space.states])
    return lam, mu


def exact_drift_error_moment(spec: ModelSpec, kernel: Kernel, torus: Torus, phi: TestFunction,
                             k: int, times: Sequence[float]) -> list[float]:
    """``E[(int_0^T E(eta(n^2 s)) ds)^2]`` under stationarity, for each ``T``.

    ``E = drift_exact - drift_closed`` is a finite combination of duality
    polynomials, so its stationary covariance is given by the dual semigroup.
    The generator is symmetrised with ``Lambda`` and diagonalised.
    """
    table = _table_for(spec, None, max(k, 1), 8)
    space = DualStateSpace(spec, kernel, torus, k, table.lambda_reading)
    n, d = torus.n, torus.d
    pts = torus.points()
    pv = phi.phi(pts)
    lap = phi.laplace(pts)
    psi = np.zeros(len(space))
    coef = float(spec.alpha) * float(kernel.chi) / 2
    for a, xi in enumerate(space.states):
        base = _phi_of(xi, pv)
        gen = 0.0
        for i, c in xi.items():
            for r in kernel.support:
                j = torus.shift(i, r)
                rate = float(kernel.weights[r]) * c * (float(spec.alpha) + spec.sigma * xi.get(j, 0))
                if rate:
                    gen += rate * (_phi_of(xi.moved(i, j), pv) - base)
        mixed = 0.0
        for x, c in xi.items():
            rest = 1.0
            for y, cy in xi.items():
                if y != x:
                    rest *= pv[y] ** cy
            mixed += c * lap[x] * pv[x] ** (c - 1) * rest
        psi[a] = n * n * gen - coef * mixed
    lam, mu = _dual_weights(spec, table, space)
    Q = space.matrix()
    root = np.sqrt(lam)
    S = (root[:, None] * Q) / root[None, :]
    ev, vecs = np.linalg.eigh((S + S.T) / 2)
    a = vecs.T @ (psi * lam / root)
    b = vecs.T @ (psi * lam / mu * root)
    kap = n * n * ev
    out = []
    for T in times:
        small = np.abs(kap * T) < 1e-8
        safe = np.where(small, 1.0, kap)
        f = np.where(small, T * T, 2 * (np.expm1(kap * T) - kap * T) / safe**2)
        out.append(float(n ** (-k * d) * np.sum(a * b * f)))
    return out


def analytic_cross_moment(spec: ModelSpec, table: DualityTable, phi_vals, psi_vals, k: int,
                          n: int, d: int) -> float:
    """``E_nu[Y(Phi) Y(Psi)]`` from the exact single-site Gram matrix, using
    ``E prod_x = prod_x E`` over independent sites (no orthogonality assumed)."""
    G = exact_gram(spec, table.pair, k)
    size = len(G)
    Gf = np.zeros((k + 1, k + 1))
    for a in range(size):
        for b in range(size):
            Gf[a, b] = float(G[a][b])
    acc = np.zeros((k + 1, k + 1))
    acc[0, 0] = 1.0
    for p, q in zip(phi_vals, psi_vals):
        site = Gf * np.outer(p ** np.arange(k + 1), q ** np.arange(k + 1))
        new = np.zeros_like(acc)
        for a in range(k + 1):
            for b in range(k + 1):
                if acc[a, b] == 0:
                    continue
                new[a:, b:] += acc[a, b] * site[: k + 1 - a, : k + 1 - b]
        acc = new
    return float(acc[k, k] * float(n) ** (-k * d))


def exact_covariance(spec: ModelSpec, kernel: Kernel, torus: Torus, phi: TestFunction,
                     psi: TestFunction, k: int, times: Sequence[float]) -> list[float]:
    """``E[Y_t(Phi) Y_0(Psi)]`` through uniformization of the dual chain:
    ``n^{-kd} sum Phi(xi) Psi(xi') Lambda(xi) Lambda(xi') p_{n^2 t}(xi, xi') / mu(xi')``."""
    table = _table_for(spec, None, max(k, 1), 8)
    space = DualStateSpace(spec, kernel, torus, k, table.lambda_reading)
    pts = torus.points()
    pv, qv = phi.phi(pts), psi.phi(pts)
    lam, mu = _dual_weights(spec, table, space)
    u = np.array([_phi_of(xi, pv) for xi in space.states]) * lam
    w = np.array([_phi_of(xi, qv) for xi in space.states]) * lam / mu
    n, d = torus.n, torus.d
    return [float(n ** (-k * d) * u @ exact_semigroup(space, t, n * n) @ w) for t in times]


# ---------------------------------------------------------------------------
# Monte Carlo suites


@_timed
def suite_drift_scaling(spec: ModelSpec, phi: TestFunction, k: int = 2,
                        n_list: Sequence[int] = (8, 16, 32, 64), T: float = 0.1,
                        replicas: int = 10000, seed: int = 0, workers: int = 1,
                        kernel: Kernel | None = None, target: float = -1.0,
                        tolerance: float = 0.3, exact_oracle_max_states: int = 5000) -> SuiteReport:
    """Second moment of the time-integrated drift-closure error against ``n``."""
    kernel = kernel or nearest_neighbor_kernel(1)
    grid = (0.0, T / 4, T / 2, T)
    estimates, rows, exact = [], [], {}
    t_fit = None
    for n in n_list:
        torus = Torus(kernel.d, n)
        paths = collect_paths(spec, kernel, torus, phi, k, grid, replicas, seed, workers)
        err = paths[:, :, _col("drift_int")] - paths[:, :, _col("closed_int")]
        sq = err[:, -1] ** 2
        estimates.append(EstimateWithError.from_samples(sq))
        for r in range(replicas):
            rows.append([n, r] + [float(v) for v in err[r, 1:]])
        if math.comb(torus.V + k - 1, k) <= exact_oracle_max_states:
            exact[n] = exact_drift_error_moment(spec, kernel, torus, phi, k, grid[1:])
        if n == n_list[0]:
            t_est = [float((err[:, g] ** 2).mean()) for g in range(1, len(grid))]
            t_fit = float(np.polyfit(np.log(grid[1:]), np.log(t_est), 1)[0])
    rep = ScalingReport.fit(list(n_list), estimates, target, tolerance)
    summary = {"scaling": rep.as_dict(), "time_exponent_at_smallest_n": t_fit,
               "time_exponent_target": 2.0, "exact_oracle": exact}
    if len(exact) >= 3:
        ns = sorted(exact)
        summary["exact_oracle_slope"] = float(np.polyfit(np.log(ns), np.log([exact[n][-1] for n in ns]), 1)[0])
    return SuiteReport("drift_scaling", rep.verdict, summary,
                       ["n", "replica"] + [f"E_int_t{g}" for g in grid[1:]], rows,
                       {"model": spec.as_dict(), "phi": phi.as_dict(), "k": k, "T": T,
                        "n_list": list(n_list), "replicas": replicas},
                       {"master": seed, "rule": "SeedSequence(master, spawn_key=(n, k, replica))"})


@_timed
def suite_qv_replacement(spec: ModelSpec, phi: TestFunction, k: int = 2,
                         n_list: Sequence[int] = (8, 16, 32), T: float = 0.1, replicas: int = 2000,
                         seed: int = 0, workers: int = 1, kernel: Kernel | None = None) -> SuiteReport:
    """``E[(int (n^2 Gamma Y - qv_closed) ds)^2]`` and the two replacement
    statistics must decrease in ``n``."""
    kernel = kernel or nearest_neighbor_kernel(1)
    grid = (0.0, T / 4, T / 2, T)
    res_est, r1_est, r2_est, rows = [], [], [], []
    for n in n_list:
        torus = Torus(kernel.d, n)
        paths = collect_paths(spec, kernel, torus, phi, k, grid, replicas, seed, workers)
        last = paths[:, -1, :]
        resid = last[:, _col("cdc_int")] - last[:, _col("qvc_int")]
        res_est.append(EstimateWithError.from_samples(resid**2))
        r1_est.append(EstimateWithError.from_samples(last[:, _col("rep1_int")] ** 2))
        r2_est.append(EstimateWithError.from_samples(last[:, _col("rep2_int")] ** 2))
        for r in range(replicas):
            rows.append([n, r, float(resid[r]), float(last[r, _col("rep1_int")]),
                         float(last[r, _col("rep2_int")])])

    def decreasing(est):
        means = [e.mean for e in est]
        slope = float(np.polyfit(np.log(n_list), np.log(means), 1)[0])
        return slope, slope < 0

    s_res, ok_res = decreasing(res_est)
    s1, ok1 = decreasing(r1_est)
    s2, ok2 = decreasing(r2_est)
    return SuiteReport("qv_replacement", ok_res and ok1 and ok2,
                       {"residual": [e.as_dict() for e in res_est], "residual_slope": s_res,
                        "replacement_linear": [e.as_dict() for e in r1_est], "linear_slope": s1,
                        "replacement_product": [e.as_dict() for e in r2_est], "product_slope": s2},
                       ["n", "replica", "qv_residual_int", "linear_term_int", "product_term_int"],
                       rows, {"model": spec.as_dict(), "phi": phi.as_dict(), "k": k, "T": T,
                              "n_list": list(n_list), "replicas": replicas}, {"master": seed})


@_timed
def suite_martingale(spec: ModelSpec, phi: TestFunction, k: int = 1, n: int = 64, T: float = 0.1,
                     replicas: int = 10000, seed: int = 0, workers: int = 1,
                     kernel: Kernel | None = None, n_se: float = 3.0,
                     qv_rel_tol: float = 0.05) -> SuiteReport:
    """Dynkin martingale checks from stationary starts.

    (i) ``E M_T = 0``; (ii) ``E N_T = 0``; (iii) the carre-du-champ integral is
    consistent with ``c^2 chi rho (alpha + sigma rho) int (Y^(n,k-1))^2 ds``
    times the Riemann sum of ``|grad phi|^2``.  For ``k = 1`` (iii) is
    deterministic and compared with a relative tolerance.
    """
    kernel = kernel or nearest_neighbor_kernel(1)
    torus = Torus(kernel.d, n)
    grid = (0.0, T / 4, T / 2, T)
    paths = collect_paths(spec, kernel, torus, phi, k, grid, replicas, seed, workers)
    Y0 = paths[:, 0, _col("Y")]
    last = paths[:, -1, :]
    M = last[:, _col("Y")] - Y0 - last[:, _col("drift_int")]
    N = M**2 - last[:, _col("cdc_int")]
    table = _table_for(spec, None, max(k, 1), 40)
    c = float(table.c_sigma)
    riemann = _riemann_gradient(phi, torus)
    coef = c * c * float(kernel.chi) * float(spec.mobility) * riemann
    target_int = coef * last[:, _col("ylow_sq_int")]
    m_est = EstimateWithError.from_samples(M)
    n_est = EstimateWithError.from_samples(N)
    qv_est = EstimateWithError.from_samples(last[:, _col("cdc_int")])
    msq_est = EstimateWithError.from_samples(M**2)
    diff_est = EstimateWithError.from_samples(last[:, _col("cdc_int")] - target_int)
    checks = {"mean_M_zero": m_est.within(0.0, n_se), "mean_N_zero": n_est.within(0.0, n_se)}
    summary = {"M_T": m_est, "N_T": n_est, "cdc_integral": qv_est, "M_T_squared": msq_est,
               "closed_target_difference": diff_est, "c_measured": c, "riemann_grad_sq": riemann}
    if k == 1:
        target = coef * T
        rel = abs(qv_est.mean - target) / target if target else abs(qv_est.mean)
        checks["qv_within_tolerance"] = rel <= qv_rel_tol
        summary.update(qv_target=target, qv_relative_error=rel,
                       M_T_squared_relative_error=abs(msq_est.mean - target) / target if target else 0.0)
    else:
        checks["qv_matches_closed_form"] = diff_est.within(0.0, n_se)
        summary["closed_target_mean"] = float(target_int.mean())
        summary["relative_gap"] = (diff_est.mean / float(target_int.mean())
                                   if target_int.mean() else 0.0)
    summary["checks"] = checks
    rows = [[r, float(Y0[r]), float(last[r, _col("Y")]), float(M[r]), float(N[r]),
             float(last[r, _col("drift_int")]), float(last[r, _col("cdc_int")]),
             float(target_int[r])] for r in range(replicas)]
    return SuiteReport("martingale", all(checks.values()), summary,
                       ["replica", "Y0", "YT", "M", "N", "drift_integral", "cdc_integral",
                        "closed_qv_integral"], rows,
                       {"model": spec.as_dict(), "phi": phi.as_dict(), "k": k, "n": n, "T": T,
                        "replicas": replicas}, {"master": seed})


@_timed
def suite_covariance(spec: ModelSpec, phi: TestFunction, psi: TestFunction, k: int = 1,
                     n: int = 8, t_list: Sequence[float] = (0.01, 0.05, 0.1), replicas: int = 20000,
                     seed: int = 0, workers: int = 1, kernel: Kernel | None = None,
                     n_se: float = 3.0, analytic_tol: float = 1e-10) -> SuiteReport:
    """Monte Carlo ``E[Y_t(Phi) Y_0(Psi)]`` against the exact dual semigroup."""
    kernel = kernel or nearest_neighbor_kernel(1)
    torus = Torus(kernel.d, n)
    table = _table_for(spec, None, max(k, 1), 40)
    grid = (0.0,) + tuple(t_list)
    psf = PowerSumField(spec, kernel, torus, table, phi, k)
    psf_psi = PowerSumField(spec, kernel, torus, table, psi, k)
    prods = np.empty((replicas, len(grid)))
    for r in range(replicas):
        s = replica_seed(seed, r, n, k, 7)
        rng = np.random.default_rng(s)
        eta = sample_marginal(spec, torus.V, rng).astype(np.int64)
        y_psi = float(psf_psi.field(eta)[0])
        out = psf.run(eta, s, grid)
        prods[r] = out[:, _col("Y")] * y_psi
    exact = exact_covariance(spec, kernel, torus, phi, psi, k, grid)
    pts = torus.points()
    analytic0 = analytic_cross_moment(spec, table, phi.phi(pts), psi.phi(pts), k, n, torus.d)
    rows, checks = [], {}
    ests = []
    for g, t in enumerate(grid):
        est = EstimateWithError.from_samples(prods[:, g])
        ests.append(est)
        checks[f"t={t}"] = est.within(exact[g], n_se)
        rows.append([t, est.mean, est.std_error, exact[g]])
    analytic_rel = abs(analytic0 - exact[0]) / max(abs(exact[0]), 1e-300)
    checks["analytic_t0"] = analytic_rel <= analytic_tol
    return SuiteReport("covariance", all(checks.values()),
                       {"estimates": ests, "exact": exact, "analytic_t0": analytic0,
                        "analytic_relative_error": analytic_rel, "checks": checks},
                       ["t", "mc_mean", "mc_se", "exact"], rows,
                       {"model": spec.as_dict(), "phi": phi.as_dict(), "psi": psi.as_dict(),
                        "k": k, "n": n, "t_list": list(t_list), "replicas": replicas},
                       {"master": seed})


def _fourth_moment_degree_one(spec, table, phi_vals, n, d) -> float:
    """Exact ``E[(Y^(n,1))^4]``: the field is a sum of independent centred terms
    ``phi_x dd(1, eta_x)``, so only the pairings and the single-site fourth
    cumulant contribute."""
    from .core_model import raw_moments
    P = poly_in_n(table.pair, 1)[1]
    mom = raw_moments(spec, 4)

    def moment(p):
        poly = [Fraction(1)]
        for _ in range(p):
            poly = [sum((poly[i] * P[j - i] for i in range(len(poly)) if 0 <= j - i < len(P)),
                        Fraction(0)) for j in range(len(poly) + 1)]
        return float(sum((c * mom[j] for j, c in enumerate(poly)), Fraction(0)))

    m2, m4 = moment(2), moment(4)
    s2 = float((phi_vals**2).sum())
    s4 = float((phi_vals**4).sum())
    return float(n) ** (-2 * d) * (3 * s2 * s2 * m2 * m2 + s4 * (m4 - 3 * m2 * m2))


@_timed
def suite_moments(spec: ModelSpec, phi: TestFunction, k_list: Sequence[int] = (1, 2, 3),
                  n_list: Sequence[int] = (8, 16, 32, 64), samples: int = 100000, seed: int = 0,
                  kernel: Kernel | None = None, slope_tol: float = 0.1) -> SuiteReport:
    """Second and fourth moments of ``Y^(n,k)`` under ``nu_rho`` stay flat in ``n``."""
    kernel = kernel or nearest_neighbor_kernel(1)
    rows = []
    slopes = {}
    checks = {}
    for k in k_list:
        m2, m4, exact2, exact4 = [], [], [], []
        for n in n_list:
            torus = Torus(kernel.d, n)
            table = _table_for(spec, None, max(k, 1), 40)
            psf = PowerSumField(spec, kernel, torus, table, phi, k)
            rng = np.random.default_rng(replica_seed(seed, 0, n, k, 9))
            acc2 = acc4 = 0.0
            sq2 = 0.0
            batch = 20000
            done = 0
            vals2 = []
            while done < samples:
                b = min(batch, samples - done)
                eta = sample_marginal(spec, (b, torus.V), rng)
                y = psf.field(eta)
                acc2 += float((y**2).sum())
                acc4 += float((y**4).sum())
                vals2.append(y)
                done += b
            y = np.concatenate(vals2)
            m2.append(acc2 / samples)
            m4.append(acc4 / samples)
            pv = phi.phi(torus.points())
            exact2.append(analytic_cross_moment(spec, table, pv, pv, k, n, torus.d))
            exact4.append(_fourth_moment_degree_one(spec, table, pv, n, torus.d) if k == 1 else float("nan"))
            rows.append([k, n, m2[-1], float((y**2).std(ddof=1) / math.sqrt(samples)),
                         m4[-1], float((y**4).std(ddof=1) / math.sqrt(samples)), exact2[-1],
                         exact4[-1]])
        x = np.log(n_list)
        s2 = float(np.polyfit(x, np.log(m2), 1)[0])
        s4 = float(np.polyfit(x, np.log(m4), 1)[0])
        se = float(np.polyfit(x, np.log(exact2), 1)[0])
        slopes[k] = {"second": s2, "fourth": s4, "second_exact": se}
        if k == 1:
            slopes[k]["fourth_exact"] = float(np.polyfit(x, np.log(exact4), 1)[0])
        checks[f"k={k}"] = abs(s2) <= slope_tol and abs(s4) <= slope_tol
    return SuiteReport("moments", all(checks.values()), {"slopes": slopes, "checks": checks},
                       ["k", "n", "second", "second_se", "fourth", "fourth_se", "second_exact",
                        "fourth_exact"],
                       rows, {"model": spec.as_dict(), "phi": phi.as_dict(), "k_list": list(k_list),
                              "n_list": list(n_list), "samples": samples}, {"master": seed})


SUITES = {
    "duality": suite_duality, "orthogonality": suite_orthogonality, "recursion": suite_recursion,
    "gradient": suite_gradient, "carre_du_champ": suite_carre_du_champ, "taylor": suite_taylor,
    "drift_scaling": suite_drift_scaling, "qv_replacement": suite_qv_replacement,
    "martingale": suite_martingale, "covariance": suite_covariance, "moments": suite_moments,
}

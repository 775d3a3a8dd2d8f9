"""Single-site orthogonal duality polynomials and their product extensions.

The generating function of the weighted polynomials is
``f(t, n) = sum_m dd(m, n) t**m = e(t) * h(t)**n`` with ``e`` either an
exponential or a binomial power and ``h`` a Moebius-type rational function.
Several printed sign conventions for ``e`` and ``h`` are not mutually
consistent, so :func:`resolve_convention` searches the candidates and keeps
the first one that is mean-zero, orthogonal and exactly dual.
"""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import series
from .core_model import (
    DEFAULT_LAMBDA_READING, LAMBDA_READINGS, DualConfig, Kernel, ModelSpec, Torus,
    lambda_weight, nearest_neighbor_kernel, nu_marginal_pmf, nu_marginal_ratio,
    raw_moments,
)

__all__ = [
    "GeneratingPair", "DualityTable", "ProductDuality",
    "NoConsistentConvention", "TableOverflow", "TruncationTooSmall",
    "build_generating_pair", "candidate_pairs", "resolve_convention", "resolve_lambda",
    "build_table", "default_table", "gram_schmidt_oracle", "poly_in_n",
    "exact_gram", "truncated_gram", "eval_D", "eval_DD", "mu_of",
]

SIGN_ORDER = ((1, 1), (1, -1), (-1, 1), (-1, -1))


class NoConsistentConvention(RuntimeError):
    pass


class TableOverflow(ValueError):
    pass


class TruncationTooSmall(ValueError):
    pass


# ---------------------------------------------------------------------------
# generating pairs


@dataclass(frozen=True)
class GeneratingPair:
    """Closed-form ``e(t)`` and ``h(t) = (1 + b t) / (1 + q t)`` plus truncations.

    ``e_kind`` is ``"exp"`` for ``exp(e_a t)`` or ``"pow"`` for
    ``(1 + e_a t)**e_beta``.
    """

    spec: ModelSpec
    order: int
    e_kind: str
    e_a: Fraction
    e_beta: Fraction
    h_b: Fraction
    h_q: Fraction
    sign_e: int
    sign_h: int
    source: str
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    # coefficient sequences -------------------------------------------------
    def e_series(self, order: int | None = None) -> list[Fraction]:
        order = self.order if order is None else order
        if self.e_kind == "exp":
            return series.exponential_series(self.e_a, order)
        return series.binomial_series(self.e_a, self.e_beta, order)

    def h_series(self, order: int | None = None) -> list[Fraction]:
        order = self.order if order is None else order
        den = series.inverse([Fraction(1), self.h_q], order)
        return series.mul([Fraction(1), self.h_b], den, order)

    def h_inv_series(self, order: int | None = None) -> list[Fraction]:
        order = self.order if order is None else order
        return series.inverse(self.h_series(order), order)

    @property
    def e_coeffs(self) -> list[Fraction]:
        return self.e_series()

    @property
    def h_coeffs(self) -> list[Fraction]:
        return self.h_series()

    @property
    def h_inv_coeffs(self) -> list[Fraction]:
        return self.h_inv_series()

    def log_e(self, order: int) -> list[Fraction]:
        """Coefficients of ``log e(t)`` (zero constant term)."""
        out = [Fraction(0)] * (order + 1)
        if self.e_kind == "exp":
            if order >= 1:
                out[1] = self.e_a
            return out
        for q in range(1, order + 1):
            out[q] = self.e_beta * (-1) ** (q + 1) * self.e_a**q / q
        return out

    def log_h(self, order: int) -> list[Fraction]:
        out = [Fraction(0)] * (order + 1)
        for q in range(1, order + 1):
            out[q] = (-1) ** (q + 1) * (self.h_b**q - self.h_q**q) / q
        return out

    def with_metadata(self, **extra) -> "GeneratingPair":
        meta = dict(self.metadata)
        meta.update(extra)
        return GeneratingPair(self.spec, self.order, self.e_kind, self.e_a, self.e_beta,
                              self.h_b, self.h_q, self.sign_e, self.sign_h, self.source, meta)

    @property
    def lambda_reading(self) -> str:
        return self.metadata.get("lambda_reading", DEFAULT_LAMBDA_READING[self.spec.sigma])

    def describe(self) -> str:
        if self.e_kind == "exp":
            e = f"exp({self.e_a} t)"
        else:
            e = f"(1 + {self.e_a} t)^({self.e_beta})"
        return f"e(t) = {e}, h(t) = (1 + {self.h_b} t)/(1 + {self.h_q} t)"

    def as_dict(self) -> dict:
        return {
            "model": self.spec.as_dict(), "source": self.source,
            "sign_e": self.sign_e, "sign_h": self.sign_h,
            "e_kind": self.e_kind, "e_a": str(self.e_a), "e_beta": str(self.e_beta),
            "h_b": str(self.h_b), "h_q": str(self.h_q), "formula": self.describe(),
            "lambda_reading": self.lambda_reading,
        }


def _pair(spec, order, e, h_b, h_q, sign_e, sign_h, source):
    kind, a, beta = e
    return GeneratingPair(spec, order, kind, Fraction(a), Fraction(beta),
                          Fraction(h_b), Fraction(h_q), sign_e, sign_h, source)


def _ansatz_e(spec, sign_e):
    if spec.sigma == 0:
        return ("exp", -sign_e, 0)
    # (1 + sigma t)^(sigma alpha) evaluated at sign_e * t
    return ("pow", spec.sigma * sign_e, spec.sigma * spec.alpha)


def _family_e(spec, sign_e):
    if spec.sigma == 0:
        return ("exp", -sign_e, 0)
    if spec.sigma == -1:
        return ("pow", sign_e, spec.alpha)      # (1 + t)^alpha
    return ("pow", -sign_e, -spec.alpha)        # (1 - t)^(-alpha)


def build_generating_pair(spec: ModelSpec, order: int, sign_e: int = 1, sign_h: int = 1,
                          source: str = "ansatz") -> GeneratingPair:
    """Truncated ``e(sign_e t)`` and ``h(sign_h t)``.

    ``source="ansatz"`` uses ``h = (1 - c_{-sigma} t)/(1 - sigma t)`` and
    ``e = exp(-t)`` or ``(1 + sigma t)**(sigma alpha)``; ``source="family"``
    uses the Charlier / Krawtchouk / Meixner generating functions.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    if sign_e not in (1, -1) or sign_h not in (1, -1):
        raise ValueError("signs must be +1 or -1")
    s, a, rho = spec.sigma, spec.alpha, spec.rho
    if source == "ansatz":
        c_minus = {0: 1 / rho, 1: a / rho, -1: (a + rho) / rho}[-s]
        return _pair(spec, order, _ansatz_e(spec, sign_e), -c_minus * sign_h, -s * sign_h,
                     sign_e, sign_h, source)
    if source == "family":
        if s == 0:
            b, q = -1 / rho, 0
        elif s == -1:
            b, q = -a / rho, 1
        else:
            b, q = -(a + rho) / rho, -1
        return _pair(spec, order, _family_e(spec, sign_e), b * sign_h, q * sign_h,
                     sign_e, sign_h, source)
    raise ValueError(f"unknown source {source!r}")


def mean_zero_repair(spec: ModelSpec, order: int, e_source: str, sign_e: int) -> GeneratingPair:
    """Keep ``e`` and solve the numerator of ``h`` from ``e'(0) = -rho h'(0)``;
    the denominator stays ``1 - sigma t``."""
    e = (_ansatz_e if e_source == "ansatz" else _family_e)(spec, sign_e)
    kind, a, beta = e
    e1 = Fraction(a) if kind == "exp" else Fraction(a) * Fraction(beta)
    h1 = -e1 / spec.rho
    q = -spec.sigma
    return _pair(spec, order, e, h1 + q, q, sign_e, 1, f"mean_zero_repair[{e_source}]")


def candidate_pairs(spec: ModelSpec, order: int,
                    sources: Sequence[str] = ("ansatz", "family", "repair")) -> list[GeneratingPair]:
    out = []
    for src in sources:
        if src == "repair":
            for e_src in ("ansatz", "family"):
                for se in (1, -1):
                    out.append(mean_zero_repair(spec, order, e_src, se))
        else:
            for se, sh in SIGN_ORDER:
                out.append(build_generating_pair(spec, order, se, sh, src))
    return out


# ---------------------------------------------------------------------------
# polynomial structure in n


def poly_in_n(pair: GeneratingPair, m_max: int) -> list[list[Fraction]]:
    """``P[m][j]``: coefficient of ``n**j`` in ``dd(m, n)``.

    Uses ``f(t, n) = e(t) exp(n log h(t))`` so every degree is produced without
    reference to the column recursion.
    """
    log_h = pair.log_h(m_max)
    e = pair.e_series(m_max)
    # powers[j] = (log h)^j / j!
    powers = [[Fraction(1)] + [Fraction(0)] * m_max]
    for j in range(1, m_max + 1):
        nxt = series.mul(powers[-1], log_h, m_max)
        powers.append([c / j for c in nxt])
    out = []
    for m in range(m_max + 1):
        coeffs = [Fraction(0)] * (m + 1)
        for j in range(m + 1):
            # [t^m] e(t) * powers[j](t)
            coeffs[j] = sum((e[m - i] * powers[j][i] for i in range(m + 1)), Fraction(0))
        out.append(coeffs)
    return out


def _poly_eval(coeffs, n):
    acc = 0 * coeffs[0]
    for c in reversed(coeffs):
        acc = acc * n + c
    return acc


def _poly_mul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def _expect(spec, poly, moments):
    return sum((c * moments[j] for j, c in enumerate(poly)), Fraction(0))


def max_degree(spec: ModelSpec, m_max: int) -> int:
    return min(m_max, spec.cap) if spec.cap is not None else m_max


def exact_gram(spec: ModelSpec, pair: GeneratingPair, m_max: int) -> list[list[Fraction]]:
    """``G[m][m'] = E[dd(m, eta) dd(m', eta)]`` exactly, via raw moments."""
    top = max_degree(spec, m_max)
    P = poly_in_n(pair, top)
    moments = raw_moments(spec, 2 * top)
    return [[_expect(spec, _poly_mul(P[a], P[b]), moments) for b in range(top + 1)]
            for a in range(top + 1)]


def truncated_gram(spec: ModelSpec, pair: GeneratingPair, m_max: int,
                   tail_tol: float = 1e-16, n_limit: int = 4000):
    """Floating Gram matrix by summing over occupancies with a certified tail.

    Returns ``(G, n_used, tail_bound)``.  For ``sigma = -1`` the sum is finite
    and the bound is zero.  Otherwise the tail of ``sum_n |dd(a,n) dd(b,n)| nu(n)``
    beyond ``N`` is dominated by a geometric series: ``|dd(m, n)|`` grows at most
    like ``C n**m`` and ``nu(n+1)/nu(n)`` is eventually decreasing.
    """
    top = max_degree(spec, m_max)
    P = poly_in_n(pair, top)
    Pf = [[float(c) for c in p] for p in P]
    if spec.cap is not None:
        ns = range(spec.cap + 1)
        G = np.zeros((top + 1, top + 1))
        for n in ns:
            v = np.array([_poly_eval(p, float(n)) for p in Pf])
            G += np.outer(v, v) * nu_marginal_pmf(spec, n)
        return G, spec.cap, 0.0
    # majorant |dd(m, n)| <= A_m (n + 1)^m
    A = max(sum(abs(c) for c in p) for p in Pf)
    G = np.zeros((top + 1, top + 1))
    n = 0
    log_pmf = math.log(nu_marginal_pmf(spec, 0))
    while True:
        pmf = math.exp(log_pmf)
        v = np.array([_poly_eval(p, float(n)) for p in Pf])
        G += np.outer(v, v) * pmf
        n += 1
        log_pmf += math.log(nu_marginal_ratio(spec, n - 1))
        if n > 8:
            ratio_bound = ((n + 2) / (n + 1)) ** (2 * top) * max(
                nu_marginal_ratio(spec, j) for j in (n, n + 1, n + 2))
            # the pmf ratio is monotone beyond its mode, so the max above covers j >= n
            if ratio_bound < 1 and nu_marginal_ratio(spec, n) >= nu_marginal_ratio(spec, n + 1):
                term = A * A * (n + 1) ** (2 * top) * math.exp(log_pmf)
                tail = term / (1 - ratio_bound)
                if tail < tail_tol:
                    return G, n - 1, tail
        if n > n_limit:
            raise TruncationTooSmall(
                f"tail bound above {tail_tol} after {n_limit} terms for {spec.label()}")


def gram_schmidt_oracle(spec: ModelSpec, m_max: int) -> list[list[Fraction]]:
    """Monic orthogonal polynomials (coefficients in powers of ``n``) for the
    single-site marginal, by Gram-Schmidt on ``1, n, n**2, ...``."""
    top = max_degree(spec, m_max)
    moments = raw_moments(spec, 2 * top)
    basis: list[list[Fraction]] = []
    for m in range(top + 1):
        q = [Fraction(0)] * m + [Fraction(1)]
        for b in basis:
            num = _expect(spec, _poly_mul(q, b), moments)
            den = _expect(spec, _poly_mul(b, b), moments)
            coef = num / den
            q = [qi - coef * (b[i] if i < len(b) else 0) for i, qi in enumerate(q)]
        basis.append(q)
    return basis


# ---------------------------------------------------------------------------
# lambda and convention resolution


def _is_geometric(values: Sequence[Fraction]) -> bool:
    if any(v == 0 for v in values):
        return False
    r = [values[m + 1] / values[m] for m in range(len(values) - 1)]
    return all(x == r[0] for x in r)


def resolve_lambda(spec: ModelSpec, pair: GeneratingPair, m_max: int = 4) -> str | None:
    """Pick the lambda reading that makes ``Lambda / mu`` constant on each ``Omega_k``.

    With ``mu(xi) = prod lambda(xi_i)**2 / E[dd(xi_i)**2]`` the ratio is
    ``prod E[dd(xi_i)**2] / lambda(xi_i)``, constant on ``Omega_k`` iff
    ``E[dd(m)**2] / lambda(m)`` is geometric in ``m``.
    """
    top = max_degree(spec, m_max)
    G = exact_gram(spec, pair, top)
    for reading in LAMBDA_READINGS[spec.sigma]:
        vals = [G[m][m] / lambda_weight(spec, m, reading) for m in range(top + 1)]
        if _is_geometric(vals):
            return reading
    return None


def _small_occupancies(spec: ModelSpec, torus: Torus, count: int, cap: int, seed: int = 0):
    """Deterministic pool of occupancies with every count at most ``cap``."""
    cap = min(cap, spec.cap) if spec.cap is not None else cap
    if (cap + 1) ** torus.V <= count:
        return [np.array(c, dtype=np.int64) for c in itertools.product(range(cap + 1), repeat=torus.V)]
    rng = np.random.default_rng(seed)
    return [rng.integers(0, cap + 1, size=torus.V) for _ in range(count)]


def dual_configs(torus: Torus, k: int, spec: ModelSpec | None = None) -> list[DualConfig]:
    """All of ``Omega_k`` on the torus (respecting the exclusion cap)."""
    out = []
    for sites in itertools.combinations_with_replacement(range(torus.V), k):
        xi = DualConfig.from_sites(sites)
        if spec is not None and spec.cap is not None and any(c > spec.cap for c in xi.values()):
            continue
        out.append(xi)
    return out


def _duality_ok(spec, kernel, torus, table, k_max, n_eta, cap) -> tuple[bool, int]:
    from .dynamics import check_duality_pointwise  # local: dynamics imports this module

    pd = ProductDuality(table)
    etas = _small_occupancies(spec, torus, n_eta, cap)
    checked = 0
    for k in range(k_max + 1):
        for xi in dual_configs(torus, k, spec):
            for eta in etas:
                if check_duality_pointwise(spec, kernel, torus, xi, eta, pd) != 0:
                    return False, checked
                checked += 1
    return True, checked


@functools.lru_cache(maxsize=64)
def _resolve_cached(spec: ModelSpec, torus: Torus, kernel: Kernel, order: int,
                    sources: tuple[str, ...], k_max: int, n_eta: int) -> GeneratingPair:
    attempts = []
    cap = 3
    for pair in candidate_pairs(spec, order, sources):
        record = {"source": pair.source, "sign_e": pair.sign_e, "sign_h": pair.sign_h,
                  "formula": pair.describe()}
        attempts.append(record)
        P = poly_in_n(pair, 1)
        mean1 = P[1][0] + P[1][1] * spec.rho
        record["mean_dd1"] = str(mean1)
        if mean1 != 0:
            record["verdict"] = "mean-zero fails"
            continue
        if spec.cap is not None:
            top = max(order, spec.cap + 1)
            cols = build_table(spec, pair, top, spec.cap).dd
            if any(cols[m][n] != 0 for m in range(spec.cap + 1, top + 1) for n in range(spec.cap + 1)):
                record["verdict"] = "degree cap fails (dd(m, n) != 0 for m > alpha)"
                continue
        G = exact_gram(spec, pair, order)
        off = [G[a][b] for a in range(len(G)) for b in range(len(G)) if a != b]
        if any(x != 0 for x in off):
            record["verdict"] = "orthogonality fails"
            continue
        reading = resolve_lambda(spec, pair, order)
        if reading is None:
            record["verdict"] = "no lambda reading makes Lambda/mu constant"
            continue
        record["lambda_reading"] = reading
        tagged = pair.with_metadata(lambda_reading=reading)
        table = build_table(spec, tagged, m_max=k_max, n_max=cap + 2)
        ok, checked = _duality_ok(spec, kernel, torus, table, k_max, n_eta, cap)
        record["duality_checks"] = checked
        if not ok:
            record["verdict"] = "generator duality fails"
            continue
        record["verdict"] = "selected"
        return tagged.with_metadata(
            attempts=attempts, selected=record, torus={"d": torus.d, "L": torus.L},
            degree1_constant=str(-tagged.h_series(1)[1]),
            printed_constant=str(spec.c_printed))
    raise NoConsistentConvention(
        f"no candidate passes mean-zero, orthogonality and duality for {spec.label()}: "
        + "; ".join(f"{a['source']}{(a['sign_e'], a['sign_h'])}: {a['verdict']}" for a in attempts))


def resolve_convention(spec: ModelSpec, torus: Torus | None = None, kernel: Kernel | None = None,
                       order: int = 4, sources: Sequence[str] = ("ansatz", "family", "repair"),
                       k_max: int = 3, n_eta: int = 40) -> GeneratingPair:
    """Select the generating pair; the decision trail is in ``pair.metadata``.

    Candidates are tried in order: printed ansatz with sign choices
    (+,+), (+,-), (-,+), (-,-); then the named polynomial families with the
    same sign order; then the mean-zero repair.  A candidate is accepted when
    the degree-one polynomial is centred, (for exclusion) every degree above
    ``alpha`` vanishes on the allowed occupancies, the Gram matrix up to ``order`` is
    exactly diagonal, some lambda reading makes ``Lambda / mu`` constant, and
    generator duality holds exactly for every ``k <= k_max`` on the small torus.
    """
    torus = torus or Torus(1, 5)
    if torus.V > 8:
        raise ValueError("convention resolution wants a torus with at most 8 sites")
    kernel = kernel or nearest_neighbor_kernel(torus.d)
    torus.check_kernel(kernel)
    return _resolve_cached(spec, torus, kernel, order, tuple(sources), k_max, n_eta)


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class DualityTable:
    """Exact table ``dd[m][n]`` of weighted duality polynomials."""

    spec: ModelSpec
    pair: GeneratingPair
    m_max: int
    n_max: int
    dd: tuple
    g: tuple
    g_tilde: tuple
    c_sigma: Fraction
    norm_sq: tuple  # E[dd(m, eta)^2] under nu_rho, exact
    lambda_reading: str

    @property
    def mu_single(self) -> tuple:
        """Per-degree ``E[d(m, eta)^2]`` where ``d = dd / lambda``."""
        return tuple(self.norm_sq[m] / self.lam(m) ** 2 for m in range(len(self.norm_sq)))

    def lam(self, m: int) -> Fraction:
        return lambda_weight(self.spec, m, self.lambda_reading)

    def value(self, m: int, n: int) -> Fraction:
        if m > self.m_max or n > self.n_max or n < 0 or m < 0:
            raise TableOverflow(f"dd({m}, {n}) outside table ({self.m_max}, {self.n_max})")
        return self.dd[m][n]

    def d_value(self, m: int, n: int) -> Fraction:
        return self.value(m, n) / self.lam(m)

    def extended(self, m_max: int | None = None, n_max: int | None = None) -> "DualityTable":
        """A new, larger table (tables are never mutated)."""
        m_max = max(self.m_max, m_max or 0)
        n_max = max(self.n_max, n_max or 0)
        if m_max == self.m_max and n_max == self.n_max:
            return self
        return build_table(self.spec, self.pair, m_max, n_max)

    def as_float(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.dd])

    @property
    def degree1_constant(self) -> Fraction:
        """``c`` with ``dd(1, n) = -c (n - rho)`` (equal to ``g_tilde(1)``)."""
        return self.c_sigma

    def dump_csv(self, path) -> Path:
        """Rows ``(m, n, numerator, denominator)`` plus a JSON sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "numerator", "denominator"])
            for m, row in enumerate(self.dd):
                for n, v in enumerate(row):
                    w.writerow([m, n, v.numerator, v.denominator])
        side = path.with_suffix(".json")
        meta = self.pair.as_dict()
        meta.update({"m_max": self.m_max, "n_max": self.n_max, "c_sigma": str(self.c_sigma),
                     "c_printed": str(self.spec.c_printed),
                     "lambda_reading": self.lambda_reading,
                     "g": [str(x) for x in self.g], "g_tilde": [str(x) for x in self.g_tilde]})
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path


def build_table(spec: ModelSpec, pair: GeneratingPair, m_max: int, n_max: int) -> DualityTable:
    """Columns by the shift recursion ``dd(., n+1) = dd(., n) * h`` from ``dd(., 0) = e``."""
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    e = pair.e_series(m_max)
    h = pair.h_series(m_max)
    hi = pair.h_inv_series(m_max)
    cols = [e]
    for _ in range(n_max):
        cols.append(series.mul(cols[-1], h, m_max))
    dd = tuple(tuple(cols[n][m] for n in range(n_max + 1)) for m in range(m_max + 1))
    G = exact_gram(spec, pair, m_max)
    norm_sq = tuple(G[m][m] for m in range(len(G)))
    reading = pair.lambda_reading
    g = (Fraction(1),) + tuple(h[1:])
    g_tilde = (Fraction(1),) + tuple(hi[1:])
    return DualityTable(spec, pair, m_max, n_max, dd, g, g_tilde, g_tilde[1], norm_sq, reading)


@functools.lru_cache(maxsize=64)
def default_table(spec: ModelSpec, m_max: int = 4, n_max: int = 40) -> DualityTable:
    pair = resolve_convention(spec, order=max(4, m_max))
    return build_table(spec, pair, m_max, n_max)


# ---------------------------------------------------------------------------
# product duality functions


class ProductDuality:
    """``D(xi, eta) = prod d(xi_i, eta_i)`` and ``DD = Lambda D = prod dd``."""

    def __init__(self, table: DualityTable):
        self.table = table

    def _ensure(self, xi: DualConfig, eta) -> None:
        need_m = max(xi.values(), default=0)
        need_n = max((int(eta[s]) for s in xi), default=0)
        if need_m > self.table.m_max or need_n > self.table.n_max:
            if self.table.spec.cap is not None and need_m > self.table.spec.cap:
                raise TableOverflow(f"degree {need_m} above exclusion cap")
            self.table = self.table.extended(need_m, max(need_n, self.table.n_max))

    def eval_DD(self, xi: DualConfig, eta) -> Fraction:
        self._ensure(xi, eta)
        out = Fraction(1)
        for s, m in xi.items():
            out *= self.table.dd[m][int(eta[s])]
        return out

    def eval_D(self, xi: DualConfig, eta) -> Fraction:
        self._ensure(xi, eta)
        out = Fraction(1)
        for s, m in xi.items():
            out *= self.table.dd[m][int(eta[s])] / self.table.lam(m)
        return out

    def mu_of(self, xi: DualConfig) -> Fraction:
        """``(E[D(xi, .)^2])^{-1}`` as a product of per-site factors."""
        out = Fraction(1)
        t = self.table
        for m in xi.values():
            if t.spec.cap is not None and m > t.spec.cap:
                raise TableOverflow(f"degree {m} above exclusion cap")
            if m > t.m_max:
                t = t.extended(m_max=m)
                self.table = t
            out *= t.lam(m) ** 2 / t.norm_sq[m]
        return out


def eval_D(pd: ProductDuality, xi: DualConfig, eta) -> Fraction:
    return pd.eval_D(xi, eta)


def eval_DD(pd: ProductDuality, xi: DualConfig, eta) -> Fraction:
    return pd.eval_DD(xi, eta)


def mu_of(pd: ProductDuality, xi: DualConfig) -> Fraction:
    return pd.mu_of(xi)

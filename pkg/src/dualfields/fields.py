"""k-th order fluctuation fields and the functionals built on them.

Every field is the ``t**k`` coefficient of a product of per-site series
``S_x(t) = sum_m dd(m, eta_x) phi(x/n)**m t**m``.  The generic routines below
work on ``Fraction`` or ``float`` scalars (a segment tree of truncated
products); :class:`PowerSumField` is the fast floating-point path used for
Monte Carlo, built on the logarithmic power-sum form of the same product.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import fastsim, series
from .core_model import DualConfig, Kernel, ModelSpec, Torus, pi_weight
from .dynamics import InadmissibleMove, Trajectory, moved, moves
from .orthopoly import DualityTable, ProductDuality, TableOverflow, dual_configs

__all__ = [
    "TestFunction", "test_function", "ProductTree", "FieldSample", "MartingaleSample",
    "GridBeyondHorizon", "site_values", "field_eval", "field_eval_mixed",
    "field_eval_coordinate_form", "field_eval_enumerated", "grad_field", "z_field",
    "grad_decomposition", "grad_s1_term", "drift_exact", "drift_dual_form", "drift_closed",
    "carre_du_champ_exact", "carre_du_champ_definition", "qv_closed", "gradient_energy",
    "dynkin_martingale", "PowerSumField",
]


class GridBeyondHorizon(ValueError):
    pass


# ---------------------------------------------------------------------------
# test functions

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class TestFunction:
    """A periodic test function on ``[0, 1)^d`` with analytic derivatives.

    ``kind`` is one of ``sin``, ``cos``, ``gauss``, ``constant``, ``bump``.
    ``bump`` is the polynomial ``scale * prod_l (u_l (1 - u_l))**2``; it is only
    C^1 across the boundary but takes rational values at rational points, which
    is what the exact-arithmetic identity checks need.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    freq: int = 1
    width: float = 0.1
    center: float = 0.5
    value: Fraction = Fraction(1)

    @property
    def rational(self) -> bool:
        return self.kind in ("constant", "bump")

    @property
    def smooth(self) -> bool:
        return self.kind in ("sin", "cos", "gauss", "constant")

    def as_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("sin", "cos"):
            out["freq"] = self.freq
        if self.kind == "gauss":
            out.update(width=self.width, center=self.center)
        if self.kind in ("constant", "bump"):
            out["value"] = str(self.value)
        return out

    # factors per axis ---------------------------------------------------
    def _axis(self, u: np.ndarray):
        f = self.freq
        if self.kind == "sin":
            a = TWO_PI * f * u
            return np.sin(a), TWO_PI * f * np.cos(a), -(TWO_PI * f) ** 2 * np.sin(a)
        if self.kind == "cos":
            a = TWO_PI * f * u
            return np.cos(a), -TWO_PI * f * np.sin(a), -(TWO_PI * f) ** 2 * np.cos(a)
        if self.kind == "gauss":
            v = np.zeros_like(u)
            g = np.zeros_like(u)
            l2 = np.zeros_like(u)
            w2 = self.width**2
            for z in range(-4, 5):
                y = u - self.center - z
                e = np.exp(-(y**2) / (2 * w2))
                v += e
                g += -y / w2 * e
                l2 += (y**2 / w2**2 - 1 / w2) * e
            return v, g, l2
        if self.kind == "bump":
            q = u * (1 - u)
            return q**2, 2 * q * (1 - 2 * u), 2 * (1 - 2 * u) ** 2 - 4 * q
        if self.kind == "constant":
            return np.ones_like(u), np.zeros_like(u), np.zeros_like(u)
        raise ValueError(f"unknown test function kind {self.kind!r}")

    def _amp(self) -> float:
        return float(self.value) if self.kind in ("constant", "bump") else 1.0

    def phi(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        vals = [self._axis(u[:, l])[0] for l in range(u.shape[1])]
        return self._amp() * np.prod(vals, axis=0)

    def grad(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        parts = [self._axis(u[:, l]) for l in range(u.shape[1])]
        d = len(parts)
        out = np.empty((u.shape[0], d))
        for l in range(d):
            term = parts[l][1].copy()
            for m in range(d):
                if m != l:
                    term = term * parts[m][0]
            out[:, l] = term
        return self._amp() * out

    def laplace(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        parts = [self._axis(u[:, l]) for l in range(u.shape[1])]
        d = len(parts)
        out = np.zeros(u.shape[0])
        for l in range(d):
            term = parts[l][2].copy()
            for m in range(d):
                if m != l:
                    term = term * parts[m][0]
            out += term
        return self._amp() * out

    def exact_values(self, torus: Torus) -> list[Fraction]:
        if not self.rational:
            raise TypeError(f"{self.kind} has no exact rational values")
        out = []
        for s in range(torus.V):
            v = Fraction(self.value)
            if self.kind == "bump":
                for c in torus.coords(s):
                    u = Fraction(c, torus.L)
                    v *= (u * (1 - u)) ** 2
            out.append(v)
        return out

    def exact_laplace(self, torus: Torus) -> list[Fraction]:
        if not self.rational:
            raise TypeError(f"{self.kind} has no exact rational values")
        out = []
        for s in range(torus.V):
            if self.kind == "constant":
                out.append(Fraction(0))
                continue
            us = [Fraction(c, torus.L) for c in torus.coords(s)]
            total = Fraction(0)
            for l, u in enumerate(us):
                term = 2 * (1 - 2 * u) ** 2 - 4 * u * (1 - u)
                for m, w in enumerate(us):
                    if m != l:
                        term *= (w * (1 - w)) ** 2
                total += term
            out.append(self.value * total)
        return out


def test_function(spec: dict | str) -> TestFunction:
    """Build a TestFunction from a name or a ``{"kind": ..., ...}`` mapping."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind")
    if "value" in spec:
        spec["value"] = Fraction(str(spec["value"]))
    return TestFunction(kind, **spec)


test_function.__test__ = False


def site_values(phi, torus: Torus, exact: bool = False, laplace: bool = False):
    """Values of ``phi`` (or its Laplacian) at ``x / n`` for every site."""
    if isinstance(phi, TestFunction):
        if exact:
            return phi.exact_laplace(torus) if laplace else phi.exact_values(torus)
        pts = torus.points()
        return list((phi.laplace(pts) if laplace else phi.phi(pts)).astype(float))
    if laplace:
        raise TypeError("Laplacian needs a TestFunction")
    vals = list(phi)
    if len(vals) != torus.V:
        raise ValueError("site value list has the wrong length")
    return vals


def _half_power(n: int, e2: int, exact: bool):
    """``n**(e2/2)``, exact when ``e2`` is even and ``exact`` is requested."""
    if e2 % 2 == 0:
        return Fraction(n) ** (e2 // 2) if exact else float(n) ** (e2 // 2)
    return float(n) ** (e2 / 2)


# ---------------------------------------------------------------------------
# segment tree of truncated products


class ProductTree:
    """Balanced binary tree whose nodes hold truncated products of leaf series.

    Works for any scalar type supporting ``+`` and ``*``.  Leaves are padded
    to a power of two with the unit series.
    """

    def __init__(self, leaves: Sequence[Sequence], order: int):
        self.order = order
        self.count = len(leaves)
        size = 1
        while size < max(1, self.count):
            size *= 2
        self.size = size
        proto = leaves[0][0] if leaves else 1
        self.one = [proto * 0 + 1] + [proto * 0] * order
        self.nodes: list = [None] * (2 * size)
        for i in range(size):
            self.nodes[size + i] = series.pad(leaves[i], order, proto * 0) if i < self.count else self.one
        for i in range(size - 1, 0, -1):
            self.nodes[i] = series.mul(self.nodes[2 * i], self.nodes[2 * i + 1], order)

    @property
    def root(self) -> list:
        return self.nodes[1]

    def update(self, index: int, leaf: Sequence) -> None:
        i = self.size + index
        self.nodes[i] = series.pad(leaf, self.order, self.one[0] * 0)
        i //= 2
        while i:
            self.nodes[i] = series.mul(self.nodes[2 * i], self.nodes[2 * i + 1], self.order)
            i //= 2

    def root_with(self, substitutions: dict) -> list:
        """Root after replacing some leaves, without mutating the tree."""
        changed = {self.size + idx: series.pad(leaf, self.order, self.one[0] * 0)
                   for idx, leaf in substitutions.items()}
        level = set(changed)
        while level and 1 not in level:
            parents = {i // 2 for i in level}
            for p in parents:
                left = changed.get(2 * p, self.nodes[2 * p])
                right = changed.get(2 * p + 1, self.nodes[2 * p + 1])
                changed[p] = series.mul(left, right, self.order)
            level = parents
        return changed.get(1, self.nodes[1])

    def sequential_root(self) -> list:
        acc = self.one
        for i in range(self.count):
            acc = series.mul(acc, self.nodes[self.size + i], self.order)
        return acc


def _dd_at(table: DualityTable, m: int, n: int, exact: bool):
    if n > table.n_max or m > table.m_max:
        raise TableOverflow(f"dd({m}, {n}) outside table; extend it first")
    v = table.dd[m][n]
    return v if exact else float(v)


def _leaf(table, k, eta_x, phi_x, exact):
    top = min(k, table.spec.cap) if table.spec.cap is not None else k
    out = [_dd_at(table, 0, int(eta_x), exact)]
    p = phi_x * 0 + 1
    for m in range(1, k + 1):
        p = p * phi_x
        out.append(_dd_at(table, m, int(eta_x), exact) * p if m <= top else p * 0)
    return out


def _prepare(table: DualityTable, k: int, eta, extra: int = 1) -> DualityTable:
    need = int(np.max(eta)) + extra if len(eta) else extra
    if need > table.n_max or k > table.m_max:
        table = table.extended(max(k, table.m_max), max(need, table.n_max))
    return table


def _tree(table, k, phi_vals, eta, exact):
    return ProductTree([_leaf(table, k, eta[x], phi_vals[x], exact) for x in range(len(eta))], k)


@dataclass(frozen=True)
class FieldSample:
    value: float | Fraction
    raw: float | Fraction
    k: int
    n: int
    model: str
    convention: str


def field_eval(k: int, table: DualityTable, phi, eta, torus: Torus, exact: bool = False) -> FieldSample:
    """``Y^(n,k)(Phi, eta) = n^{-kd/2} [t^k] prod_x S_x(t)``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta, 0)
    phi_vals = site_values(phi, torus, exact)
    raw = _tree(table, k, phi_vals, eta, exact).root[k] if k else (Fraction(1) if exact else 1.0)
    scale = _half_power(torus.n, -k * torus.d, exact)
    return FieldSample(raw * scale, raw, k, torus.n, table.spec.label(),
                       f"{table.pair.source}{(table.pair.sign_e, table.pair.sign_h)}")


def field_eval_enumerated(k: int, table: DualityTable, phi, eta, torus: Torus, exact: bool = True):
    """Brute force ``n^{-kd/2} sum_{xi in Omega_k} Phi_n(xi) DD(xi, eta)`` (small tori only)."""
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta, 0)
    phi_vals = site_values(phi, torus, exact)
    pd = ProductDuality(table)
    total = Fraction(0) if exact else 0.0
    for xi in dual_configs(torus, k, table.spec):
        w = Fraction(1) if exact else 1.0
        for s, c in xi.items():
            w *= phi_vals[s] ** c
        v = pd.eval_DD(xi, eta)
        total += w * (v if exact else float(v))
    return total * _half_power(torus.n, -k * torus.d, exact)


def field_eval_mixed(k: int, table: DualityTable, phi, psi, eta, torus: Torus,
                     exact: bool = False):
    """Field acting on the tensor ``phi^(k-1) (x) psi`` through the derivative trick."""
    if k < 1:
        raise ValueError("mixed field needs k >= 1")
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta, 0)
    pv = site_values(phi, torus, exact)
    qv = psi if isinstance(psi, list) else site_values(psi, torus, exact)
    V = len(eta)
    leaves = [_leaf(table, k, eta[x], pv[x], exact) for x in range(V)]
    zero = leaves[0][0] * 0
    tangents = []
    top = min(k, table.spec.cap) if table.spec.cap is not None else k
    for x in range(V):
        t = [zero]
        for m in range(1, k + 1):
            if m > top:
                t.append(zero)
                continue
            t.append(_dd_at(table, m, int(eta[x]), exact) * m * pv[x] ** (m - 1) * qv[x])
        tangents.append(t)
    one = [zero + 1] + [zero] * k
    prefix = [one]
    for x in range(V):
        prefix.append(series.mul(prefix[-1], leaves[x], k))
    suffix = [one] * (V + 1)
    for x in range(V - 1, -1, -1):
        suffix[x] = series.mul(leaves[x], suffix[x + 1], k)
    acc = zero
    for x in range(V):
        acc += series.mul(series.mul(prefix[x], tangents[x], k), suffix[x + 1], k)[k]
    return acc * _half_power(torus.n, -k * torus.d, exact) / k


def field_eval_coordinate_form(k: int, table: DualityTable, f: Callable, eta, torus: Torus):
    """``n^{-kd/2} sum_x f(x) Pi(x) D(xi(x), eta)`` over coordinate vectors.

    With ``Pi(x) = prod xi_i! lambda(xi_i)`` this equals ``k!`` times the
    configuration-space field, so callers divide by ``k!`` to compare.
    """
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta, 0)
    pd = ProductDuality(table)
    total = Fraction(0)
    for x in itertools.product(range(torus.V), repeat=k):
        xi = DualConfig.from_sites(x)
        if table.spec.cap is not None and any(c > table.spec.cap for c in xi.values()):
            continue
        pi = Fraction(1)
        for c in xi.values():
            pi *= pi_weight(table.spec, c, table.lambda_reading)
        total += f(x) * pi * pd.eval_D(xi, eta)
    return total * _half_power(torus.n, -k * torus.d, True)


# ---------------------------------------------------------------------------
# gradients and auxiliary fields


def _check_move(spec: ModelSpec, eta, i: int, j: int):
    if i == j:
        raise InadmissibleMove("source and target coincide")
    if eta[i] < 1:
        raise InadmissibleMove(f"site {i} is empty")
    if spec.cap is not None and eta[j] >= spec.cap:
        raise InadmissibleMove(f"site {j} is full")


def _grad_raw(k, table, pv, eta, i, j, exact, tree=None):
    tree = tree or _tree(table, k, pv, eta, exact)
    new_i = _leaf(table, k, eta[i] - 1, pv[i], exact)
    new_j = _leaf(table, k, eta[j] + 1, pv[j], exact)
    return tree.root_with({i: new_i, j: new_j})[k] - tree.root[k]


def grad_field(k: int, table: DualityTable, phi, eta, i: int, j: int, torus: Torus,
               exact: bool = False):
    """``n^{d/2+1} (Y(eta^{i,j}) - Y(eta))`` by two-leaf substitution."""
    eta = np.asarray(eta, dtype=np.int64)
    _check_move(table.spec, eta, i, j)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, exact)
    raw = _grad_raw(k, table, pv, eta, i, j, exact)
    return raw * _half_power(torus.n, (1 - k) * torus.d + 2, exact)


def z_field(k: int, ell: int, table: DualityTable, phi, eta, i: int, j: int, torus: Torus,
            exact: bool = False):
    """``n^{-kd/2} sum_{xi in Omega_k : xi_i + xi_j = ell} Phi_n(xi) DD(xi, eta)``."""
    if not 0 <= ell <= k:
        raise ValueError("need 0 <= ell <= k")
    if i == j:
        raise ValueError("z_field needs two distinct sites")
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta, 0)
    pv = site_values(phi, torus, exact)
    tree = _tree(table, k, pv, eta, exact)
    one = tree.one
    rest = tree.root_with({i: one, j: one})
    si = _leaf(table, k, eta[i], pv[i], exact)
    sj = _leaf(table, k, eta[j], pv[j], exact)
    pair = sum((si[a] * sj[ell - a] for a in range(ell + 1)), one[0] * 0)
    return pair * rest[k - ell] * _half_power(torus.n, -k * torus.d, exact)


def grad_decomposition(k: int, table: DualityTable, phi, eta, i: int, j: int, torus: Torus,
                       exact: bool = False):
    """Gradient rebuilt from auxiliary fields of the configuration ``eta - delta_i``:

        sum_{m=1}^k sum_{s=m}^k n^{1-(m-1)d/2} g(m) (phi_j^m - phi_i^m) Z^{(n,k-m,s-m)}_{i,j}.
    """
    eta = np.asarray(eta, dtype=np.int64)
    _check_move(table.spec, eta, i, j)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, exact)
    base = eta.copy()
    base[i] -= 1
    total = pv[0] * 0
    for m in range(1, k + 1):
        coef = table.g[m] if exact else float(table.g[m])
        diff = pv[j] ** m - pv[i] ** m
        pref = _half_power(torus.n, 2 - (m - 1) * torus.d, exact)
        for s in range(m, k + 1):
            total += pref * coef * diff * z_field(k - m, s - m, table, pv, base, i, j, torus, exact)
    return total


def grad_s1_term(k: int, table: DualityTable, phi, eta, i: int, j: int, torus: Torus,
                 exact: bool = False):
    """The ``m = s = 1`` term: ``-c n (phi_j - phi_i) Z^{(n,k-1,0)}_{i,j}(eta - delta_i)``."""
    eta = np.asarray(eta, dtype=np.int64)
    pv = site_values(phi, torus, exact)
    base = eta.copy()
    base[i] -= 1
    c = table.c_sigma if exact else float(table.c_sigma)
    return -c * torus.n * (pv[j] - pv[i]) * z_field(k - 1, 0, table, pv, base, i, j, torus, exact)


# ---------------------------------------------------------------------------
# drift and carre-du-champ


def _rate(spec, eta, i, j, p, exact):
    r = p * int(eta[i]) * (spec.alpha + spec.sigma * int(eta[j]))
    return r if exact else float(r)


def drift_exact(k: int, table: DualityTable, phi, eta, torus: Torus, kernel: Kernel,
                spec: ModelSpec | None = None, exact: bool = False):
    """``n^2 [L Y^(n,k)](eta)`` by summing over every admissible jump."""
    spec = spec or table.spec
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, exact)
    tree = _tree(table, k, pv, eta, exact)
    total = pv[0] * 0
    for i, j, p in moves(kernel, torus):
        r = _rate(spec, eta, i, j, p, exact)
        if r:
            total += r * _grad_raw(k, table, pv, eta, i, j, exact, tree)
    return total * _half_power(torus.n, 4 - k * torus.d, exact)


def drift_dual_form(k: int, table: DualityTable, phi, eta, torus: Torus, kernel: Kernel):
    """``n^2 n^{-kd/2} sum_xi [L^(k) Phi_n](xi) DD(xi, eta)`` by enumeration (exact)."""
    spec = table.spec
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, True)
    pd = ProductDuality(table)

    def Phi(xi):
        out = Fraction(1)
        for s, c in xi.items():
            out *= pv[s] ** c
        return out

    total = Fraction(0)
    for xi in dual_configs(torus, k, spec):
        gen = Fraction(0)
        for i, c in xi.items():
            for r in kernel.support:
                j = torus.shift(i, r)
                rate = kernel.weights[r] * c * (spec.alpha + spec.sigma * xi.get(j, 0))
                if rate:
                    gen += rate * (Phi(xi.moved(i, j)) - Phi(xi))
        if gen:
            total += gen * pd.eval_DD(xi, eta)
    return total * _half_power(torus.n, 4 - k * torus.d, True)


def drift_closed(k: int, table: DualityTable, phi: TestFunction, eta, torus: Torus,
                 kernel: Kernel, spec: ModelSpec | None = None, exact: bool = False):
    """``alpha k (chi/2) X^(n,k)(phi^(k-1) (x) Laplace phi, eta)``."""
    spec = spec or table.spec
    lap = site_values(phi, torus, exact, laplace=True)
    mixed = field_eval_mixed(k, table, phi, lap, eta, torus, exact)
    coef = spec.alpha * k * kernel.chi / 2
    return (coef if exact else float(coef)) * mixed


def carre_du_champ_exact(k: int, table: DualityTable, phi, eta, torus: Torus, kernel: Kernel,
                         spec: ModelSpec | None = None, exact: bool = False):
    """``n^2 Gamma Y = n^{-d} sum_{x,r} rate (grad_field)^2`` (sum-of-squares form)."""
    spec = spec or table.spec
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, exact)
    tree = _tree(table, k, pv, eta, exact)
    total = pv[0] * 0
    for i, j, p in moves(kernel, torus):
        r = _rate(spec, eta, i, j, p, exact)
        if r:
            g = _grad_raw(k, table, pv, eta, i, j, exact, tree)
            total += r * g * g
    return total * _half_power(torus.n, 4 - 2 * k * torus.d, exact)


def carre_du_champ_definition(k: int, table: DualityTable, phi, eta, torus: Torus,
                              kernel: Kernel, spec: ModelSpec | None = None, exact: bool = False):
    """``n^2 (L(Y^2) - 2 Y L Y)`` evaluated literally."""
    spec = spec or table.spec
    eta = np.asarray(eta, dtype=np.int64)
    table = _prepare(table, k, eta)
    pv = site_values(phi, torus, exact)

    def Y(e):
        return _tree(table, k, pv, e, exact).root[k]

    y0 = Y(eta)
    l_sq = pv[0] * 0
    l_y = pv[0] * 0
    for i, j, p in moves(kernel, torus):
        r = _rate(spec, eta, i, j, p, exact)
        if r:
            y1 = Y(moved(eta, i, j))
            l_sq += r * (y1 * y1 - y0 * y0)
            l_y += r * (y1 - y0)
    return (l_sq - 2 * y0 * l_y) * _half_power(torus.n, 4 - 2 * k * torus.d, exact)


def gradient_energy(phi: TestFunction, torus: Torus, kernel: Kernel) -> tuple[float, np.ndarray, np.ndarray]:
    """``G = sum_x sum_r |<r, grad phi(x/n)>|^2 p(r)`` with its per-site and
    per-move pieces."""
    grads = phi.grad(torus.points())
    offsets = kernel.support
    per_move = np.empty((torus.V, len(offsets)))
    for m, r in enumerate(offsets):
        per_move[:, m] = (grads @ np.array(r, dtype=float)) ** 2 * float(kernel.weights[r])
    per_site = per_move.sum(axis=1)
    return float(per_site.sum()), per_site, per_move


def qv_closed(k: int, table: DualityTable, phi: TestFunction, eta, torus: Torus, kernel: Kernel,
              spec: ModelSpec | None = None) -> float:
    """``rho (alpha + sigma rho) c^2 n^{-d} (Y^(n,k-1))^2 sum_{x,r} |<r, grad phi>|^2 p(r)``
    with ``c`` the measured degree-one constant."""
    if k < 1:
        raise ValueError("qv_closed needs k >= 1")
    spec = spec or table.spec
    G, _, _ = gradient_energy(phi, torus, kernel)
    low = field_eval(k - 1, table, phi, eta, torus).value
    c = float(table.c_sigma)
    return float(spec.mobility) * c * c * G / torus.n**torus.d * float(low) ** 2


# ---------------------------------------------------------------------------
# Dynkin martingales along a recorded trajectory


@dataclass
class MartingaleSample:
    times: np.ndarray
    Y: np.ndarray
    drift_integral: np.ndarray
    cdc_integral: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return self.Y - self.Y[0] - self.drift_integral

    @property
    def N(self) -> np.ndarray:
        return self.M**2 - self.cdc_integral

    def to_csv(self, path, replica: int = 0, append: bool = False) -> Path:
        path = Path(path)
        new = not (append and path.exists())
        with path.open("a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["replica", "t", "Y", "M", "N", "drift_integral", "cdc_integral"])
            for row in zip(self.times, self.Y, self.M, self.N, self.drift_integral, self.cdc_integral):
                w.writerow([replica] + [repr(float(v)) for v in row])
        return path


def dynkin_martingale(k: int, table: DualityTable, phi, traj: Trajectory, grid, torus: Torus,
                      kernel: Kernel, spec: ModelSpec | None = None) -> MartingaleSample:
    """Replay ``traj`` and integrate drift and carre-du-champ exactly between jumps."""
    spec = spec or table.spec
    grid = np.asarray(grid, dtype=float)
    if len(grid) and grid.max() > traj.horizon + 1e-12:
        raise GridBeyondHorizon(f"grid reaches {grid.max()} beyond horizon {traj.horizon}")
    eta = np.array(traj.initial, dtype=np.int64, copy=True)
    table = table.extended(max(k, table.m_max), int(eta.sum()) + 1)
    pv = site_values(phi, torus)
    scale = torus.n ** (-k * torus.d / 2)
    tree = _tree(table, k, pv, eta, False)

    def state_terms():
        drift = 0.0
        cdc = 0.0
        for i, j, p in moves(kernel, torus):
            r = _rate(spec, eta, i, j, p, False)
            if r:
                g = _grad_raw(k, table, pv, eta, i, j, False, tree)
                drift += r * g
                cdc += r * g * g
        n2 = float(torus.n) ** 2
        return tree.root[k] * scale, n2 * scale * drift, n2 * scale * scale * cdc

    Yv, drift, cdc = state_terms()
    out_y, out_d, out_c = [], [], []
    t_now, d_int, c_int = 0.0, 0.0, 0.0
    ev = 0
    times = traj.times
    for tg in grid:
        while ev < len(times) and times[ev] <= tg:
            dt = times[ev] - t_now
            d_int += dt * drift
            c_int += dt * cdc
            t_now = times[ev]
            a, b = int(traj.from_sites[ev]), int(traj.to_sites[ev])
            eta[a] -= 1
            eta[b] += 1
            tree.update(a, _leaf(table, k, eta[a], pv[a], False))
            tree.update(b, _leaf(table, k, eta[b], pv[b], False))
            Yv, drift, cdc = state_terms()
            ev += 1
        dt = tg - t_now
        d_int += dt * drift
        c_int += dt * cdc
        t_now = tg
        out_y.append(Yv)
        out_d.append(d_int)
        out_c.append(c_int)
    return MartingaleSample(grid, np.array(out_y), np.array(out_d), np.array(out_c))


# ---------------------------------------------------------------------------
# fast path


class PowerSumField:
    """Floating-point field machinery in power-sum form for one
    (model, kernel, torus, test function, k) combination."""

    def __init__(self, spec: ModelSpec, kernel: Kernel, torus: Torus, table: DualityTable,
                 phi: TestFunction, k: int):
        if k < 1:
            raise ValueError("PowerSumField needs k >= 1")
        torus.check_kernel(kernel)
        self.spec, self.kernel, self.torus, self.table, self.phi, self.k = spec, kernel, torus, table, phi, k
        pair = table.pair
        self.eps = np.array([float(x) for x in pair.log_e(k)])
        self.kappa = np.array([float(x) for x in pair.log_h(k)])
        pts = torus.points()
        pv = phi.phi(pts)
        lap = phi.laplace(pts)
        q = np.arange(k + 1)
        self.phi_pows = pv[:, None] ** q[None, :]
        self.psi_low = np.zeros_like(self.phi_pows)
        for m in range(1, k + 1):
            self.psi_low[:, m] = pv ** (m - 1) * lap
        self.nbr, self.probs, _ = torus.neighbor_table(kernel)
        self.emove = fastsim.move_coefficients(self.phi_pows, self.nbr, self.kappa, k)
        self.G, self.Gx, self.Gxm = gradient_energy(phi, torus, kernel)
        n, d = torus.n, torus.d
        self.n2 = float(n) ** 2
        self.scale_k = float(n) ** (-k * d / 2)
        self.scale_low = float(n) ** (-(k - 1) * d / 2)
        c = float(table.c_sigma)
        self.c = c
        self.inv_nd = float(n) ** (-d)
        self.qv_coef = float(spec.mobility) * c * c * self.G * self.inv_nd
        self.closed_coef = float(spec.alpha) * k * float(kernel.chi) / 2

    def values(self, eta) -> dict:
        """Field, drift, carre-du-champ and closed forms at one configuration."""
        eta = np.asarray(eta, dtype=np.int64)
        K = self.k + 1
        A = self.phi_pows.sum(axis=0)
        W = eta @ self.phi_pows
        AU = self.psi_low.sum(axis=0)
        U = eta @ self.psi_low
        B = np.zeros(K)
        C = np.zeros((K, K))
        fastsim._aggregate(eta, self.nbr, self.probs, float(self.spec.alpha), self.spec.sigma,
                           self.emove, self.Gxm, float(self.spec.rho), B, C)
        Y, drift, cdc, closed, qvc, ylow = fastsim._state_values(
            W, U, A, AU, self.eps, self.kappa, self.k, self.scale_k, self.scale_low, B, C,
            self.n2, self.qv_coef, self.closed_coef)
        return {"Y": Y, "drift": drift, "cdc": cdc, "closed": closed, "qv_closed": qvc,
                "Y_low": ylow}

    def field(self, eta, k: int | None = None) -> np.ndarray:
        """Field values for one configuration or a batch ``(R, V)`` of them."""
        k = self.k if k is None else k
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        pv = self.phi_pows[:, 1]
        A = np.array([(pv**q).sum() for q in range(k + 1)])
        W = eta @ (pv[:, None] ** np.arange(k + 1)[None, :])
        eps = np.array([float(x) for x in self.table.pair.log_e(k)])
        kap = np.array([float(x) for x in self.table.pair.log_h(k)])
        P = eps[None, :] * A[None, :] + kap[None, :] * W
        E = np.zeros((eta.shape[0], k + 1))
        E[:, 0] = 1.0
        for m in range(1, k + 1):
            acc = np.zeros(eta.shape[0])
            for q in range(1, m + 1):
                acc += q * P[:, q] * E[:, m - q]
            E[:, m] = acc / m
        return E[:, k] * float(self.torus.n) ** (-k * self.torus.d / 2)

    def run(self, eta0, seed: int, grid) -> np.ndarray:
        """Simulate one replica from ``eta0``; rows of ``OUTPUT_COLUMNS`` at
        macroscopic times ``grid``."""
        grid = np.asarray(grid, dtype=float)
        out = np.zeros((len(grid), len(fastsim.OUTPUT_COLUMNS)))
        fastsim.run_field_path(
            np.array(eta0, dtype=np.int64, copy=True), self.nbr, self.probs,
            float(self.spec.alpha), self.spec.sigma, float(self.spec.rho), np.int64(seed),
            self.k, grid * self.n2, self.n2, self.phi_pows, self.psi_low, self.eps, self.kappa,
            self.emove, self.Gx, self.Gxm, self.scale_k, self.scale_low, self.qv_coef,
            self.closed_coef, self.inv_nd, out)
        return out

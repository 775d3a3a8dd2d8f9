"""Continuous-time dynamics: generator actions, exact jump simulation of the
occupancy, dual and coordinate processes, and exact finite-state semigroups."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .core_model import (
    DualConfig, Kernel, ModelSpec, Torus, lambda_weight, pi_weight,
)
from .orthopoly import ProductDuality, dual_configs

__all__ = [
    "Event", "Trajectory", "DualTrajectory", "DualStateSpace", "StateSpaceTooLarge",
    "InadmissibleMove",
    "rate_of_move", "moves", "moved", "simulate", "simulate_dual", "simulate_coord",
    "apply_generator", "apply_dual_generator", "check_duality_pointwise",
    "exact_semigroup", "detailed_balance_check", "replica_seed",
]


class StateSpaceTooLarge(ValueError):
    pass


class InadmissibleMove(ValueError):
    pass


def replica_seed(seed: int, replica: int, *stream: int) -> int:
    """Independent 63-bit seed for replica ``replica`` of a run keyed by
    ``seed`` (and optional extra stream keys such as the system size)."""
    key = tuple(int(s) for s in stream) + (int(replica),)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# rates and generators


def rate_of_move(spec: ModelSpec, eta, i: int, r, kernel: Kernel, torus: Torus | None = None):
    """``p(r) eta_i (alpha + sigma eta_{i+r})`` (zero when blocked)."""
    torus = torus or Torus(kernel.d, len(eta) if kernel.d == 1 else round(len(eta) ** (1 / kernel.d)))
    j = torus.shift(i, r)
    p = kernel.p(r)
    return p * int(eta[i]) * (spec.alpha + spec.sigma * int(eta[j]))


def moves(kernel: Kernel, torus: Torus):
    """All ordered pairs ``(i, j, p(j - i))`` with positive weight."""
    for i in range(torus.V):
        for r in kernel.support:
            yield i, torus.shift(i, r), kernel.weights[r]


def moved(eta, i: int, j: int) -> np.ndarray:
    out = np.array(eta, dtype=np.int64, copy=True)
    out[i] -= 1
    out[j] += 1
    return out


def apply_generator(spec: ModelSpec, kernel: Kernel, torus: Torus, f: Callable, eta):
    """``sum_{i,r} rate (f(eta^{i,i+r}) - f(eta))`` by explicit enumeration."""
    base = f(eta)
    total = 0 * base
    for i, j, p in moves(kernel, torus):
        if eta[i] == 0:
            continue
        rate = p * int(eta[i]) * (spec.alpha + spec.sigma * int(eta[j]))
        if rate:
            total += rate * (f(moved(eta, i, j)) - base)
    return total


def apply_dual_generator(spec: ModelSpec, kernel: Kernel, torus: Torus, g: Callable,
                         xi: DualConfig):
    """``L^(k)`` acting on a function of dual configurations."""
    base = g(xi)
    total = 0 * base
    for i, c in xi.items():
        for r in kernel.support:
            j = torus.shift(i, r)
            rate = kernel.weights[r] * c * (spec.alpha + spec.sigma * xi.get(j, 0))
            if rate:
                total += rate * (g(xi.moved(i, j)) - base)
    return total


def check_duality_pointwise(spec: ModelSpec, kernel: Kernel, torus: Torus, xi: DualConfig,
                            eta, pd: ProductDuality) -> Fraction:
    """``[L D(xi, .)](eta) - [L^(k) D(., eta)](xi)`` in exact arithmetic."""
    lhs = apply_generator(spec, kernel, torus, lambda e: pd.eval_D(xi, e), eta)
    rhs = apply_dual_generator(spec, kernel, torus, lambda x: pd.eval_D(x, eta), xi)
    return lhs - rhs


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Event:
    time: float
    from_site: int
    to_site: int


@dataclass
class Trajectory:
    """Event list of the occupancy process on the clock ``time_scale * t``.

    ``times`` are macroscopic (already divided by ``time_scale``).
    """

    initial: np.ndarray
    times: np.ndarray
    from_sites: np.ndarray
    to_sites: np.ndarray
    horizon: float
    time_scale: float

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(a), int(b))
                for t, a, b in zip(self.times, self.from_sites, self.to_sites)]

    def __len__(self):
        return len(self.times)

    def replay(self, upto: float | None = None) -> np.ndarray:
        eta = np.array(self.initial, dtype=np.int64, copy=True)
        for t, a, b in zip(self.times, self.from_sites, self.to_sites):
            if upto is not None and t > upto:
                break
            eta[a] -= 1
            eta[b] += 1
        return eta

    def validate(self, spec: ModelSpec) -> None:
        eta = np.array(self.initial, dtype=np.int64, copy=True)
        last = -1.0
        for t, a, b in zip(self.times, self.from_sites, self.to_sites):
            if not t > last:
                raise ValueError("event times must increase strictly")
            last = t
            eta[a] -= 1
            eta[b] += 1
            if eta[a] < 0 or (spec.cap is not None and eta[b] > spec.cap):
                raise ValueError(f"inadmissible event at t={t}")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "from_site", "to_site"])
            for t, a, b in zip(self.times, self.from_sites, self.to_sites):
                w.writerow([repr(float(t)), int(a), int(b)])
        return path


def simulate(spec: ModelSpec, kernel: Kernel, torus: Torus, eta0, T: float, n_scale: int,
             seed: int) -> Trajectory:
    """Exact jump simulation on ``[0, T]`` with rates multiplied by ``n_scale**2``."""
    from .fastsim import simulate_events

    torus.check_kernel(kernel)
    eta0 = np.asarray(eta0, dtype=np.int64)
    if spec.cap is not None and (eta0 > spec.cap).any():
        raise ValueError("initial occupancy exceeds the exclusion cap")
    if (eta0 < 0).any():
        raise ValueError("negative occupancy")
    nbr, probs, _ = torus.neighbor_table(kernel)
    scale = float(n_scale) ** 2
    times, a, b = simulate_events(eta0.copy(), nbr, probs, float(spec.alpha), spec.sigma,
                                  float(T) * scale, np.int64(seed))
    return Trajectory(eta0.copy(), times / scale, a, b, float(T), scale)


@dataclass
class DualTrajectory:
    initial: DualConfig
    times: list
    states: list  # state after each event (DualConfig or coordinate tuple)
    horizon: float

    def state_at(self, t: float):
        idx = int(np.searchsorted(np.asarray(self.times), t, side="right"))
        return self.initial if idx == 0 else self.states[idx - 1]


def _gillespie(state, transitions, T, rng):
    times, states = [], []
    t = 0.0
    while True:
        options = transitions(state)
        total = float(sum(r for r, _ in options))
        if total <= 0:
            break
        t += rng.exponential(1 / total)
        if t > T:
            break
        rates = np.array([float(r) for r, _ in options])
        pick = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
        state = options[min(pick, len(options) - 1)][1]
        times.append(t)
        states.append(state)
    return times, states


def simulate_dual(spec: ModelSpec, kernel: Kernel, torus: Torus, xi0: DualConfig, T: float,
                  seed, time_scale: float = 1.0) -> DualTrajectory:
    """Dual process on ``Omega_k`` with rates ``p(r) xi_i (alpha + sigma xi_{i+r})``."""
    xi0.check(spec)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def transitions(xi):
        out = []
        for i, c in xi.items():
            for r in kernel.support:
                j = torus.shift(i, r)
                rate = time_scale * kernel.weights[r] * c * (spec.alpha + spec.sigma * xi.get(j, 0))
                if rate > 0:
                    out.append((rate, xi.moved(i, j)))
        return out

    times, states = _gillespie(xi0, transitions, T, rng)
    return DualTrajectory(xi0, times, states, T)


def simulate_coord(spec: ModelSpec, kernel: Kernel, torus: Torus, x0, T: float, seed,
                   time_scale: float = 1.0) -> DualTrajectory:
    """Labelled coordinate process; particle ``a`` jumps by ``r`` at rate
    ``p(r) (alpha + sigma #{b != a : x_b = x_a + r})``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x0 = tuple(int(s) for s in x0)

    def transitions(x):
        out = []
        for a, xa in enumerate(x):
            for r in kernel.support:
                y = torus.shift(xa, r)
                others = sum(1 for b, xb in enumerate(x) if b != a and xb == y)
                rate = time_scale * kernel.weights[r] * (spec.alpha + spec.sigma * others)
                if rate > 0:
                    out.append((rate, x[:a] + (y,) + x[a + 1:]))
        return out

    times, states = _gillespie(x0, transitions, T, rng)
    return DualTrajectory(DualConfig.from_sites(x0), times, states, T)


# ---------------------------------------------------------------------------
# finite dual state spaces


class DualStateSpace:
    """All of ``Omega_k`` on a torus together with the exact generator matrix."""

    MAX_STATES = 20000

    def __init__(self, spec: ModelSpec, kernel: Kernel, torus: Torus, k: int,
                 reading: str | None = None):
        count = math.comb(torus.V + k - 1, k)
        if count > self.MAX_STATES:
            raise StateSpaceTooLarge(f"|Omega_{k}| = {count} on {torus.V} sites")
        self.spec, self.kernel, self.torus, self.k = spec, kernel, torus, k
        self.states = dual_configs(torus, k, spec)
        self.index = {xi: a for a, xi in enumerate(self.states)}
        self.entries: dict[tuple[int, int], Fraction] = {}
        for a, xi in enumerate(self.states):
            for i, c in xi.items():
                for r in kernel.support:
                    j = torus.shift(i, r)
                    rate = kernel.weights[r] * c * (spec.alpha + spec.sigma * xi.get(j, 0))
                    if rate:
                        b = self.index[xi.moved(i, j)]
                        self.entries[(a, b)] = self.entries.get((a, b), Fraction(0)) + rate
                        self.entries[(a, a)] = self.entries.get((a, a), Fraction(0)) - rate
        self.Lambda = [self._lam(xi, reading) for xi in self.states]

    def _lam(self, xi, reading):
        out = Fraction(1)
        for c in xi.values():
            out *= lambda_weight(self.spec, c, reading)
        return out

    def __len__(self):
        return len(self.states)

    def matrix(self) -> np.ndarray:
        Q = np.zeros((len(self), len(self)))
        for (a, b), v in self.entries.items():
            Q[a, b] += float(v)
        return Q

    def self_adjointness_defect(self) -> Fraction:
        """``max |Lambda(a) Q(a,b) - Lambda(b) Q(b,a)|`` exactly."""
        worst = Fraction(0)
        for (a, b), v in self.entries.items():
            back = self.entries.get((b, a), Fraction(0))
            worst = max(worst, abs(self.Lambda[a] * v - self.Lambda[b] * back))
        return worst


def exact_semigroup(space: DualStateSpace, t: float, time_scale: float = 1.0,
                    tol: float = 1e-12) -> np.ndarray:
    """``p_t`` by uniformization; Poisson weights beyond the ``1 - tol`` quantile
    are dropped."""
    Q = space.matrix() * time_scale
    size = Q.shape[0]
    if t == 0:
        return np.eye(size)
    rate = float(max(-np.diag(Q).min(), 1e-300))
    P = np.eye(size) + Q / rate
    lam = rate * t
    top = int(stats.poisson.isf(tol, lam)) + 1
    weights = stats.poisson.pmf(np.arange(top + 1), lam)
    out = np.zeros_like(P)
    power = np.eye(size)
    for j in range(top + 1):
        out += weights[j] * power
        power = power @ P
    tail = 1.0 - weights.sum()
    if tail > tol:
        raise ArithmeticError(f"uniformization tail {tail} above tolerance")
    return out


# ---------------------------------------------------------------------------
# detailed balance


def nu_weight_exact(spec: ModelSpec, n: int) -> Fraction:
    """Unnormalised single-site weight proportional to the nu_rho marginal."""
    a, rho = spec.alpha, spec.rho
    if spec.sigma == 0:
        return rho**n / math.factorial(n)
    if spec.sigma == -1:
        return math.comb(int(a), n) * (rho / (a - rho)) ** n
    rising = Fraction(1)
    for i in range(n):
        rising *= a + i
    return rising / math.factorial(n) * (rho / (a + rho)) ** n


def detailed_balance_check(spec: ModelSpec, kernel: Kernel, torus: Torus, measure: str = "Lambda",
                           k: int = 2, cap: int = 2, reading: str | None = None,
                           perturb: Fraction = Fraction(0)) -> Fraction:
    """Largest violation of ``m(a) c(a, b) = m(b) c(b, a)``, exact.

    ``measure`` is ``"nu"`` (occupancy chain with every count at most ``cap``),
    ``"Lambda"`` (dual chain on ``Omega_k``) or ``"Pi"`` (coordinate chain).
    ``perturb`` is added to every rate of moves to the right neighbour (a
    detector sanity switch).
    """
    torus.check_kernel(kernel)
    worst = Fraction(0)

    def bump(r):
        return perturb if r == kernel.support[-1] else 0

    if measure == "nu":
        top = cap if spec.cap is None else min(cap, spec.cap)
        for eta in itertools.product(range(top + 1), repeat=torus.V):
            w = Fraction(1)
            for c in eta:
                w *= nu_weight_exact(spec, c)
            for i in range(torus.V):
                for r in kernel.support:
                    j = torus.shift(i, r)
                    if eta[i] == 0 or eta[j] + 1 > top:
                        continue
                    fwd = kernel.weights[r] * eta[i] * (spec.alpha + spec.sigma * eta[j]) + bump(r)
                    back_r = tuple(-c for c in r)
                    after = list(eta)
                    after[i] -= 1
                    after[j] += 1
                    w2 = Fraction(1)
                    for c in after:
                        w2 *= nu_weight_exact(spec, c)
                    bwd = kernel.weights[back_r] * after[j] * (spec.alpha + spec.sigma * after[i]) + bump(back_r)
                    worst = max(worst, abs(w * fwd - w2 * bwd))
        return worst

    if measure == "Lambda":
        def lam(xi):
            out = Fraction(1)
            for c in xi.values():
                out *= lambda_weight(spec, c, reading)
            return out

        for xi in dual_configs(torus, k, spec):
            for i, c in xi.items():
                for r in kernel.support:
                    j = torus.shift(i, r)
                    fwd = kernel.weights[r] * c * (spec.alpha + spec.sigma * xi.get(j, 0)) + bump(r)
                    if spec.cap is not None and xi.get(j, 0) >= spec.cap:
                        continue
                    to = xi.moved(i, j)
                    back_r = tuple(-v for v in r)
                    bwd = kernel.weights[back_r] * to[j] * (spec.alpha + spec.sigma * to.get(i, 0)) + bump(back_r)
                    worst = max(worst, abs(lam(xi) * fwd - lam(to) * bwd))
        return worst

    if measure == "Pi":
        def pi_of(x):
            out = Fraction(1)
            for c in DualConfig.from_sites(x).values():
                out *= pi_weight(spec, c, reading)
            return out

        for x in itertools.product(range(torus.V), repeat=k):
            xi = DualConfig.from_sites(x)
            if spec.cap is not None and any(c > spec.cap for c in xi.values()):
                continue
            for a, xa in enumerate(x):
                for r in kernel.support:
                    y = torus.shift(xa, r)
                    others = sum(1 for b, xb in enumerate(x) if b != a and xb == y)
                    if spec.cap is not None and others >= spec.cap:
                        continue
                    fwd = kernel.weights[r] * (spec.alpha + spec.sigma * others) + bump(r)
                    to = x[:a] + (y,) + x[a + 1:]
                    back_r = tuple(-v for v in r)
                    others_back = sum(1 for b, xb in enumerate(to) if b != a and xb == xa)
                    bwd = kernel.weights[back_r] * (spec.alpha + spec.sigma * others_back) + bump(back_r)
                    worst = max(worst, abs(pi_of(x) * fwd - pi_of(to) * bwd))
        return worst
    raise ValueError(f"unknown measure {measure!r}")

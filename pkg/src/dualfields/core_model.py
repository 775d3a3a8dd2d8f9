"""Model parameters, torus geometry, transition kernels and the product
measures nu_rho, Lambda and Pi."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "ModelError", "SymmetryViolation", "ReducibleKernel", "ZeroAtOriginViolation",
    "EmptySupport", "OutOfSupport", "InvalidModel",
    "ModelSpec", "Kernel", "Torus", "DualConfig",
    "build_kernel", "nearest_neighbor_kernel", "as_fraction",
    "nu_marginal_pmf", "nu_sample", "factorial_moment", "raw_moments",
    "lambda_weight", "pi_weight", "Lambda_of", "Pi_of", "N_of", "xi_of_coords",
    "LAMBDA_READINGS", "DEFAULT_LAMBDA_READING",
]


class ModelError(ValueError):
    """Base class for invalid model / kernel / configuration input."""


class InvalidModel(ModelError):
    pass


class SymmetryViolation(ModelError):
    pass


class ReducibleKernel(ModelError):
    pass


class ZeroAtOriginViolation(ModelError):
    pass


class EmptySupport(ModelError):
    pass


class OutOfSupport(ModelError):
    pass


def as_fraction(value) -> Fraction:
    """Parse ints, Fractions, ``"p/q"`` strings and finite floats exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**12)
    raise TypeError(f"cannot interpret {value!r} as a rational")


# ---------------------------------------------------------------------------
# ModelSpec


@dataclass(frozen=True)
class ModelSpec:
    """The (sigma, alpha, rho) triple: IRW (0), SEP(alpha) (-1), SIP(alpha) (+1)."""

    sigma: int
    alpha: Fraction
    rho: Fraction

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        object.__setattr__(self, "rho", as_fraction(self.rho))
        if self.sigma not in (-1, 0, 1):
            raise InvalidModel(f"sigma must be -1, 0 or +1, got {self.sigma}")
        if self.alpha <= 0:
            raise InvalidModel("alpha must be positive")
        if self.rho <= 0:
            raise InvalidModel("rho must be positive")
        if self.sigma == -1:
            if self.alpha.denominator != 1:
                raise InvalidModel("SEP needs an integer alpha")
            if not self.rho < self.alpha:
                raise InvalidModel("SEP needs 0 < rho < alpha")

    @property
    def name(self) -> str:
        return {0: "IRW", -1: "SEP", 1: "SIP"}[self.sigma]

    @property
    def cap(self) -> int | None:
        """Maximal occupancy per site (SEP only)."""
        return int(self.alpha) if self.sigma == -1 else None

    @property
    def mobility(self) -> Fraction:
        """rho * (alpha + sigma * rho) = E[eta_x (alpha + sigma eta_y)] under nu_rho."""
        return self.rho * (self.alpha + self.sigma * self.rho)

    @property
    def c_printed(self) -> Fraction:
        """Degree-one constant as tabulated in the source (see ``DualityTable.c_sigma``
        for the value measured from the resolved polynomials)."""
        return printed_c(self.sigma, self.alpha, self.rho)

    def label(self) -> str:
        if self.sigma == 0:
            return f"IRW(alpha={self.alpha}, rho={self.rho})"
        return f"{self.name}({self.alpha}, rho={self.rho})"

    def as_dict(self) -> dict:
        return {"sigma": self.sigma, "alpha": str(self.alpha), "rho": str(self.rho)}


def printed_c(sigma: int, alpha: Fraction, rho: Fraction) -> Fraction:
    return {0: 1 / rho, 1: alpha / rho, -1: (alpha + rho) / rho}[sigma]


# ---------------------------------------------------------------------------
# Kernel


def _lattice_rank_one(vectors: list[tuple[int, ...]], d: int) -> bool:
    """True iff the integer vectors generate Z^d (Hermite reduction)."""
    rows = [list(v) for v in vectors if any(v)]
    basis = []
    for col in range(d):
        # gcd-reduce column `col` among remaining rows
        while True:
            nz = [r for r in rows if r[col] != 0]
            if len(nz) <= 1:
                break
            nz.sort(key=lambda r: abs(r[col]))
            pivot = nz[0]
            for r in nz[1:]:
                q = r[col] // pivot[col]
                for c in range(d):
                    r[c] -= q * pivot[c]
        nz = [r for r in rows if r[col] != 0]
        if not nz:
            return False
        pivot = nz[0]
        if abs(pivot[col]) != 1:
            return False
        basis.append(pivot)
        rows = [r for r in rows if r is not pivot]
    return True


def _box_reachable(support: list[tuple[int, ...]], d: int, R: int) -> bool:
    """Every unit vector is reachable by a walk confined to the (4R+1)-box."""
    box = 2 * R
    start = (0,) * d
    seen = {start}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        for r in support:
            y = tuple(a + b for a, b in zip(x, r))
            if max(abs(c) for c in y) <= box and y not in seen:
                seen.add(y)
                queue.append(y)
    units = [tuple(1 if i == l else 0 for i in range(d)) for l in range(d)]
    return all(u in seen for u in units)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Symmetric, finite-range, irreducible jump distribution on Z^d."""

    d: int
    R: int
    weights: Mapping[tuple[int, ...], Fraction]
    chi: Fraction

    def _key(self):
        return (self.d, self.R, tuple(sorted(self.weights.items())))

    def __eq__(self, other):
        return isinstance(other, Kernel) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def support(self) -> list[tuple[int, ...]]:
        return sorted(r for r, w in self.weights.items() if w > 0)

    def p(self, r) -> Fraction:
        if isinstance(r, int):
            r = (r,)
        return self.weights.get(tuple(r), Fraction(0))

    def moment(self, axes: tuple[int, ...]) -> Fraction:
        """sum_r p(r) prod_{l in axes} r_l."""
        total = Fraction(0)
        for r, w in self.weights.items():
            term = w
            for l in axes:
                term *= r[l]
            total += term
        return total

    def as_dict(self) -> dict:
        return {"d": self.d, "R": self.R,
                "kernel_weights": [[list(r), str(w)] for r, w in sorted(self.weights.items())],
                "chi": str(self.chi)}


def build_kernel(d: int, R: int, raw_weights: Mapping) -> Kernel:
    """Validate and normalise a jump kernel.

    ``raw_weights`` maps offsets (ints when ``d == 1``, tuples otherwise) to
    nonnegative rationals; weights are rescaled to sum to one.
    """
    if d < 1 or R < 1:
        raise ModelError("need d >= 1 and R >= 1")
    weights: dict[tuple[int, ...], Fraction] = {}
    for r, w in raw_weights.items():
        key = (int(r),) if isinstance(r, (int, np.integer)) else tuple(int(c) for c in r)
        if len(key) != d:
            raise ModelError(f"offset {r!r} has wrong dimension for d={d}")
        if max(abs(c) for c in key) > R:
            raise ModelError(f"offset {r!r} outside range R={R}")
        w = as_fraction(w)
        if w < 0:
            raise ModelError(f"negative weight at {r!r}")
        if w:
            weights[key] = weights.get(key, Fraction(0)) + w
    if (0,) * d in weights:
        raise ZeroAtOriginViolation("p(0) must be 0")
    total = sum(weights.values(), Fraction(0))
    if total == 0:
        raise EmptySupport("kernel has no positive weight")
    weights = {r: w / total for r, w in weights.items()}

    for r, w in weights.items():
        for signs in itertools.product((1, -1), repeat=d):
            for perm in itertools.permutations(range(d)):
                image = tuple(signs[i] * r[perm[i]] for i in range(d))
                if weights.get(image, Fraction(0)) != w:
                    raise SymmetryViolation(
                        f"p{r} = {w} but p{image} = {weights.get(image, 0)}")

    support = sorted(weights)
    if not (_lattice_rank_one(support, d) and _box_reachable(support, d, R)):
        raise ReducibleKernel("support does not generate Z^d")

    chis = [sum((w * r[l] ** 2 for r, w in weights.items()), Fraction(0)) for l in range(d)]
    if len(set(chis)) != 1:  # implied by permutation symmetry
        raise SymmetryViolation(f"second moments differ across axes: {chis}")
    return Kernel(d=d, R=R, weights=weights, chi=chis[0])


def nearest_neighbor_kernel(d: int = 1) -> Kernel:
    raw = {}
    for l in range(d):
        for s in (1, -1):
            raw[tuple(s if i == l else 0 for i in range(d))] = Fraction(1, 2 * d)
    return build_kernel(d, 1, raw)


# ---------------------------------------------------------------------------
# Torus


@dataclass(frozen=True)
class Torus:
    """Discrete torus (Z/LZ)^d; sites are flat indices 0..V-1 (row-major)."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ModelError("torus needs d >= 1 and L >= 1")

    @property
    def V(self) -> int:
        return self.L**self.d

    @property
    def n(self) -> int:
        """Scaling parameter: one lattice spacing is 1/n of the unit torus."""
        return self.L

    def coords(self, site: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.d):
            out.append(site % self.L)
            site //= self.L
        return tuple(reversed(out))

    def site(self, coords) -> int:
        s = 0
        for c in coords:
            s = s * self.L + (int(c) % self.L)
        return s

    def shift(self, site: int, r) -> int:
        if isinstance(r, (int, np.integer)):
            r = (int(r),)
        return self.site(tuple(c + dc for c, dc in zip(self.coords(site), r)))

    def points(self) -> np.ndarray:
        """Macroscopic positions x/n in [0,1)^d, shape (V, d)."""
        grid = np.array([self.coords(s) for s in range(self.V)], dtype=float)
        return grid / self.L

    def neighbor_table(self, kernel: Kernel) -> tuple[np.ndarray, np.ndarray, list]:
        """(nbr[V, M], probs[M], offsets) over the kernel support."""
        offsets = kernel.support
        nbr = np.empty((self.V, len(offsets)), dtype=np.int64)
        for s in range(self.V):
            for m, r in enumerate(offsets):
                nbr[s, m] = self.shift(s, r)
        probs = np.array([float(kernel.weights[r]) for r in offsets])
        return nbr, probs, offsets

    def check_kernel(self, kernel: Kernel) -> None:
        """Reject (kernel, L) pairs where moves alias or the walk is not irreducible."""
        if kernel.d != self.d:
            raise ModelError("kernel and torus dimensions differ")
        if not self.L > 2 * kernel.R:
            raise ModelError(f"need L > 2R (L={self.L}, R={kernel.R})")
        seen = {0}
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for r in kernel.support:
                y = self.shift(x, r)
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        if len(seen) != self.V:
            raise ReducibleKernel("wrapped kernel is not irreducible on this torus")


# ---------------------------------------------------------------------------
# nu_rho marginals


def _log_pmf(spec: ModelSpec, n: int) -> float:
    a, rho = float(spec.alpha), float(spec.rho)
    if spec.sigma == 0:
        return -rho + n * math.log(rho) - math.lgamma(n + 1)
    if spec.sigma == -1:
        p = rho / a
        return (math.lgamma(a + 1) - math.lgamma(n + 1) - math.lgamma(a - n + 1)
                + n * math.log(p) + (a - n) * math.log1p(-p))
    p = rho / (rho + a)
    return (math.lgamma(a + n) - math.lgamma(a) - math.lgamma(n + 1)
            + n * math.log(p) + a * math.log1p(-p))


def nu_marginal_pmf(spec: ModelSpec, n: int) -> float:
    """Single-site marginal of nu_rho: Poisson, Binomial or Negative-Binomial."""
    if n < 0 or (spec.cap is not None and n > spec.cap):
        raise OutOfSupport(f"occupancy {n} outside support of {spec.label()}")
    return math.exp(_log_pmf(spec, int(n)))


def nu_pmf_array(spec: ModelSpec, n_max: int) -> np.ndarray:
    top = n_max if spec.cap is None else min(n_max, spec.cap)
    return np.array([nu_marginal_pmf(spec, n) for n in range(top + 1)])


def nu_marginal_ratio(spec: ModelSpec, n: int) -> float:
    """nu(n+1)/nu(n), used for tail certificates."""
    a, rho = float(spec.alpha), float(spec.rho)
    if spec.sigma == 0:
        return rho / (n + 1)
    if spec.sigma == -1:
        return (a - n) / (n + 1) * rho / (a - rho)
    return (a + n) / (n + 1) * rho / (a + rho)


def factorial_moment(spec: ModelSpec, j: int) -> Fraction:
    """E[eta (eta-1) ... (eta-j+1)] under the marginal, exactly."""
    if spec.sigma == 0:
        return spec.rho**j
    out = Fraction(1)
    for i in range(j):
        out *= spec.alpha + spec.sigma * i
    return out * (spec.rho / spec.alpha) ** j


def raw_moments(spec: ModelSpec, top: int) -> list[Fraction]:
    """E[eta^j] for j = 0..top via Stirling numbers of the second kind."""
    stirling = [[0] * (top + 1) for _ in range(top + 1)]
    stirling[0][0] = 1
    for j in range(1, top + 1):
        for i in range(1, j + 1):
            stirling[j][i] = i * stirling[j - 1][i] + stirling[j - 1][i - 1]
    fm = [factorial_moment(spec, i) for i in range(top + 1)]
    return [sum((stirling[j][i] * fm[i] for i in range(j + 1)), Fraction(0))
            for j in range(top + 1)]


def sample_marginal(spec: ModelSpec, size, rng: np.random.Generator) -> np.ndarray:
    a, rho = float(spec.alpha), float(spec.rho)
    if spec.sigma == 0:
        return rng.poisson(rho, size=size)
    if spec.sigma == -1:
        return rng.binomial(int(spec.alpha), rho / a, size=size)
    # numpy parametrises by success probability alpha/(alpha+rho)
    return rng.negative_binomial(a, a / (a + rho), size=size)


def nu_sample(spec: ModelSpec, torus: Torus, seed) -> np.ndarray:
    """i.i.d. occupancies from nu_rho on the torus; deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return sample_marginal(spec, torus.V, rng).astype(np.int64)


# ---------------------------------------------------------------------------
# Lambda, Pi, N

# Candidate readings of the single-site weight lambda(m).  For SIP the printed
# row carries m! in the numerator; orthopoly.resolve_lambda selects the reading
# under which Lambda is proportional to mu_rho on every Omega_k.
LAMBDA_READINGS = {
    0: ("reciprocal_factorial",),
    -1: ("binomial",),
    1: ("printed", "without_factorial", "reciprocal_factorial"),
}
DEFAULT_LAMBDA_READING = {0: "reciprocal_factorial", -1: "binomial", 1: "reciprocal_factorial"}


def _rising(alpha: Fraction, m: int) -> Fraction:
    out = Fraction(1)
    for i in range(m):
        out *= alpha + i
    return out


def lambda_weight(spec: ModelSpec, m: int, reading: str | None = None) -> Fraction:
    if m < 0 or (spec.cap is not None and m > spec.cap):
        raise OutOfSupport(f"lambda({m}) undefined for {spec.label()}")
    reading = reading or DEFAULT_LAMBDA_READING[spec.sigma]
    if reading not in LAMBDA_READINGS[spec.sigma]:
        raise ValueError(f"unknown lambda reading {reading!r} for sigma={spec.sigma}")
    if spec.sigma == 0:
        return Fraction(1, math.factorial(m))
    if spec.sigma == -1:
        return Fraction(math.comb(int(spec.alpha), m))
    rising = _rising(spec.alpha, m)
    if reading == "printed":
        return math.factorial(m) * rising
    if reading == "without_factorial":
        return rising
    return rising / math.factorial(m)


def pi_weight(spec: ModelSpec, m: int, reading: str | None = None) -> Fraction:
    return math.factorial(m) * lambda_weight(spec, m, reading)


class DualConfig(Mapping):
    """Finite configuration xi: immutable sparse map site -> positive count."""

    __slots__ = ("_items", "_dict")

    def __init__(self, counts: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        items = dict(counts)
        clean = {}
        for s, c in items.items():
            c = int(c)
            if c < 0:
                raise ValueError("negative count in dual configuration")
            if c:
                clean[int(s)] = c
        self._dict = clean
        self._items = tuple(sorted(clean.items()))

    @classmethod
    def from_sites(cls, sites: Iterable[int]) -> "DualConfig":
        counts: dict[int, int] = {}
        for s in sites:
            counts[int(s)] = counts.get(int(s), 0) + 1
        return cls(counts)

    def __getitem__(self, site):
        return self._dict[site]

    def get(self, site, default=0):
        return self._dict.get(site, default)

    def __iter__(self):
        return (s for s, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __hash__(self):
        return hash(self._items)

    def __eq__(self, other):
        if isinstance(other, DualConfig):
            return self._items == other._items
        return NotImplemented

    def __repr__(self):
        return f"DualConfig({dict(self._items)})"

    @property
    def order(self) -> int:
        return sum(c for _, c in self._items)

    def moved(self, i: int, j: int) -> "DualConfig":
        """xi^{i,j}: one particle from i to j."""
        counts = dict(self._dict)
        if counts.get(i, 0) < 1:
            raise ValueError(f"no particle at {i}")
        counts[i] -= 1
        counts[j] = counts.get(j, 0) + 1
        return DualConfig(counts)

    def sites(self) -> tuple[int, ...]:
        """A canonical coordinate vector x with xi(x) = xi."""
        return tuple(s for s, c in self._items for _ in range(c))

    def check(self, spec: ModelSpec) -> None:
        if spec.cap is not None and any(c > spec.cap for _, c in self._items):
            raise OutOfSupport(f"{self!r} exceeds the exclusion cap {spec.cap}")


def xi_of_coords(x: Iterable[int]) -> DualConfig:
    return DualConfig.from_sites(x)


def Lambda_of(spec: ModelSpec, xi: DualConfig, reading: str | None = None) -> Fraction:
    out = Fraction(1)
    for c in xi.values():
        out *= lambda_weight(spec, c, reading)
    return out


def N_of(xi: DualConfig) -> int:
    """Number of coordinate vectors x with xi(x) = xi."""
    out = math.factorial(xi.order)
    for c in xi.values():
        out //= math.factorial(c)
    return out


def Pi_of(spec: ModelSpec, x: Iterable[int], reading: str | None = None) -> Fraction:
    out = Fraction(1)
    for c in xi_of_coords(x).values():
        out *= pi_weight(spec, c, reading)
    return out

"""Radial kernels: polyharmonic powers, Whittle-Matern (Sobolev-reproducing)
Bessel kernels, and the Gaussian.

Each kernel supports value, exact radial derivatives up to order four, a
near-zero series, and mixed derivative evaluation D^a_x D^b_y K(||x-y||)
("bilinear atoms").  Coincident-point atoms are always read off the even
part of the series, never from limits of nearby evaluations: that is where
the worst cancellation lives, and the series sidesteps it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Union

import mpmath
from mpmath import mp, mpf

from . import scalar
from .errors import SingularAtOriginError, UnsupportedOrderError
from .scalar import (
    DEFAULT_PREC,
    GUARD_BITS,
    Number,
    SeriesExpansion,
    as_fraction,
    real,
)

#: atom designating the Laplacian; multi-index tuples designate partials,
#: the empty tuple or an all-zero tuple designates point evaluation
LAPLACIAN = "laplacian"
Atom = Union[tuple[int, ...], str]


@dataclass(frozen=True)
class Kernel:
    """Immutable radial kernel description.

    ``m`` is the smoothness parameter (None for the Gaussian, whose shape is
    fixed to exp(-r^2)); ``d`` the ambient dimension.
    """

    family: str  # "polyharmonic" | "matern" | "gaussian"
    m: Fraction | None
    d: int

    def __post_init__(self):
        if self.family not in ("polyharmonic", "matern", "gaussian"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.family == "gaussian":
            if self.m is not None:
                raise ValueError("the Gaussian kernel takes no smoothness parameter")
        else:
            if self.m is None or not self.nu > 0:
                raise ValueError("need m - d/2 > 0")

    @property
    def nu(self) -> Fraction:
        """Smoothness exponent m - d/2 (None-safe only for non-Gaussian)."""
        if self.m is None:
            return Fraction(10**9)  # effectively infinite smoothness
        return self.m - Fraction(self.d, 2)

    @property
    def cpd_order(self) -> int:
        """Order of conditional positive definiteness (0 = positive definite)."""
        if self.family == "polyharmonic":
            return math.floor(self.nu) + 1
        return 0

    @property
    def power(self) -> Fraction:
        """Radial growth exponent 2m - d of the polyharmonic branch."""
        if self.family != "polyharmonic":
            raise ValueError("power only defined for polyharmonic kernels")
        return 2 * self.m - self.d

    @property
    def has_log_branch(self) -> bool:
        return self.family == "polyharmonic" and self.power.denominator == 1 and self.power % 2 == 0

    @property
    def sign(self) -> int:
        return (-1) ** (math.floor(self.nu) + 1)

    def normalization(self, prec: int = DEFAULT_PREC) -> mpf:
        if self.family == "matern":
            return scalar.series_normalization(self.nu, prec)
        return real(1, prec)

    def describe(self) -> dict:
        out = {"family": self.family, "d": self.d}
        if self.m is not None:
            out["m"] = str(self.m)
        return out


def polyharmonic(m: Number, d: int) -> Kernel:
    return Kernel("polyharmonic", as_fraction(m), d)


def matern(m: Number, d: int) -> Kernel:
    return Kernel("matern", as_fraction(m), d)


def gaussian(d: int) -> Kernel:
    return Kernel("gaussian", None, d)


def from_spec(spec: dict) -> Kernel:
    fam = spec.get("family")
    if fam == "gaussian":
        return gaussian(int(spec["d"]))
    if fam in ("polyharmonic", "matern"):
        return Kernel(fam, as_fraction(str(spec["m"])), int(spec["d"]))
    raise ValueError(f"unknown kernel spec {spec!r}")


# ---------------------------------------------------------------------------
# values and radial derivatives


def _polyharmonic_ladder(K: Kernel, r: mpf, depth: int, prec: int) -> list[mpf]:
    # derivatives of sign * r^beta (log r): differentiating (a + b log r) r^g
    # gives (a g + b + b g log r) r^{g-1}
    beta = K.power
    a = mpf(0) if K.has_log_branch else mpf(K.sign)
    b = mpf(K.sign) if K.has_log_branch else mpf(0)
    g = beta
    out = []
    with mp.workprec(prec + GUARD_BITS):
        logr = mpmath.log(r) if K.has_log_branch else mpf(0)
        for _ in range(depth + 1):
            rg = r ** real(g, prec + GUARD_BITS)
            out.append((a + b * logr) * rg)
            a, b, g = a * real(g, prec) + b, b * real(g, prec), g - 1
    return out


@lru_cache(maxsize=32)
def _gaussian_ladder_polys(depth: int) -> list[tuple[int, ...]]:
    # d^k/dr^k exp(-r^2) = P_k(r) exp(-r^2); P_{k+1} = P_k' - 2 r P_k
    polys = [(1,)]
    for _ in range(depth):
        p = polys[-1]
        dp = tuple(i * c for i, c in enumerate(p) if i) or (0,)
        shifted = (0,) + tuple(-2 * c for c in p)
        n = max(len(dp), len(shifted))
        polys.append(tuple(
            (dp[i] if i < len(dp) else 0) + (shifted[i] if i < len(shifted) else 0)
            for i in range(n)
        ))
    return polys


def _gaussian_ladder(r: mpf, depth: int, prec: int) -> list[mpf]:
    with mp.workprec(prec + GUARD_BITS):
        e = mpmath.exp(-r * r)
        out = []
        for p in _gaussian_ladder_polys(depth):
            out.append(e * mpmath.fsum(c * r**i for i, c in enumerate(p) if c))
        return out


def radial_derivatives(K: Kernel, r: Number, depth: int, prec: int = DEFAULT_PREC) -> list[mpf]:
    """Exact radial derivatives (phi, phi', ..., phi^(depth)) at r > 0."""
    if depth < 0 or depth > 4:
        raise UnsupportedOrderError("radial derivative depth limited to 4")
    rr = real(r, prec + GUARD_BITS)
    if not rr > 0:
        raise ValueError("radius must be positive; coincident points use the series")
    if K.family == "polyharmonic":
        return _polyharmonic_ladder(K, rr, depth, prec)
    if K.family == "gaussian":
        return _gaussian_ladder(rr, depth, prec)
    lad = scalar.kv_rv_derivative_ladder(K.nu, rr, depth, prec)
    c = K.normalization(prec + GUARD_BITS)
    with mp.workprec(prec):
        return [c * v for v in lad]


def value(K: Kernel, r: Number, prec: int = DEFAULT_PREC) -> mpf:
    """Kernel value at radius r >= 0 (r = 0 by its limit / series value)."""
    rr = real(r, prec + GUARD_BITS)
    if rr < 0:
        raise ValueError("radius must be nonnegative")
    if rr == 0:
        if K.family == "polyharmonic":
            return mpf(0)
        return near_zero_series(K, 4, prec).even_coeffs[0]
    return radial_derivatives(K, rr, 0, prec)[0]


_SERIES_CACHE: dict[tuple, SeriesExpansion] = {}


def near_zero_series(K: Kernel, order: int, prec: int = DEFAULT_PREC) -> SeriesExpansion:
    """Small-radius expansion; polyharmonic kernels are excluded since they
    are their own leading term."""
    key = (K, order, prec)
    cached = _SERIES_CACHE.get(key)
    if cached is not None:
        return cached
    if K.family == "polyharmonic":
        raise UnsupportedOrderError("polyharmonic kernels are their own leading term")
    if K.family == "gaussian":
        coeffs = []
        with mp.workprec(prec):
            for j in range(order // 2 + 1):
                coeffs.append(real(Fraction((-1) ** j, math.factorial(j)), prec))
        out = SeriesExpansion(tuple(coeffs), (), truncation_order=order + 1)
    else:
        out = scalar.matern_series(K.nu, order, prec)
    if len(_SERIES_CACHE) > 4096:
        _SERIES_CACHE.clear()
    _SERIES_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# symbolic mixed derivatives of radial functions


@lru_cache(maxsize=4096)
def _radial_derivative_terms(gamma: tuple[int, ...]) -> tuple[tuple[int, tuple[int, ...], int, int], ...]:
    """Terms (coef, beta, p, k) with D^gamma phi(||u||) =
    sum coef * u^beta * r^{-p} * phi^(k)(r), by repeated chain rule."""
    d = len(gamma)
    terms: dict[tuple[tuple[int, ...], int, int], int] = {(tuple([0] * d), 0, 0): 1}
    for i, gi in enumerate(gamma):
        for _ in range(gi):
            nxt: dict[tuple[tuple[int, ...], int, int], int] = {}

            def add(key, c):
                nxt[key] = nxt.get(key, 0) + c

            for (beta, p, k), c in terms.items():
                bl = list(beta)
                bl[i] += 1
                add((tuple(bl), p + 1, k + 1), c)
                if beta[i] > 0:
                    bl2 = list(beta)
                    bl2[i] -= 1
                    add((tuple(bl2), p, k), c * beta[i])
                if p > 0:
                    add((tuple(bl), p + 2, k), -c * p)
            terms = {key: c for key, c in nxt.items() if c != 0}
    return tuple((c, beta, p, k) for (beta, p, k), c in terms.items())


def _expand_atom(atom: Atom, d: int) -> list[tuple[int, tuple[int, ...]]]:
    if atom == LAPLACIAN:
        out = []
        for i in range(d):
            gamma = [0] * d
            gamma[i] = 2
            out.append((1, tuple(gamma)))
        return out
    if atom == ():
        return [(1, tuple([0] * d))]
    if len(atom) != d:
        raise ValueError("atom dimension mismatch")
    return [(1, tuple(atom))]


def _atom_order(atom: Atom) -> int:
    if atom == LAPLACIAN:
        return 2
    return sum(atom)


class LadderCache:
    """Memoizes radial-derivative ladders of one kernel at one precision.

    Distances repeat heavily inside Gram matrices and quadratic forms; the
    cache makes those evaluations close to free.
    """

    def __init__(self, K: Kernel, prec: int):
        self.kernel = K
        self.prec = prec
        self._store: dict[tuple[mpf, int], list[mpf]] = {}

    def ladder(self, r: mpf, depth: int) -> list[mpf]:
        hit = self._store.get((r, depth))
        if hit is not None:
            return hit
        for dd in range(depth + 1, 5):
            higher = self._store.get((r, dd))
            if higher is not None:
                return higher
        lad = radial_derivatives(self.kernel, r, depth, self.prec)
        if len(self._store) > 200000:
            self._store.clear()
        self._store[(r, depth)] = lad
        return lad


def _coincident_atom(K: Kernel, gamma: tuple[int, ...], prec: int) -> mpf:
    """D^gamma of the kernel in the difference variable, at zero distance."""
    g = sum(gamma)
    if K.family == "polyharmonic":
        if K.power > g:
            return mpf(0)
        raise SingularAtOriginError(
            f"derivative order {g} of r^{K.power} has no value at zero distance"
        )
    if any(gi % 2 for gi in gamma):
        return mpf(0)
    series = near_zero_series(K, max(4, g), prec)
    lead = series.leading_noneven
    if lead is not None and lead.exponent <= g:
        raise SingularAtOriginError(
            f"derivative order {g} exceeds the kernel smoothness "
            f"(leading non-even exponent {lead.exponent})"
        )
    j = g // 2
    if j >= len(series.even_coeffs):
        return mpf(0)
    mult = math.prod(math.factorial(gi) for gi in gamma) * math.factorial(j)
    mult //= math.prod(math.factorial(gi // 2) for gi in gamma)
    with mp.workprec(prec + GUARD_BITS):
        return series.even_coeffs[j] * mult


def bilinear_atom(
    K: Kernel,
    ax: Atom,
    ay: Atom,
    x: tuple[mpf, ...],
    y: tuple[mpf, ...],
    prec: int = DEFAULT_PREC,
    cache: LadderCache | None = None,
) -> mpf:
    """Mixed derivative D^ax_x D^ay_y K(||x - y||) at the given points.

    Derivatives on the y side flip sign once per order; the total derivative
    order is limited to four (double Laplacian application).
    """
    d = len(x)
    if len(y) != d:
        raise ValueError("point dimension mismatch")
    total_order = _atom_order(ax) + _atom_order(ay)
    if total_order > 4:
        raise UnsupportedOrderError("combined derivative order limited to 4")
    ex = _expand_atom(ax, d)
    ey = _expand_atom(ay, d)
    coincident = all(a == b for a, b in zip(x, y))
    wprec = prec + GUARD_BITS
    with mp.workprec(wprec):
        if coincident:
            total = mpf(0)
            for c1, g1 in ex:
                for c2, g2 in ey:
                    sgn = -1 if sum(g2) % 2 else 1
                    gamma = tuple(a + b for a, b in zip(g1, g2))
                    total += c1 * c2 * sgn * _coincident_atom(K, gamma, prec)
            return +total
        u = tuple(a - b for a, b in zip(x, y))
        r = mpmath.sqrt(sum(c * c for c in u))
        if cache is None:
            ladder = radial_derivatives(K, r, total_order, prec)
        else:
            ladder = cache.ladder(r, total_order)
        total = mpf(0)
        for c1, g1 in ex:
            for c2, g2 in ey:
                sgn = -1 if sum(g2) % 2 else 1
                gamma = tuple(a + b for a, b in zip(g1, g2))
                acc = mpf(0)
                for coef, beta, p, k in _radial_derivative_terms(gamma):
                    tt = mpf(coef)
                    for ui, bi in zip(u, beta):
                        if bi:
                            tt *= ui**bi
                    if p:
                        tt /= r**p
                    acc += tt * ladder[k]
                total += c1 * c2 * sgn * acc
        return +total

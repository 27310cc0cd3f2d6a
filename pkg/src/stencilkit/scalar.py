"""Configurable-precision real arithmetic and the special functions used by
the radial kernels.

Values are plain ``mpmath.mpf`` numbers; every operation takes an explicit
working precision in bits and is evaluated with guard bits before the result
is rounded back.  The Bessel-type functions always return the combination
``K_nu(r) * r**nu`` (kept bounded near zero), since that is the only form the
kernels need.

Small-radius series expansions are generated from exact rational
coefficients wherever the coefficients are rational (half-integer orders and
the logarithmic terms of integer orders), so that leading-term identities can
be checked exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import mpmath
from mpmath import mp, mpf

from .errors import PoleError, PrecisionLossError, RangeError, UnsupportedOrderError

Number = Union[int, float, str, Fraction, mpf]

#: default working precision (bits) for stencil construction
DEFAULT_PREC = 256
#: working precision for h-scaling studies, roughly 256 decimal digits
STUDY_PREC = 850
#: guard bits added to every internal computation
GUARD_BITS = 24

#: largest supported radius for the Bessel series evaluation; node-set
#: diameters stay far below this, and the asymptotic regime is out of scope
MAX_RADIUS = 64.0


def real(x: Number, prec: int = DEFAULT_PREC) -> mpf:
    """Convert ``x`` to an mpf at ``prec`` bits.

    Dyadic floats, integers and Fractions convert exactly (modulo final
    rounding); decimal strings are parsed at the requested precision.
    """
    with mp.workprec(prec):
        if isinstance(x, Fraction):
            return mpf(x.numerator) / x.denominator
        return mpf(x)


def as_fraction(x: Number) -> Fraction:
    """Exact rational value of ``x``; floats use their binary value."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, mpf):
        return Fraction(*mpmath.libmp.to_rational(x._mpf_))
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


def _round(x: mpf, prec: int) -> mpf:
    with mp.workprec(prec):
        return +x


def gamma(x: Number, prec: int = DEFAULT_PREC) -> mpf:
    """Gamma function, faithfully rounded at ``prec`` bits.

    Raises :class:`PoleError` for nonpositive integer arguments.
    """
    fx = as_fraction(x)
    if fx.denominator == 1 and fx <= 0:
        raise PoleError(f"gamma pole at {x}")
    with mp.workprec(prec + GUARD_BITS):
        val = mpmath.gamma(real(x, prec + GUARD_BITS))
    return _round(val, prec)


def is_integer(nu: Number) -> bool:
    return as_fraction(nu).denominator == 1


def is_half_integer(nu: Number) -> bool:
    f = as_fraction(nu)
    return f.denominator == 2


def series_normalization(nu: Number, prec: int = DEFAULT_PREC) -> mpf:
    """Scalar aligning ``K_nu(r) r^nu`` with its leading polyharmonic term.

    Half-integer orders get sqrt(2/pi) so the expansion has rational
    coefficients; integer and general orders are left unscaled.
    """
    if is_half_integer(nu):
        with mp.workprec(prec + GUARD_BITS):
            return _round(mpmath.sqrt(2 / mpmath.pi), prec)
    return real(1, prec)


# ---------------------------------------------------------------------------
# K_nu(r) * r^nu


def _kv_rv_nonint(nu: mpf, r: mpf, wprec: int) -> tuple[mpf, mpf]:
    """Non-integer order via (pi/2) (I_{-nu} - I_nu) / sin(pi nu).

    Returns (value, largest partial magnitude) for cancellation tracking.
    Both I-series are summed term by term with incremental updates.
    """
    with mp.workprec(wprec):
        r2 = r * r
        # A = I_{-nu}(r) r^nu  (even series), B = I_nu(r) r^nu
        ta = mpf(2) ** nu / mpmath.gamma(1 - nu)
        tb = mpf(2) ** (-nu) / mpmath.gamma(1 + nu) * r ** (2 * nu)
        a_sum, b_sum = ta, tb
        max_mag = max(abs(ta), abs(tb))
        k = 0
        tiny = mpf(2) ** (-wprec - 8)
        while k < 100000:
            k += 1
            ta = ta * r2 / (4 * k * (k - nu))
            tb = tb * r2 / (4 * k * (k + nu))
            a_sum += ta
            b_sum += tb
            mx = max(abs(ta), abs(tb))
            if mx > max_mag:
                max_mag = mx
            if mx < tiny * (abs(a_sum) + abs(b_sum) + 1):
                break
        front = mpmath.pi / (2 * mpmath.sin(mpmath.pi * nu))
        return front * (a_sum - b_sum), abs(front) * max_mag


def _kv_rv_int(n: int, r: mpf, wprec: int) -> tuple[mpf, mpf]:
    """Integer order via the logarithmic small-argument expansion."""
    with mp.workprec(wprec):
        r2 = r * r
        max_mag = mpf(0)
        # finite even polynomial part
        poly = mpf(0)
        for k in range(n):
            term = (
                mpf(math.factorial(n - 1 - k))
                / math.factorial(k)
                * (-1) ** k
                * mpf(2) ** (n - 2 * k - 1)
                * r2**k
            )
            poly += term
            max_mag = max(max_mag, abs(term))
        # log-bearing and digamma series share the factor r^{2n+2k}/(k!(n+k)! 2^{n+2k})
        sgn = mpf(-1) ** n
        logr = mpmath.log(r)
        ln2 = mpmath.log(2)
        base = mpf(2) ** (-n) / math.factorial(n) * r ** (2 * n)
        psi_a = -mpmath.euler  # psi(1)
        psi_b = -mpmath.euler + mpmath.fsum(mpf(1) / j for j in range(1, n + 1))
        tail = mpf(0)
        k = 0
        tiny = mpf(2) ** (-wprec - 8)
        while k < 100000:
            contrib = base * (-sgn * (logr - ln2) + sgn / 2 * (psi_a + psi_b))
            tail += contrib
            max_mag = max(max_mag, abs(contrib))
            if abs(base) < tiny * (abs(poly) + abs(tail) + 1):
                break
            k += 1
            base = base * r2 / (4 * k * (n + k))
            psi_a += mpf(1) / k
            psi_b += mpf(1) / (n + k)
        return poly + tail, max_mag


def bessel_kv_rv(nu: Number, r: Number, prec: int = DEFAULT_PREC) -> mpf:
    """``K_nu(r) * r**nu`` for nu >= 0, r > 0.

    Non-integer orders use the I-series difference formula; integer orders
    the logarithmic expansion.  If cancellation eats into the guard digits
    the computation is retried at boosted internal precision.
    """
    fnu = as_fraction(nu)
    if fnu < 0:
        raise ValueError("order must be nonnegative")
    wprec = prec + GUARD_BITS
    rr = real(r, wprec)
    if not rr > 0:
        raise ValueError("radius must be positive")
    if rr > MAX_RADIUS:
        raise RangeError(f"radius {r} beyond supported evaluation range")
    for _ in range(4):
        with mp.workprec(wprec):
            if fnu.denominator == 1:
                val, max_mag = _kv_rv_int(int(fnu), real(r, wprec), wprec)
            else:
                val, max_mag = _kv_rv_nonint(real(nu, wprec), real(r, wprec), wprec)
            lost = 0 if val == 0 else int(mpmath.mag(max_mag) - mpmath.mag(abs(val)))
        if lost <= GUARD_BITS // 2 or val == 0:
            return _round(val, prec)
        wprec = wprec + lost + GUARD_BITS
    raise PrecisionLossError(
        f"cancellation in K_nu series for nu={nu}, r={r} exceeded boost budget"
    )


# ---------------------------------------------------------------------------
# derivative ladder


def _ladder_terms(depth: int) -> list[dict[tuple[int, int], int]]:
    """Symbolic radial derivatives of f_nu expressed in shifted orders.

    Entry ``terms[j]`` maps (k, p) -> integer coefficient c with
    d^j/dr^j f_nu = sum c * r^p * f_{nu-k}, derived solely from the identity
    f_nu' = -r f_{nu-1} and the product rule.
    """
    out = [{(0, 0): 1}]
    for _ in range(depth):
        cur = out[-1]
        nxt: dict[tuple[int, int], int] = {}
        for (k, p), c in cur.items():
            if p > 0:
                nxt[(k, p - 1)] = nxt.get((k, p - 1), 0) + c * p
            nxt[(k + 1, p + 1)] = nxt.get((k + 1, p + 1), 0) - c
        out.append(nxt)
    return out


def kv_rv_derivative_ladder(
    nu: Number, r: Number, depth: int, prec: int = DEFAULT_PREC
) -> list[mpf]:
    """Radial derivatives of ``f_nu(r) = K_nu(r) r^nu`` up to order ``depth``.

    Produced by composing the shift identity f_nu' = -r f_{nu-1} with the
    product rule; no numerical differentiation happens anywhere.
    """
    if depth < 0 or depth > 4:
        raise UnsupportedOrderError(f"derivative depth {depth} outside 0..4")
    fnu = as_fraction(nu)
    wprec = prec + GUARD_BITS
    rr = real(r, wprec)
    # f_{nu-k} = K_{|nu-k|}(r) r^{nu-k}; the order of K is even in its index
    fvals = []
    with mp.workprec(wprec):
        for k in range(depth + 1):
            mu = fnu - k
            base = bessel_kv_rv(abs(mu), rr, wprec)
            fvals.append(base * rr ** real(mu - abs(mu), wprec))
        terms = _ladder_terms(depth)
        out = []
        for tm in terms:
            acc = mpf(0)
            for (k, p), c in tm.items():
                acc += c * rr**p * fvals[k]
            out.append(_round(acc, prec))
    return out


# ---------------------------------------------------------------------------
# series expansions


@dataclass(frozen=True)
class NonevenTerm:
    """One non-even series term ``coeff * r**exponent * (log r if has_log)``."""

    exponent: Fraction
    has_log: bool
    coeff: mpf
    exact: Fraction | None = None


@dataclass(frozen=True)
class SeriesExpansion:
    """Truncated small-radius expansion of a radial kernel.

    ``even_coeffs[j]`` multiplies r**(2j); non-even terms carry their own
    exponents, optional log factors, and exact rational values when the
    coefficient is rational.
    """

    even_coeffs: tuple[mpf, ...]
    noneven_terms: tuple[NonevenTerm, ...] = field(default_factory=tuple)
    truncation_order: int = 0

    def __post_init__(self):
        exps = [t.exponent for t in self.noneven_terms]
        if any(b <= a for a, b in zip(exps, exps[1:])):
            raise ValueError("non-even exponents must be strictly increasing")

    @property
    def leading_noneven(self) -> NonevenTerm | None:
        return self.noneven_terms[0] if self.noneven_terms else None

    def evaluate(self, r: Number, prec: int = DEFAULT_PREC) -> mpf:
        with mp.workprec(prec + GUARD_BITS):
            rr = real(r, prec + GUARD_BITS)
            acc = mpf(0)
            for j, c in enumerate(self.even_coeffs):
                acc += c * rr ** (2 * j)
            logr = mpmath.log(rr) if any(t.has_log for t in self.noneven_terms) else None
            for t in self.noneven_terms:
                piece = t.coeff * rr ** real(t.exponent, prec + GUARD_BITS)
                if t.has_log:
                    piece *= logr
                acc += piece
        return _round(acc, prec)


def _halfint_series(n: int, order: int, prec: int) -> SeriesExpansion:
    # sqrt(2/pi) K_{n+1/2}(r) r^{n+1/2} = exp(-r) * sum_k c_k r^{n-k}
    # with c_k = (n+k)! / (2^k k! (n-k)!); the product has exact rational
    # coefficients, and all odd powers below 2n+1 cancel.
    pcoef = {
        n - k: Fraction(math.factorial(n + k), 2**k * math.factorial(k) * math.factorial(n - k))
        for k in range(n + 1)
    }
    coeffs: list[Fraction] = []
    for j in range(order + 1):
        q = Fraction(0)
        for i, ci in pcoef.items():
            if j - i >= 0:
                q += ci * Fraction((-1) ** (j - i), math.factorial(j - i))
        coeffs.append(q)
    even = tuple(real(coeffs[2 * j], prec) for j in range(0, order // 2 + 1))
    nonev = []
    for e in range(1, order + 1, 2):
        q = coeffs[e]
        if e < 2 * n + 1:
            assert q == 0, "odd coefficient below the leading non-even term"
            continue
        nonev.append(NonevenTerm(Fraction(e), False, real(q, prec), exact=q))
    return SeriesExpansion(even, tuple(nonev), truncation_order=order + 1)


def _int_series(n: int, order: int, prec: int) -> SeriesExpansion:
    # K_n(r) r^n = even polynomial part + digamma tail + (-1)^{n+1} log(r/2)
    # times the even series of r^n I_n(r); log-term coefficients are rational.
    wprec = prec + GUARD_BITS
    even: list[mpf] = []
    nonev: list[NonevenTerm] = []
    with mp.workprec(wprec):
        ln2 = mpmath.log(2)
        for j in range(order // 2 + 1):
            if j < n:
                even.append(
                    _round(
                        mpf(math.factorial(n - 1 - j))
                        / math.factorial(j)
                        * (-1) ** j
                        * mpf(2) ** (n - 2 * j - 1),
                        prec,
                    )
                )
            else:
                k = j - n
                ik = Fraction(1, 2 ** (n + 2 * k) * math.factorial(k) * math.factorial(n + k))
                psi_sum = -2 * mpmath.euler + mpmath.fsum(
                    [mpf(1) / i for i in range(1, k + 1)]
                ) + mpmath.fsum([mpf(1) / i for i in range(1, n + k + 1)])
                val = (-1) ** n * (psi_sum / 2 + ln2) * mpf(ik.numerator) / ik.denominator
                even.append(_round(val, prec))
        for k in range(0, (order - 2 * n) // 2 + 1):
            if 2 * n + 2 * k > order:
                break
            ik = Fraction(1, 2 ** (n + 2 * k) * math.factorial(k) * math.factorial(n + k))
            q = Fraction((-1) ** (n + 1)) * ik
            nonev.append(
                NonevenTerm(Fraction(2 * n + 2 * k), True, real(q, prec), exact=q)
            )
    return SeriesExpansion(tuple(even), tuple(nonev), truncation_order=order + 1)


def _general_series(nu: Fraction, order: int, prec: int) -> SeriesExpansion:
    # K_nu(r) r^nu = (pi / (2 sin(pi nu))) [ I_{-nu} r^nu - I_nu r^nu ]:
    # an even series plus a series in r^{2nu+2k}.
    wprec = prec + 2 * GUARD_BITS
    with mp.workprec(wprec):
        nuf = real(nu, wprec)
        front = mpmath.pi / (2 * mpmath.sin(mpmath.pi * nuf))
        even = []
        t = mpf(2) ** nuf / mpmath.gamma(1 - nuf)
        for j in range(order // 2 + 1):
            even.append(_round(front * t, prec))
            t = t / (4 * (j + 1) * (j + 1 - nuf))
        nonev = []
        u = mpf(2) ** (-nuf) / mpmath.gamma(1 + nuf)
        k = 0
        while 2 * nu + 2 * k <= order:
            nonev.append(
                NonevenTerm(2 * nu + 2 * k, False, _round(-front * u, prec))
            )
            k += 1
            u = u / (4 * k * (k + nuf))
    return SeriesExpansion(tuple(even), tuple(nonev), truncation_order=order + 1)


def matern_series(nu: Number, order: int, prec: int = DEFAULT_PREC) -> SeriesExpansion:
    """Small-radius expansion of the aligned Bessel kernel of order ``nu``.

    Half-integer orders expand sqrt(2/pi) K_nu(r) r^nu (rational
    coefficients, leading non-even power r^{2n+1}); integer orders expand
    K_n(r) r^n (leading non-even term r^{2n} log r with rational
    coefficient); other positive orders get the two-sided series of greatest
    common generality, with non-even exponents 2 nu + 2k.
    """
    fnu = as_fraction(nu)
    if fnu <= 0:
        raise ValueError("order parameter nu must be positive")
    if order < 0:
        raise ValueError("truncation order must be nonnegative")
    if fnu.denominator == 1:
        return _int_series(int(fnu), order, prec)
    if fnu.denominator == 2:
        return _halfint_series(int(fnu - Fraction(1, 2)), order, prec)
    return _general_series(fnu, order, prec)

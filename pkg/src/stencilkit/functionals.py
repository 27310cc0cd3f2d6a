"""Differential functionals at the origin, their scaled error functionals,
and kernel dual pairings.

A functional is one of: point evaluation, a partial derivative of order at
most two, or the Laplacian, always taken at the origin.  Its scaling order s
is the derivative order: lambda(u(h .)) = h^s lambda(u).

An :class:`ErrorFunctional` represents eps_h = lambda - sum_j a_j h^{-s}
delta_{h x_j}; at h = 1 this is the plain stencil error lambda -
lambda_{a,X}.  Dual norms in kernel spaces are evaluated through the
bilinear kernel pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable

import mpmath
from mpmath import mp, mpf

from . import kernels
from .errors import ContinuityError, ExactnessViolationError
from .kernels import Atom, Kernel, LAPLACIAN, bilinear_atom
from .polyspace import MonomialBasis, NodeSet, monomial_value
from .scalar import DEFAULT_PREC, GUARD_BITS, Number, real


@dataclass(frozen=True)
class Functional:
    """Symbolic derivative functional at the origin."""

    kind: str  # "point_value" | "partial" | "laplacian"
    alpha: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("point_value", "partial", "laplacian"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "partial":
            if self.alpha is None or sum(self.alpha) > 2 or any(a < 0 for a in self.alpha):
                raise ValueError("partial derivatives supported up to total order 2")
        elif self.alpha is not None:
            raise ValueError("alpha only applies to partial derivatives")

    @property
    def scaling_order(self) -> int:
        if self.kind == "point_value":
            return 0
        if self.kind == "laplacian":
            return 2
        return sum(self.alpha)

    def atom(self) -> Atom:
        """Kernel-side atom for bilinear pairings."""
        if self.kind == "laplacian":
            return LAPLACIAN
        if self.kind == "point_value":
            return ()
        return self.alpha

    def describe(self) -> dict:
        out = {"atom": self.kind}
        if self.alpha is not None:
            out["alpha"] = list(self.alpha)
        return out


def point_value() -> Functional:
    return Functional("point_value")


def partial(alpha: Iterable[int]) -> Functional:
    return Functional("partial", tuple(alpha))


def laplacian() -> Functional:
    return Functional("laplacian")


def from_spec(spec: dict) -> Functional:
    """Functional from its config form, e.g. {"atom": "laplacian"}."""
    kind = spec.get("atom")
    if kind == "partial":
        return partial(spec["alpha"])
    if kind in ("point_value", "laplacian"):
        return Functional(kind)
    raise ValueError(f"unknown functional spec {spec!r}")


def apply_to_monomial(lam: Functional, alpha: tuple[int, ...]) -> int:
    """Exact value of the functional on the monomial x^alpha."""
    if lam.kind == "point_value":
        return 1 if not any(alpha) else 0
    if lam.kind == "partial":
        beta = lam.alpha
        if len(beta) != len(alpha):
            raise ValueError("dimension mismatch")
        if tuple(alpha) == tuple(beta):
            return math.prod(math.factorial(a) for a in alpha)
        return 0
    # laplacian: nonzero only on pure squares x_i^2
    if sum(alpha) == 2 and max(alpha) == 2:
        return 2
    return 0


def apply_to_kernel_slice(
    lam: Functional, K: Kernel, center: tuple[mpf, ...], prec: int = DEFAULT_PREC
) -> mpf:
    """Apply the functional to x -> K(||x - center||) at the origin."""
    d = len(center)
    origin = tuple(mpf(0) for _ in range(d))
    return bilinear_atom(K, lam.atom(), (), origin, center, prec)


@dataclass(frozen=True)
class ErrorFunctional:
    """eps_h = lambda - sum_j (a_j h^{-s}) delta_{h x_j}.

    ``weights`` are the base (h = 1) weights; the induced nodal part lives on
    the scaled nodes h X with weights a_j h^{-s}.
    """

    lam: Functional
    nodes: NodeSet
    weights: tuple[mpf, ...]
    h: mpf = mpf(1)

    def __post_init__(self):
        if len(self.weights) != len(self.nodes):
            raise ValueError("one weight per node required")
        if not (0 < self.h <= 1):
            raise ValueError("scale h must lie in (0, 1]")

    def induced_nodes(self, prec: int = DEFAULT_PREC) -> tuple[tuple[mpf, ...], ...]:
        with mp.workprec(prec):
            return tuple(tuple(self.h * x for x in p) for p in self.nodes.points)

    def induced_weights(self, prec: int = DEFAULT_PREC) -> tuple[mpf, ...]:
        s = self.lam.scaling_order
        with mp.workprec(prec):
            hs = self.h ** (-s)
            return tuple(w * hs for w in self.weights)

    def polynomial_residuals(self, q: int, prec: int = DEFAULT_PREC) -> list[mpf]:
        """Residuals lambda(p_k) - sum a_j p_k(x_j) at h = 1 for order q."""
        basis = MonomialBasis(self.nodes.dim, q)
        with mp.workprec(prec):
            out = []
            for alpha in basis.exponents:
                acc = real(apply_to_monomial(self.lam, alpha), prec)
                for w, p in zip(self.weights, self.nodes.points):
                    acc -= w * monomial_value(p, alpha)
                out.append(acc)
            return out


def scale(e: ErrorFunctional, h: Number, prec: int = DEFAULT_PREC) -> ErrorFunctional:
    """Enforced scaling: keep base weights, set the scale to h."""
    hh = real(h, prec)
    return replace(e, h=hh)


def _check_pairing_preconditions(
    e1: ErrorFunctional, e2: ErrorFunctional, K: Kernel, prec: int
) -> None:
    nu = K.nu
    for e in (e1, e2):
        s = e.lam.scaling_order
        if K.family == "gaussian":
            continue
        if K.family == "matern":
            if not nu > s:
                raise ContinuityError(
                    f"functional of scaling order {s} not continuous on the "
                    f"order-{K.m} space (need m > {s} + d/2)"
                )
        else:  # polyharmonic
            if not nu > s:
                raise ContinuityError(
                    f"scaling order {s} >= m - d/2 = {nu}: not continuous on "
                    "this polyharmonic-kernel space"
                )
    if K.family == "polyharmonic":
        q = K.cpd_order
        tol = mpf(2) ** (-(prec // 2))
        for e in (e1, e2):
            wscale = max([abs(w) for w in e.weights], default=mpf(0)) + 1
            for rres in e.polynomial_residuals(q, prec):
                if abs(rres) > tol * wscale:
                    raise ExactnessViolationError(
                        f"functional not exact of order {q}: the conditionally "
                        "positive definite form is not meaningful "
                        f"(residual {mpmath.nstr(abs(rres), 6)})"
                    )


def dual_pairing_with_diagnostics(
    e1: ErrorFunctional,
    e2: ErrorFunctional,
    K: Kernel,
    prec: int = DEFAULT_PREC,
) -> tuple[mpf, mpf]:
    """Kernel bilinear pairing of two error functionals.

    Returns (value, max_term) where max_term is the largest magnitude among
    the summed terms; the quotient estimates the cancellation suffered.
    """
    _check_pairing_preconditions(e1, e2, K, prec)
    wprec = prec + GUARD_BITS
    d = e1.nodes.dim
    if e2.nodes.dim != d:
        raise ValueError("dimension mismatch")
    a1 = e1.lam.atom()
    a2 = e2.lam.atom()
    val_atom: Atom = ()
    origin = tuple(mpf(0) for _ in range(d))
    cache = kernels.LadderCache(K, prec)
    with mp.workprec(wprec):
        y1 = e1.induced_nodes(wprec)
        w1 = e1.induced_weights(wprec)
        y2 = e2.induced_nodes(wprec)
        w2 = e2.induced_weights(wprec)
        total = bilinear_atom(K, a1, a2, origin, origin, prec, cache)
        max_term = abs(total)
        for w, p in zip(w2, y2):
            t = -w * bilinear_atom(K, a1, val_atom, origin, p, prec, cache)
            total += t
            max_term = max(max_term, abs(t))
        for w, p in zip(w1, y1):
            t = -w * bilinear_atom(K, val_atom, a2, p, origin, prec, cache)
            total += t
            max_term = max(max_term, abs(t))
        for wj, pj in zip(w1, y1):
            for wk, pk in zip(w2, y2):
                t = wj * wk * bilinear_atom(K, val_atom, val_atom, pj, pk, prec, cache)
                total += t
                max_term = max(max_term, abs(t))
        return +total, max_term


def dual_pairing(
    e1: ErrorFunctional, e2: ErrorFunctional, K: Kernel, prec: int = DEFAULT_PREC
) -> mpf:
    value, _ = dual_pairing_with_diagnostics(e1, e2, K, prec)
    return value

"""Multivariate polynomial spaces on node sets.

Order-q polynomials are those of degree < q; the monomial basis is fixed in
graded-lexicographic order so weight vectors and reports are reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import mpmath
from mpmath import mp, mpf, matrix

from . import linalg
from .errors import InconsistentSystemError
from .scalar import DEFAULT_PREC, GUARD_BITS, Number, real

if TYPE_CHECKING:  # pragma: no cover
    from .functionals import Functional


@dataclass(frozen=True)
class NodeSet:
    """Finite set of distinct d-dimensional points."""

    dim: int
    points: tuple[tuple[mpf, ...], ...]
    label: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        seen = set()
        for p in self.points:
            if len(p) != self.dim:
                raise ValueError("point dimension mismatch")
            if p in seen:
                raise ValueError(f"duplicate node {p}")
            seen.add(p)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_values(cls, values: Sequence[Sequence[Number]], label: str = "",
                    prec: int = DEFAULT_PREC) -> "NodeSet":
        pts = tuple(tuple(real(x, prec) for x in p) for p in values)
        if not pts:
            raise ValueError("empty node set")
        return cls(len(pts[0]), pts, label)

    def scaled(self, h: Number, prec: int = DEFAULT_PREC) -> "NodeSet":
        hh = real(h, prec)
        with mp.workprec(prec):
            pts = tuple(tuple(hh * x for x in p) for p in self.points)
        return NodeSet(self.dim, pts, self.label)

    def diameter(self, prec: int = DEFAULT_PREC) -> mpf:
        with mp.workprec(prec):
            best = mpf(0)
            for i, p in enumerate(self.points):
                for q in self.points[i + 1:]:
                    d = mpmath.sqrt(sum((a - b) ** 2 for a, b in zip(p, q)))
                    if d > best:
                        best = d
            return best


def five_point_star(prec: int = DEFAULT_PREC) -> NodeSet:
    """The plus-shaped 5-node set (0, +-e1, +-e2) in 2D."""
    return NodeSet.from_values(
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)], label="five-point-star", prec=prec
    )


def dimension(q: int, d: int) -> int:
    """dim of the order-q polynomials in d variables: C(q+d-1, d)."""
    if q < 1 or d < 1:
        raise ValueError("q and d must be >= 1")
    return math.comb(q + d - 1, d)


def multi_indices(q: int, d: int) -> list[tuple[int, ...]]:
    """All exponent vectors with |alpha| < q, graded-lexicographically."""
    out: list[tuple[int, ...]] = []
    for total in range(q):
        level: list[tuple[int, ...]] = []

        def rec(prefix, remaining, slots):
            if slots == 1:
                level.append(prefix + (remaining,))
                return
            for v in range(remaining, -1, -1):
                rec(prefix + (v,), remaining - v, slots - 1)

        rec((), total, d)
        out.extend(sorted(level, reverse=True))
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """Graded-lex monomial basis of the order-q polynomial space."""

    dim: int
    order: int
    exponents: tuple[tuple[int, ...], ...] = field(default=None)

    def __post_init__(self):
        if self.exponents is None:
            object.__setattr__(
                self, "exponents", tuple(multi_indices(self.order, self.dim))
            )
        if len(self.exponents) != dimension(self.order, self.dim):
            raise ValueError("basis length inconsistent with its order")

    def __len__(self) -> int:
        return len(self.exponents)


def monomial_value(point: tuple[mpf, ...], alpha: tuple[int, ...]) -> mpf:
    acc = mpf(1)
    for x, a in zip(point, alpha):
        if a:
            acc *= x**a
    return acc


def value_matrix(basis: MonomialBasis, X: NodeSet, prec: int = DEFAULT_PREC) -> matrix:
    """Q x M matrix of basis values p_k(x_j)."""
    if basis.dim != X.dim:
        raise ValueError("dimension mismatch between basis and nodes")
    with mp.workprec(prec):
        return matrix(
            [[monomial_value(p, alpha) for p in X.points] for alpha in basis.exponents]
        )


def reproduction_order(X: NodeSet, prec: int = DEFAULT_PREC, tolerance=None) -> int:
    """Largest q such that order-q polynomials are recoverable from values on X
    (the value matrix has full row rank); 0 if even constants fail."""
    if tolerance is None:
        tolerance = linalg.default_rank_tolerance(prec)
    q = 0
    while dimension(q + 1, X.dim) <= len(X):
        Vm = value_matrix(MonomialBasis(X.dim, q + 1), X, prec)
        dec = linalg.rank_decision(Vm, prec, tolerance)
        if dec.numerical_rank < Vm.rows:
            break
        q += 1
    return q


@dataclass(frozen=True)
class QmaxResult:
    """Outcome of the maximal-exactness-order search."""

    order: int
    capped: bool
    #: per tested order: descending singular values of the exactness system
    singular_values: dict[int, tuple[mpf, ...]]


def qmax(
    lam: "Functional",
    X: NodeSet,
    prec: int = DEFAULT_PREC,
    tolerance=None,
    cap: int = 10,
) -> QmaxResult:
    """Largest order q <= cap with a consistent exactness system on X.

    Feasibility is monotone (exactness at q implies it below q), so the
    search walks upward and stops at the first inconsistent system, probed
    by a residual test after a minimum-norm solve.
    """
    from .functionals import apply_to_monomial

    if cap < 1:
        raise ValueError("cap must be >= 1")
    if tolerance is None:
        tolerance = linalg.default_rank_tolerance(prec)
    diagnostics: dict[int, tuple[mpf, ...]] = {}
    order = 0
    for q in range(1, cap + 1):
        basis = MonomialBasis(X.dim, q)
        Vm = value_matrix(basis, X, prec)
        rhs = matrix([[real(apply_to_monomial(lam, a), prec)] for a in basis.exponents])
        U, sigma, V = linalg.svd(Vm, prec)
        diagnostics[q] = tuple(sigma)
        try:
            linalg.min_norm_solve(Vm, rhs, prec, tolerance)
        except InconsistentSystemError:
            return QmaxResult(order, False, diagnostics)
        order = q
    return QmaxResult(order, True, diagnostics)


def random_nodes(
    count: int,
    dim: int,
    seed: int,
    min_separation: float | None = None,
    prec: int = DEFAULT_PREC,
    max_tries: int = 100000,
) -> NodeSet:
    """Uniform nodes in [-1, 1]^d with a minimum-separation rejection rule.

    The default separation 0.1 * count**(-1/d) keeps sets in general
    position without imposing structure.  Fully seeded and reproducible.
    """
    if min_separation is None:
        min_separation = 0.1 * count ** (-1.0 / dim)
    rng = random.Random(seed)
    pts: list[tuple[float, ...]] = []
    tries = 0
    while len(pts) < count:
        tries += 1
        if tries > max_tries:
            raise ValueError("separation constraint too tight for the requested count")
        cand = tuple(rng.uniform(-1.0, 1.0) for _ in range(dim))
        ok = True
        for p in pts:
            if math.dist(p, cand) < min_separation:
                ok = False
                break
        if ok:
            pts.append(cand)
    return NodeSet.from_values(
        pts, label=f"random(count={count},dim={dim},seed={seed})", prec=prec
    )

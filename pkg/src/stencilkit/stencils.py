"""Stencil construction.

Four builders:

* minimum-norm weights from the polynomial exactness system (underdetermined
  systems resolved by the smallest Euclidean norm),
* Lagrange-basis weights on a unisolvent subset,
* kernel-optimal scalable weights from polyharmonic saddle-point systems,
* kernel-optimal non-scalable weights from Whittle-Matern Gram systems at a
  fixed scale h.

The first three are scalable: their weights are h-independent and rescale as
a * h^{-s} on h X.  The Gram-optimal weights depend on h.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import mpmath
from mpmath import mp, mpf, matrix

from . import kernels, linalg, polyspace
from .errors import (
    ContinuityError,
    IllConditionedWarning,
    InconsistentSystemError,
    InfeasibleOrderError,
    InsufficientReproductionError,
)
from .functionals import (
    ErrorFunctional,
    Functional,
    apply_to_kernel_slice,
    apply_to_monomial,
    from_spec as functional_from_spec,
)
from .kernels import Kernel
from .polyspace import MonomialBasis, NodeSet, value_matrix
from .scalar import DEFAULT_PREC, GUARD_BITS, Number, as_fraction, real


@dataclass(frozen=True)
class Stencil:
    """Weight vector approximating a functional on a node set."""

    lam: Functional
    nodes: NodeSet
    weights: tuple[mpf, ...]
    exactness_order: int
    method: str
    scalable: bool
    #: scale the weights were built for; meaningful for non-scalable methods
    h: mpf = mpf(1)
    #: method parameter (kernel smoothness m) where applicable
    m: Fraction | None = None

    def error_functional(self, h: Number | None = None, prec: int = DEFAULT_PREC) -> ErrorFunctional:
        """Error functional at scale h (enforced scaling for scalable
        stencils; non-scalable stencils carry their own build scale)."""
        if self.scalable:
            hh = real(1 if h is None else h, prec)
            return ErrorFunctional(self.lam, self.nodes, self.weights, h=hh)
        if h is not None and real(h, prec) != self.h:
            raise ValueError(
                "non-scalable weights are tied to their build scale; rebuild instead"
            )
        s = self.lam.scaling_order
        with mp.workprec(prec + GUARD_BITS):
            base = tuple(w * self.h**s for w in self.weights)
        return ErrorFunctional(self.lam, self.nodes, base, h=self.h)

    def exactness_residuals(self, q: int | None = None, prec: int = DEFAULT_PREC) -> list[mpf]:
        qq = self.exactness_order if q is None else q
        if qq < 1:
            return []
        if self.scalable:
            e = ErrorFunctional(self.lam, self.nodes, self.weights, h=mpf(1))
            return e.polynomial_residuals(qq, prec)
        # residuals of the scaled system: lambda(p) vs sum a_j p(h x_j)
        basis = MonomialBasis(self.nodes.dim, qq)
        scaled = self.nodes.scaled(self.h, prec)
        with mp.workprec(prec + GUARD_BITS):
            out = []
            for alpha in basis.exponents:
                acc = real(apply_to_monomial(self.lam, alpha), prec)
                hpow = self.h ** (sum(alpha) - self.lam.scaling_order)
                acc *= hpow
                for w, p in zip(self.weights, scaled.points):
                    acc -= w * polyspace.monomial_value(p, alpha)
                out.append(acc)
            return out


def _exactness_rhs(lam: Functional, basis: MonomialBasis, prec: int) -> matrix:
    return matrix([[real(apply_to_monomial(lam, a), prec)] for a in basis.exponents])


def build_exact(
    lam: Functional, X: NodeSet, q: int, prec: int = DEFAULT_PREC, tolerance=None
) -> Stencil:
    """Minimum-Euclidean-norm weights exact on order-q polynomials."""
    basis = MonomialBasis(X.dim, q)
    Vm = value_matrix(basis, X, prec)
    rhs = _exactness_rhs(lam, basis, prec)
    try:
        a = linalg.min_norm_solve(Vm, rhs, prec, tolerance)
    except InconsistentSystemError as exc:
        raise InfeasibleOrderError(
            f"no weights on these {len(X)} nodes are exact of order {q} "
            f"(residual {mpmath.nstr(exc.residual, 6)})",
            residual=exc.residual,
        ) from exc
    return Stencil(lam, X, tuple(a), q, "min_norm", scalable=True)


def build_lagrange(lam: Functional, X: NodeSet, q: int, prec: int = DEFAULT_PREC) -> Stencil:
    """Weights obtained by applying the functional to a Lagrange basis on a
    unisolvent subset of X (zero weights off the subset)."""
    basis = MonomialBasis(X.dim, q)
    Q = len(basis)
    Vm = value_matrix(basis, X, prec)
    dec = linalg.rank_decision(Vm, prec)
    if dec.numerical_rank < Q:
        raise InsufficientReproductionError(
            f"node set does not determine order-{q} polynomials "
            f"(rank {dec.numerical_rank} < {Q})"
        )
    # column-pivoted elimination picks Q well-conditioned nodes
    with mp.workprec(prec + GUARD_BITS):
        W = Vm.copy()
        cols = list(range(W.cols))
        chosen: list[int] = []
        for k in range(Q):
            best, bestj = mpf(-1), None
            for j in cols:
                nrm = mpmath.sqrt(sum(W[i, j] ** 2 for i in range(k, Q)))
                if nrm > best:
                    best, bestj = nrm, j
            chosen.append(bestj)
            cols.remove(bestj)
            piv = W[k, bestj]
            if piv == 0:  # pragma: no cover - rank guard above
                raise InsufficientReproductionError("pivot collapse during selection")
            for j in list(cols) + [bestj]:
                if j == bestj:
                    continue
                f = W[k, j] / piv
                for i in range(Q):
                    W[i, j] -= f * W[i, bestj]
        VY = matrix(Q, Q)
        for newj, oldj in enumerate(chosen):
            for i in range(Q):
                VY[i, newj] = Vm[i, oldj]
        rhs = _exactness_rhs(lam, basis, prec)
        aY, _ = linalg.lu_solve_full_pivot(VY, rhs, prec)
        weights = [mpf(0)] * len(X)
        for pos, oldj in enumerate(chosen):
            weights[oldj] = aY[pos, 0]
    return Stencil(lam, X, tuple(weights), q, "lagrange", scalable=True)


def build_polyharmonic(lam: Functional, X: NodeSet, m: Number, prec: int = DEFAULT_PREC) -> Stencil:
    """Scalable weights minimizing the polyharmonic-kernel dual norm under
    exactness of the kernel's conditional-positive-definiteness order."""
    K = kernels.polyharmonic(m, X.dim)
    s = lam.scaling_order
    if not K.nu > s:
        raise ContinuityError(
            f"scaling order {s} requires m - d/2 > {s}, got {K.nu}"
        )
    q = K.cpd_order
    basis = MonomialBasis(X.dim, q)
    P = value_matrix(basis, X, prec)
    c = _exactness_rhs(lam, basis, prec)
    M = len(X)
    cache = kernels.LadderCache(K, prec)
    with mp.workprec(prec + GUARD_BITS):
        A = matrix(M, M)
        for i in range(M):
            for j in range(i + 1, M):
                r = mpmath.sqrt(
                    sum((a - b) ** 2 for a, b in zip(X.points[i], X.points[j]))
                )
                A[i, j] = A[j, i] = cache.ladder(r, 0)[0]
        b = matrix(
            [[apply_to_kernel_slice(lam, K, p, prec)] for p in X.points]
        )
    a, _mu = linalg.solve_saddle(A, P, b, c, prec)
    return Stencil(lam, X, tuple(a), q, "polyharmonic", scalable=True, m=as_fraction(m))


def build_kernel_optimal(
    lam: Functional, X: NodeSet, K: Kernel, h: Number, prec: int = DEFAULT_PREC
) -> Stencil:
    """Weights minimizing the dual norm of lambda - sum a_j delta_{h x_j} in
    the native space of a positive definite kernel: one Gram solve on h X.

    Non-scalable: the weights depend on h.
    """
    if K.cpd_order != 0:
        raise ValueError("Gram construction needs a positive definite kernel")
    if K.d != X.dim:
        raise ValueError("kernel/node dimension mismatch")
    s = lam.scaling_order
    if K.family == "matern" and not K.nu > s:
        raise ContinuityError(
            f"scaling order {s} requires m > {s} + d/2, got m = {K.m}, d = {X.dim}"
        )
    hh = real(h, prec + GUARD_BITS)
    if not hh > 0:
        raise ValueError("scale h must be positive")
    M = len(X)
    cache = kernels.LadderCache(K, prec)
    with mp.workprec(prec + GUARD_BITS):
        pts = tuple(tuple(hh * x for x in p) for p in X.points)
        A = matrix(M, M)
        k0 = kernels.value(K, 0, prec)
        for i in range(M):
            A[i, i] = k0
            for j in range(i + 1, M):
                r = mpmath.sqrt(sum((a - b) ** 2 for a, b in zip(pts[i], pts[j])))
                A[i, j] = A[j, i] = cache.ladder(r, 0)[0]
        b = matrix([[apply_to_kernel_slice(lam, K, p, prec)] for p in pts])
        a, pivot_ratio = linalg.lu_solve_full_pivot(A, b, prec)
        if pivot_ratio > mpf(2) ** (prec // 2):
            lost = int(mpmath.log(pivot_ratio, 2))
            warnings.warn(
                f"Gram solve lost about {lost} of {prec} bits; "
                f"recommend at least {2 * lost + 64} bits",
                IllConditionedWarning,
            )
    method = "sobolev_optimal" if K.family == "matern" else f"{K.family}_optimal"
    return Stencil(
        lam,
        X,
        tuple(a),
        0,
        method,
        scalable=False,
        h=real(h, prec),
        m=K.m,
    )


def build_sobolev_optimal(
    lam: Functional, X: NodeSet, m: Number, h: Number, prec: int = DEFAULT_PREC
) -> Stencil:
    """Sobolev-space optimal weights at scale h (Whittle-Matern Gram system)."""
    return build_kernel_optimal(lam, X, kernels.matern(m, X.dim), h, prec)


# ---------------------------------------------------------------------------
# serialization


def stencil_to_json(st: Stencil, prec: int = DEFAULT_PREC) -> str:
    dps = int(prec / 3.3219280948873626) + 5
    with mp.workprec(prec + GUARD_BITS):
        doc = {
            "lambda": st.lam.describe(),
            "nodes": {
                "dim": st.nodes.dim,
                "label": st.nodes.label,
                "points": [
                    [mpmath.nstr(x, dps) for x in p] for p in st.nodes.points
                ],
            },
            "weights": [mpmath.nstr(w, dps) for w in st.weights],
            "q": st.exactness_order,
            "method": st.method,
            "scalable": st.scalable,
            "h": mpmath.nstr(st.h, dps),
            "m": str(st.m) if st.m is not None else None,
            "precision_bits": prec,
        }
    return json.dumps(doc, indent=2, sort_keys=True)


def stencil_from_json(text: str, prec: int | None = None) -> Stencil:
    doc = json.loads(text)
    p = prec if prec is not None else int(doc.get("precision_bits", DEFAULT_PREC))
    lam = functional_from_spec(doc["lambda"])
    X = NodeSet.from_values(doc["nodes"]["points"], doc["nodes"].get("label", ""), prec=p)
    weights = tuple(real(w, p) for w in doc["weights"])
    mval = doc.get("m")
    return Stencil(
        lam,
        X,
        weights,
        int(doc["q"]),
        doc["method"],
        bool(doc["scalable"]),
        h=real(doc.get("h", 1), p),
        m=Fraction(mval) if mval else None,
    )

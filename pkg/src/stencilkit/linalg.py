"""Dense extended-precision linear algebra on ``mpmath.matrix``.

Provides a one-sided Jacobi SVD (high relative accuracy for small singular
values, which the rank diagnostics rely on), SVD-based minimum-norm solves
with a residual consistency test, a fully pivoted LU solver, and the
symmetric-indefinite block solver for equality-constrained kernel
minimization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import mpmath
from mpmath import mp, mpf, matrix

from .errors import (
    ConvergenceError,
    IllConditionedWarning,
    InconsistentSystemError,
    RankDeficientConstraintsError,
    SingularMatrixError,
)
from .scalar import DEFAULT_PREC, GUARD_BITS

Matrix = matrix


def default_rank_tolerance(prec: int) -> mpf:
    """Relative singular-value cutoff: 1e-12 in the double regime, otherwise
    half the working bits."""
    if prec <= 53:
        return mpf("1e-12")
    return mpf(2) ** (-(prec // 2))


@dataclass(frozen=True)
class RankDecision:
    """Numerical rank of a matrix from its singular values."""

    numerical_rank: int
    singular_values: tuple[mpf, ...]
    tolerance: mpf

    @classmethod
    def from_singular_values(cls, sigma, tolerance) -> "RankDecision":
        svals = tuple(sigma)
        if svals and svals[0] > 0:
            cut = tolerance * svals[0]
            rank = sum(1 for s in svals if s > cut)
        else:
            rank = 0
        return cls(rank, svals, tolerance)


def mat_from_rows(rows, prec: int = DEFAULT_PREC) -> matrix:
    with mp.workprec(prec):
        return matrix([[mpf(x) if not isinstance(x, mpf) else x for x in r] for r in rows])


def max_abs(A: matrix) -> mpf:
    m = mpf(0)
    for x in A:
        ax = abs(x)
        if ax > m:
            m = ax
    return m


def _jacobi_sweeps(B: matrix, V: matrix, wprec: int, max_sweeps: int) -> None:
    """Orthogonalize the columns of B in place, accumulating rotations in V."""
    n = B.cols
    rows = B.rows
    eps = mpf(2) ** (-wprec + 4)
    for _ in range(max_sweeps):
        rotated = False
        # columns whose norm collapsed to rotation noise are left alone
        norms2 = []
        for j in range(n):
            norms2.append(sum(B[i, j] ** 2 for i in range(rows)))
        nmax2 = max(norms2) if norms2 else mpf(0)
        dead = nmax2 * mpf(2) ** (-2 * (wprec - 10))
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = mpf(0)
                beta = mpf(0)
                gam = mpf(0)
                for i in range(rows):
                    bp, bq = B[i, p], B[i, q]
                    alpha += bp * bp
                    beta += bq * bq
                    gam += bp * bq
                if alpha <= dead or beta <= dead:
                    continue
                if abs(gam) <= eps * mpmath.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2 * gam)
                t = mpmath.sign(zeta) / (abs(zeta) + mpmath.sqrt(1 + zeta * zeta))
                c = 1 / mpmath.sqrt(1 + t * t)
                s = c * t
                for i in range(rows):
                    bp, bq = B[i, p], B[i, q]
                    B[i, p] = c * bp - s * bq
                    B[i, q] = s * bp + c * bq
                for i in range(n):
                    vp, vq = V[i, p], V[i, q]
                    V[i, p] = c * vp - s * vq
                    V[i, q] = s * vp + c * vq
        if not rotated:
            return
    raise ConvergenceError(
        f"one-sided Jacobi SVD did not converge in {max_sweeps} sweeps; "
        "raise the working precision"
    )


def _orthonormal_fill(U: matrix, start: int, wprec: int) -> None:
    """Extend the first ``start`` orthonormal columns of U to a full set by
    Gram-Schmidt over standard basis vectors (rank-deficient inputs)."""
    rows, cols = U.rows, U.cols
    col = start
    for k in range(rows):
        if col >= cols:
            return
        v = matrix(rows, 1)
        v[k, 0] = mpf(1)
        for j in range(col):
            dot = mpf(0)
            for i in range(rows):
                dot += U[i, j] * v[i, 0]
            for i in range(rows):
                v[i, 0] -= dot * U[i, j]
        nrm = mpmath.sqrt(sum(v[i, 0] ** 2 for i in range(rows)))
        if nrm < mpf(2) ** (-wprec // 2):
            continue
        for i in range(rows):
            U[i, col] = v[i, 0] / nrm
        col += 1


def svd(A: matrix, prec: int = DEFAULT_PREC, max_sweeps: int = 80):
    """Thin SVD ``A = U @ diag(sigma) @ V.T`` by one-sided Jacobi rotations.

    Returns (U, sigma, V) with sigma a descending list of length
    min(rows, cols).  Wide matrices are handled through their transpose.
    """
    wprec = prec + GUARD_BITS
    with mp.workprec(wprec):
        if A.rows < A.cols:
            Vt, sigma, Ut = svd(A.T, prec, max_sweeps)
            return Ut, sigma, Vt
        B = A.copy()
        n = B.cols
        V = mpmath.eye(n)
        _jacobi_sweeps(B, V, wprec, max_sweeps)
        norms = []
        for j in range(n):
            norms.append(mpmath.sqrt(sum(B[i, j] ** 2 for i in range(B.rows))))
        order = sorted(range(n), key=lambda j: -norms[j])
        sigma = [norms[j] for j in order]
        U = matrix(B.rows, n)
        Vs = matrix(n, n)
        smax = sigma[0] if sigma else mpf(0)
        zero_cut = smax * mpf(2) ** (-(wprec - 8)) if smax > 0 else mpf(0)
        nfilled = 0
        for newj, oldj in enumerate(order):
            for i in range(n):
                Vs[i, newj] = V[i, oldj]
            if sigma[newj] > zero_cut:
                for i in range(B.rows):
                    U[i, newj] = B[i, oldj] / sigma[newj]
                nfilled = newj + 1
            else:
                sigma[newj] = mpf(0) if sigma[newj] == 0 else sigma[newj]
        _orthonormal_fill(U, nfilled, wprec)
        return U, sigma, Vs


def rank_decision(A: matrix, prec: int = DEFAULT_PREC, tolerance=None) -> RankDecision:
    if tolerance is None:
        tolerance = default_rank_tolerance(prec)
    _, sigma, _ = svd(A, prec)
    return RankDecision.from_singular_values(sigma, tolerance)


def min_norm_solve(A: matrix, b: matrix, prec: int = DEFAULT_PREC, tolerance=None) -> matrix:
    """Minimum-Euclidean-norm solution of ``A x = b`` via the SVD
    pseudoinverse, with a post-hoc residual consistency test.

    Raises :class:`InconsistentSystemError` (with the attained residual) when
    b is not in the numerical range of A.
    """
    if tolerance is None:
        tolerance = default_rank_tolerance(prec)
    wprec = prec + GUARD_BITS
    with mp.workprec(wprec):
        U, sigma, V = svd(A, prec)
        dec = RankDecision.from_singular_values(sigma, tolerance)
        x = matrix(A.cols, 1)
        for j in range(dec.numerical_rank):
            coef = mpf(0)
            for i in range(A.rows):
                coef += U[i, j] * b[i, 0]
            coef /= sigma[j]
            for i in range(A.cols):
                x[i, 0] += coef * V[i, j]
        resid = max_abs(A * x - b)
        scale = max(mpf(1), max_abs(b), max_abs(A) * max_abs(x))
        if resid > tolerance * scale:
            raise InconsistentSystemError(
                f"right-hand side outside numerical range (residual {mpmath.nstr(resid, 6)})",
                residual=resid,
            )
        return x


def lu_solve_full_pivot(K: matrix, rhs: matrix, prec: int = DEFAULT_PREC) -> tuple[matrix, mpf]:
    """Solve ``K x = rhs`` by LU with full (row and column) pivoting.

    Returns (x, pivot_ratio) where pivot_ratio = max|pivot| / min|pivot|
    serves as a cheap condition indicator.
    """
    n = K.rows
    if K.cols != n:
        raise ValueError("square matrix required")
    wprec = prec + GUARD_BITS
    with mp.workprec(wprec):
        M = K.copy()
        x = rhs.copy()
        colperm = list(range(n))
        pivots = []
        for k in range(n):
            pr, pc, pv = k, k, abs(M[k, k])
            for i in range(k, n):
                for j in range(k, n):
                    a = abs(M[i, j])
                    if a > pv:
                        pr, pc, pv = i, j, a
            if pv == 0:
                raise SingularMatrixError("matrix numerically singular in full-pivot LU")
            if pr != k:
                for j in range(n):
                    M[k, j], M[pr, j] = M[pr, j], M[k, j]
                x[k, 0], x[pr, 0] = x[pr, 0], x[k, 0]
            if pc != k:
                for i in range(n):
                    M[i, k], M[i, pc] = M[i, pc], M[i, k]
                colperm[k], colperm[pc] = colperm[pc], colperm[k]
            pivots.append(pv)
            piv = M[k, k]
            for i in range(k + 1, n):
                f = M[i, k] / piv
                if f == 0:
                    continue
                M[i, k] = mpf(0)
                for j in range(k + 1, n):
                    M[i, j] -= f * M[k, j]
                x[i, 0] -= f * x[k, 0]
        y = matrix(n, 1)
        for i in range(n - 1, -1, -1):
            acc = x[i, 0]
            for j in range(i + 1, n):
                acc -= M[i, j] * y[j, 0]
            y[i, 0] = acc / M[i, i]
        out = matrix(n, 1)
        for k in range(n):
            out[colperm[k], 0] = y[k, 0]
        ratio = pivots[0] / pivots[-1] if pivots[-1] > 0 else mpf("inf")
        return out, ratio


def _independent_rows(P: matrix, rank: int, prec: int) -> list[int]:
    """Indices of ``rank`` linearly independent rows, chosen by pivoted
    elimination (largest remaining entry first)."""
    with mp.workprec(prec + GUARD_BITS):
        W = P.copy()
        Q, M = W.rows, W.cols
        remaining = list(range(Q))
        chosen: list[int] = []
        usable_cols = list(range(M))
        for _ in range(rank):
            best, bi, bj = mpf(-1), None, None
            for i in remaining:
                for j in usable_cols:
                    a = abs(W[i, j])
                    if a > best:
                        best, bi, bj = a, i, j
            if bi is None or best == 0:
                break
            chosen.append(bi)
            remaining.remove(bi)
            usable_cols.remove(bj)
            piv = W[bi, bj]
            for i in remaining:
                f = W[i, bj] / piv
                if f == 0:
                    continue
                for j in range(M):
                    W[i, j] -= f * W[bi, j]
        return sorted(chosen)


def solve_saddle(
    A: matrix,
    P: matrix,
    b: matrix,
    c: matrix,
    prec: int = DEFAULT_PREC,
    tolerance=None,
) -> tuple[matrix, matrix]:
    """Solve the equality-constrained quadratic minimization

        minimize  a^T A a - 2 a^T b   subject to  P a = c

    through the blocked symmetric-indefinite system
    ``[[A, P^T], [P, 0]] [a; mu] = [b; c]`` with full pivoting.  A may be
    only conditionally definite, so no Schur complement of A is formed.
    """
    if tolerance is None:
        tolerance = default_rank_tolerance(prec)
    M = A.rows
    Q = P.rows
    if A.cols != M or P.cols != M or b.rows != M or c.rows != Q:
        raise ValueError("inconsistent block dimensions")
    P_full, c_full, Q_full = P, c, Q
    dec = rank_decision(P, prec, tolerance)
    if dec.numerical_rank < Q:
        # Redundant rows are fine as long as the full system stays
        # consistent (e.g. more exactness equations than nodes); reduce to
        # an independent row subset before forming the block system.
        try:
            min_norm_solve(P, c, prec, tolerance)
        except InconsistentSystemError as exc:
            raise RankDeficientConstraintsError(
                "exactness constraints unsatisfiable on this node set "
                f"(rank {dec.numerical_rank} of {Q}, residual "
                f"{mpmath.nstr(exc.residual, 6)})"
            ) from exc
        kept_rows = _independent_rows(P, dec.numerical_rank, prec)
        with mp.workprec(prec + GUARD_BITS):
            P = matrix([[P_full[i, j] for j in range(M)] for i in kept_rows])
            c = matrix([[c_full[i, 0]] for i in kept_rows])
        Q = dec.numerical_rank
    else:
        kept_rows = list(range(Q))
    wprec = prec + GUARD_BITS
    with mp.workprec(wprec):
        K = matrix(M + Q, M + Q)
        rhs = matrix(M + Q, 1)
        for i in range(M):
            rhs[i, 0] = b[i, 0]
            for j in range(M):
                K[i, j] = A[i, j]
            for q in range(Q):
                K[i, M + q] = P[q, i]
                K[M + q, i] = P[q, i]
        for q in range(Q):
            rhs[M + q, 0] = c[q, 0]
        sol, pivot_ratio = lu_solve_full_pivot(K, rhs, prec)
        if pivot_ratio > mpf(2) ** (prec // 2):
            warnings.warn(
                f"saddle system condition indicator 2^{mpmath.nstr(mpmath.log(pivot_ratio, 2), 4)} "
                f"exceeds half the working precision ({prec} bits); consider "
                f"{int(2 * mpmath.log(pivot_ratio, 2)) + 64} bits",
                IllConditionedWarning,
            )
        a = sol[:M, 0]
        mu_red = sol[M:, 0]
        if Q < Q_full:
            mu = matrix(Q_full, 1)
            for pos, i in enumerate(kept_rows):
                mu[i, 0] = mu_red[pos, 0]
        else:
            mu = mu_red
        res1 = max_abs(A * a + P_full.T * mu - b)
        res2 = max_abs(P_full * a - c_full)
        scale = max(mpf(1), max_abs(b), max_abs(c_full), max_abs(A) * max_abs(a))
        if max(res1, res2) > tolerance * scale * 16:
            raise InconsistentSystemError(
                "saddle-point solve residual too large "
                f"({mpmath.nstr(max(res1, res2), 6)}); raise the working precision",
                residual=max(res1, res2),
            )
        return a, mu

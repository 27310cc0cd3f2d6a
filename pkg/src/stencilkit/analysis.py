"""Dual-norm evaluation and h-scaling studies.

Dual norms of error functionals are kernel quadratic forms; their loglog
slopes against h estimate convergence rates.  The Fourier-side quadrature
oracle provides an independent check of the kernel route in the
double-precision regime.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from mpmath import mp, mpf

from . import kernels, linalg, polyspace, stencils
from .errors import (
    ClampedFormWarning,
    NegativeFormError,
    NonUniqueStencilError,
    QuadratureToleranceError,
)
from .functionals import ErrorFunctional, Functional, dual_pairing_with_diagnostics, scale
from .kernels import Kernel
from .polyspace import MonomialBasis, NodeSet, value_matrix
from .scalar import DEFAULT_PREC, GUARD_BITS, STUDY_PREC, Number, as_fraction, real
from .stencils import Stencil

#: minimum trusted significant bits for a norm value inside a study
TRUST_BITS = 34


def dual_norm_squared(
    e: ErrorFunctional, space: Kernel, prec: int = DEFAULT_PREC
) -> mpf:
    """Squared dual norm of the error functional in the kernel's space.

    Slightly negative values within tolerance are clamped to zero (with a
    warning); negative beyond tolerance signals exhausted precision.
    """
    value, max_term = dual_pairing_with_diagnostics(e, e, space, prec)
    if value < 0:
        tol = max_term * mpf(2) ** (-(prec // 2))
        if -value <= tol:
            warnings.warn(
                "quadratic form clamped to zero from "
                f"{mpmath.nstr(value, 4)}", ClampedFormWarning
            )
            return mpf(0)
        raise NegativeFormError(
            f"quadratic form {mpmath.nstr(value, 6)} negative beyond tolerance: "
            "working precision exhausted"
        )
    return value


def dual_norm_squared_trusted(
    e: ErrorFunctional, space: Kernel, prec: int = DEFAULT_PREC
) -> tuple[mpf, int]:
    """(norm^2, trusted significant bits after cancellation)."""
    value, max_term = dual_pairing_with_diagnostics(e, e, space, prec)
    if value <= 0 or max_term == 0:
        return (dual_norm_squared(e, space, prec), 0)
    lost = int(mpmath.mag(max_term) - mpmath.mag(value))
    return value, prec - max(lost, 0)


def dual_norm(e: ErrorFunctional, space: Kernel, prec: int = DEFAULT_PREC) -> mpf:
    with mp.workprec(prec + GUARD_BITS):
        return mpmath.sqrt(dual_norm_squared(e, space, prec))


def sobolev_bl_alignment(m: Number, d: int, prec: int = DEFAULT_PREC):
    """Positive constant A with A * H_{m,d} equal to the leading non-even
    series term of the aligned Sobolev kernel of the same smoothness.

    Dividing a raw polyharmonic dual norm by sqrt(A) puts it on the Sobolev
    scale; the constant is exact (a Fraction) for integer and half-integer
    m - d/2.
    """
    K = kernels.matern(m, d)
    g = int(2 * K.nu) + 2
    lead = kernels.near_zero_series(K, g, prec).leading_noneven
    if lead is None:  # pragma: no cover - order guard above
        raise ValueError("series truncated before its leading non-even term")
    if lead.exact is not None:
        return abs(lead.exact)
    with mp.workprec(prec):
        return abs(lead.coeff)


def sobolev_bl_quotient(
    st: Stencil, m: Number, h: Number, prec: int = DEFAULT_PREC
) -> mpf:
    """Ratio of the stencil error's Sobolev norm to its alignment-scaled
    polyharmonic norm at scale h; approaches 1 as h shrinks when the stencil
    is exact of the polyharmonic kernel's order."""
    W = kernels.matern(m, st.nodes.dim)
    B = kernels.polyharmonic(m, st.nodes.dim)
    e = scale(st.error_functional(prec=prec), h, prec)
    nW = dual_norm_squared(e, W, prec)
    nB = dual_norm_squared(e, B, prec)
    A = sobolev_bl_alignment(m, st.nodes.dim, prec)
    with mp.workprec(prec + GUARD_BITS):
        return mpmath.sqrt(nW / (real(A, prec + GUARD_BITS) * nB))


def bl_scaling_check(
    st: Stencil, m: Number, h: Number, prec: int = DEFAULT_PREC
) -> mpf:
    """Ratio ||eps_h|| / (h^{m-s-d/2} ||eps_1||) in the polyharmonic-kernel
    space of smoothness m.  Equal to 1 up to roundoff: the scaling law is
    exact, not asymptotic."""
    K = kernels.polyharmonic(m, st.nodes.dim)
    if st.exactness_order < K.cpd_order:
        raise ValueError(
            f"stencil exactness {st.exactness_order} below the kernel's "
            f"required order {K.cpd_order}"
        )
    s = st.lam.scaling_order
    e1 = st.error_functional(prec=prec)
    eh = scale(e1, h, prec)
    with mp.workprec(prec + GUARD_BITS):
        n1 = mpmath.sqrt(dual_norm_squared(e1, K, prec))
        nh = mpmath.sqrt(dual_norm_squared(eh, K, prec))
        expo = real(as_fraction(m) - s - Fraction(st.nodes.dim, 2), prec + GUARD_BITS)
        return nh / (real(h, prec + GUARD_BITS) ** expo * n1)


# ---------------------------------------------------------------------------
# rate studies


def slopes_from_norms(h_values, norms) -> list[mpf]:
    """Consecutive loglog slopes of norms against h."""
    out = []
    with mp.workprec(300):
        for i in range(len(norms) - 1):
            num = mpmath.log(norms[i + 1]) - mpmath.log(norms[i])
            den = mpmath.log(h_values[i + 1]) - mpmath.log(h_values[i])
            out.append(num / den)
    return out


def terminal_slope(slopes) -> mpf:
    """Median of the last three slopes; robust to terminal noise."""
    tail = sorted(slopes[-3:]) if len(slopes) >= 3 else sorted(slopes)
    if not tail:
        raise ValueError("no slopes available")
    return tail[len(tail) // 2]


def fit_log_factor(h_values, norms, tail: int = 8):
    """Least-squares fit of log n = log C + k log h + p log|log h| over the
    terminal segment.  Returns (k, p, residual_rms)."""
    hs = [float(mpmath.log(h)) for h in h_values][-tail:]
    ns = [float(mpmath.log(n)) for n in norms][-tail:]
    A = np.column_stack([
        np.ones(len(hs)),
        np.array(hs),
        np.log(np.abs(np.array(hs))),
    ])
    coef, *_ = np.linalg.lstsq(A, np.array(ns), rcond=None)
    resid = A @ coef - np.array(ns)
    rms = float(np.sqrt(np.mean(resid**2)))
    return float(coef[1]), float(coef[2]), rms


@dataclass
class RateReport:
    """Dual norms of an error functional over a geometric h-grid."""

    h_values: list[mpf]
    norms: list[mpf]
    slopes: list[mpf]
    predicted_rate: float
    space: Kernel
    lam: Functional
    method: dict
    qmax_order: int
    precision_bits: int
    log_fit: tuple[float, float, float] | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def terminal_slope(self) -> mpf:
        return terminal_slope(self.slopes)

    @property
    def verdict(self) -> str:
        t = float(self.terminal_slope)
        return "matches" if abs(t - self.predicted_rate) <= 0.05 else "differs"

    def to_json(self, dps: int = 30) -> str:
        doc = {
            "h": [mpmath.nstr(h, dps) for h in self.h_values],
            "norm": [mpmath.nstr(n, dps) for n in self.norms],
            "slope": [mpmath.nstr(s, 12) for s in self.slopes],
            "predicted_rate": self.predicted_rate,
            "terminal_slope": mpmath.nstr(self.terminal_slope, 12),
            "verdict": self.verdict,
            "qmax": self.qmax_order,
            "space": self.space.describe(),
            "functional": self.lam.describe(),
            "method": self.method,
            "precision_bits": self.precision_bits,
            "log_fit": (
                {"rate": self.log_fit[0], "log_power": self.log_fit[1], "rms": self.log_fit[2]}
                if self.log_fit
                else None
            ),
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self, dps: int = 30) -> str:
        lines = ["h,norm,slope"]
        for i, (h, n) in enumerate(zip(self.h_values, self.norms)):
            s = mpmath.nstr(self.slopes[i - 1], 12) if i >= 1 else ""
            lines.append(f"{mpmath.nstr(h, dps)},{mpmath.nstr(n, dps)},{s}")
        return "\n".join(lines) + "\n"


def _build_method_stencil(
    lam: Functional, X: NodeSet, method: dict, space: Kernel, prec: int
) -> Stencil:
    name = method["name"]
    if name == "min_norm":
        return stencils.build_exact(lam, X, int(method["q"]), prec)
    if name == "lagrange":
        return stencils.build_lagrange(lam, X, int(method["q"]), prec)
    if name == "polyharmonic":
        m = method.get("m")
        if m is None:
            m = space.m
        return stencils.build_polyharmonic(lam, X, as_fraction(str(m)), prec)
    raise ValueError(f"unknown scalable stencil method {name!r}")


def _predicted_rate(lam: Functional, X: NodeSet, space: Kernel, qmax_order: int) -> float:
    s = lam.scaling_order
    if space.family == "gaussian":
        return float(qmax_order - s)
    smooth = float(space.m - Fraction(space.d, 2) - s)
    if space.family == "polyharmonic":
        return smooth
    return min(smooth, float(qmax_order - s))


def estimate_rates(
    lam: Functional,
    X: NodeSet,
    method: dict,
    space: Kernel,
    h0: Number = Fraction(1, 8),
    ratio: Number = Fraction(1, 2),
    count: int = 20,
    prec: int = STUDY_PREC,
    qmax_prec: int = DEFAULT_PREC,
    qmax_cap: int = 10,
) -> RateReport:
    """Dual norms and loglog slopes of the requested approximation over the
    geometric grid h_i = h0 * ratio^i.

    Scalable stencils are built once and rescaled; Gram-optimal weights are
    rebuilt at every h.  A norm whose cancellation leaves fewer than ten
    trustworthy digits is recomputed at doubled precision.
    """
    if count < 3:
        raise ValueError("need at least 3 grid points")
    fr = as_fraction(ratio)
    if not 0 < fr < 1:
        raise ValueError("ratio must lie in (0, 1)")
    qres = polyspace.qmax(lam, X, qmax_prec, cap=qmax_cap)
    predicted = _predicted_rate(lam, X, space, qres.order)

    rebuild = method["name"] == "sobolev_optimal"
    st = None
    if not rebuild:
        st = _build_method_stencil(lam, X, method, space, prec)

    h_values = []
    norms = []
    h = as_fraction(h0)
    for _ in range(count):
        h_values.append(real(h, prec + GUARD_BITS))
        h *= fr

    out_norms = []
    for hv in h_values:
        p = prec
        for _ in range(3):
            if rebuild:
                if "m" in method:
                    gram_kernel = kernels.matern(as_fraction(str(method["m"])), X.dim)
                elif space.cpd_order == 0:
                    gram_kernel = space
                else:
                    raise ValueError(
                        "optimal weights need a positive definite kernel; "
                        "pass method['m'] or a matern/gaussian space"
                    )
                sth = stencils.build_kernel_optimal(lam, X, gram_kernel, hv, p)
                e = sth.error_functional(prec=p)
            else:
                e = scale(st.error_functional(prec=p), hv, p)
            n2, trusted = dual_norm_squared_trusted(e, space, p)
            if trusted >= TRUST_BITS and n2 > 0:
                break
            p *= 2
        with mp.workprec(p):
            out_norms.append(mpmath.sqrt(n2))
    norms = out_norms
    slopes = slopes_from_norms(h_values, norms)
    fit = fit_log_factor(h_values, norms) if count >= 6 else None
    return RateReport(
        h_values,
        norms,
        slopes,
        predicted,
        space,
        lam,
        method,
        qres.order,
        prec,
        log_fit=fit,
        metadata={"node_label": X.label, "count": count},
    )


def quotient_study(
    lam: Functional,
    X: NodeSet,
    m: Number,
    h_values,
    prec: int = STUDY_PREC,
) -> list[mpf]:
    """Per h: dual-norm ratio of the scalable polyharmonic-optimal stencil
    against the Gram-optimal weights, both measured in the Sobolev space of
    smoothness m.  Minimality makes every ratio >= 1."""
    mfrac = as_fraction(m)
    space = kernels.matern(mfrac, X.dim)
    st = stencils.build_polyharmonic(lam, X, mfrac, prec)
    out = []
    for hv in h_values:
        hh = real(hv, prec + GUARD_BITS)
        e_st = scale(st.error_functional(prec=prec), hh, prec)
        n_st = dual_norm_squared(e_st, space, prec)
        opt = stencils.build_sobolev_optimal(lam, X, mfrac, hh, prec)
        n_opt = dual_norm_squared(opt.error_functional(prec=prec), space, prec)
        with mp.workprec(prec):
            out.append(mpmath.sqrt(n_st / n_opt))
    return out


@dataclass
class StencilConvergenceReport:
    """Convergence of rescaled Gram-optimal weights to the scalable stencil."""

    h_values: list[mpf]
    deviations: list[mpf]
    observed_rate: float
    proven_rate: float
    superconvergence_rate: float
    superconvergence_flag: bool
    m: Fraction
    q: int
    precision_bits: int

    def to_json(self, dps: int = 30) -> str:
        doc = {
            "h": [mpmath.nstr(h, dps) for h in self.h_values],
            "deviation": [mpmath.nstr(x, dps) for x in self.deviations],
            "observed_rate": self.observed_rate,
            "proven_rate": self.proven_rate,
            "superconvergence_rate": self.superconvergence_rate,
            "superconvergence_flag": self.superconvergence_flag,
            "m": str(self.m),
            "q": self.q,
            "precision_bits": self.precision_bits,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def stencil_convergence_study(
    lam: Functional,
    X: NodeSet,
    m: Number,
    q: int,
    h_values,
    prec: int = STUDY_PREC,
) -> StencilConvergenceReport:
    """Measure ||a*(h) h^s - a_hat||_inf against h, where a_hat is the unique
    scalable stencil of exactness order q and a*(h) the Gram-optimal weights.
    """
    basis = MonomialBasis(X.dim, q)
    Vm = value_matrix(basis, X, prec)
    dec = linalg.rank_decision(Vm, prec)
    if dec.numerical_rank < len(X):
        raise NonUniqueStencilError(
            f"exactness system of order {q} has a null space on these nodes "
            f"(rank {dec.numerical_rank} < {len(X)}): stencil not unique"
        )
    st = stencils.build_exact(lam, X, q, prec)
    mfrac = as_fraction(m)
    s = lam.scaling_order
    devs = []
    for hv in h_values:
        hh = real(hv, prec + GUARD_BITS)
        opt = stencils.build_sobolev_optimal(lam, X, mfrac, hh, prec)
        with mp.workprec(prec + GUARD_BITS):
            dev = max(
                abs(ws * hh**s - wh) for ws, wh in zip(opt.weights, st.weights)
            )
        devs.append(dev)
    rates = slopes_from_norms(h_values, devs)
    observed = float(terminal_slope(rates))
    nu = mfrac - Fraction(X.dim, 2)
    if nu < q:
        proven = float(mfrac - q + 1 - Fraction(X.dim, 2))
        superc = min(2.0, 2 * proven)
    else:
        proven = 1.0
        superc = 2.0
    return StencilConvergenceReport(
        [real(h, prec) for h in h_values],
        devs,
        observed,
        proven,
        superc,
        abs(observed - superc) <= 0.15,
        mfrac,
        q,
        prec,
    )


# ---------------------------------------------------------------------------
# Fourier-side oracle (double precision)


def fourier_oracle_norm_squared(
    e: ErrorFunctional, m: float, d: int, rel_tol: float = 1e-9
) -> float:
    """Independent dual-norm evaluation through the spectral side.

    Numerically integrates |ehat(w)|^2 (1 + |w|^2)^{-m} over R^d and applies
    the constant aligning the Whittle-Matern kernel with that spectrum.
    Intended for double-precision-representable inputs with d <= 3.
    """
    from scipy import integrate

    if d not in (1, 2, 3):
        raise ValueError("oracle supports d in {1, 2, 3}")
    if e.nodes.dim != d:
        raise ValueError("dimension mismatch")
    nu = Fraction(str(m)) - Fraction(d, 2)
    if nu <= e.lam.scaling_order:
        raise ValueError("functional not continuous on this space")
    pts = np.array(
        [[float(x) for x in p] for p in e.induced_nodes(113)], dtype=float
    )
    wts = np.array([float(w) for w in e.induced_weights(113)], dtype=float)

    lam = e.lam
    if lam.kind == "point_value":
        def symbol(om):  # om shape (..., d)
            return np.ones(om.shape[:-1], dtype=complex)
    elif lam.kind == "laplacian":
        def symbol(om):
            return -np.sum(om**2, axis=-1).astype(complex)
    else:
        alpha = np.array(lam.alpha)

        def symbol(om):
            acc = np.ones(om.shape[:-1], dtype=complex)
            for i, a in enumerate(alpha):
                if a:
                    acc = acc * (1j * om[..., i]) ** a
            return acc

    def density(om):
        phases = np.exp(1j * (om @ pts.T))
        ehat = symbol(om) - phases @ wts
        return np.abs(ehat) ** 2

    diam = float(np.max(np.abs(pts))) if len(pts) else 1.0

    if d == 1:
        def f(r):
            om = np.array([[r]])
            return (1 + r * r) ** (-m) * density(om)[0]

        val, err = integrate.quad(f, -np.inf, np.inf, limit=800,
                                  epsabs=0.0, epsrel=rel_tol / 10)
    elif d == 2:
        def f(r):
            n = int(max(64, 8 * r * diam + 64))
            th = np.linspace(0, 2 * np.pi, n, endpoint=False)
            om = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
            return 2 * np.pi * r * (1 + r * r) ** (-m) * np.mean(density(om))

        val, err = integrate.quad(f, 0, np.inf, limit=800,
                                  epsabs=0.0, epsrel=rel_tol / 10)
    else:
        def f(r):
            n = int(max(32, 4 * r * diam + 32))
            th = np.linspace(0, 2 * np.pi, n, endpoint=False)
            zs, wz = np.polynomial.legendre.leggauss(n // 2)
            TH, Z = np.meshgrid(th, zs)
            sin = np.sqrt(1 - Z**2)
            om = np.stack(
                [r * sin * np.cos(TH), r * sin * np.sin(TH), r * Z], axis=-1
            )
            dens = density(om)
            avg = np.sum(dens.mean(axis=1) * wz) / 2
            return 4 * np.pi * r * r * (1 + r * r) ** (-m) * avg

        val, err = integrate.quad(f, 0, np.inf, limit=800,
                                  epsabs=0.0, epsrel=rel_tol / 10)
    if val > 0 and err / val > rel_tol * 100:
        raise QuadratureToleranceError(
            f"spectral quadrature uncertainty {err / val} exceeds budget"
        )
    cnu = float(kernels.matern(Fraction(str(m)), d).normalization(113))
    factor = cnu * float(mpmath.gamma(m)) * 2 ** (m - 1) / (2 * math.pi) ** (d / 2)
    return factor * val

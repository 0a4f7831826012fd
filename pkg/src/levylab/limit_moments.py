"""Closed-form limiting moments.

The p-th moment of Im R at E + i0 is

    2^-p (X_p + conj(X_p) + sum_{a=1}^{p-1} binom(p, a) Y_p(a)),

with X_p = E[(-iR)^p] and Y_p(a) = E[(-iR)^a (i conj R)^(p-a)], both
written as integrals against the order parameter gamma.  The median
eigenvector moments at E = 0 follow from the explicit law of U(0).
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cubature, quad
from scipy.special import gamma as Gamma
from scipy.special import gammaln

from .spectral import double_factorial_odd

LOG_TOL = math.log(1e12)


def _cutoff(k: float, rate: float) -> float:
    """V with V^k exp(-rate V) below 1e-12 of the integrand's peak."""
    peak = k / rate if k > 0 else 0.0
    ref = (k * math.log(peak) if peak > 0 else 0.0) - rate * peak
    V = max(2.0 * peak, 1.0 / rate)
    while (k * math.log(V) if k > 0 else 0.0) - rate * V > ref - LOG_TOL:
        V *= 1.5
    return V


def _gamma_value(gamma_star, u: complex) -> complex:
    return complex(gamma_star(u)) if callable(gamma_star) else complex(gamma_star)


def frak_X(alpha: float, E, gamma_star_1: complex, p: int) -> complex:
    """(1/Gamma(p)) int_0^inf t^(p-1) exp(i E t - t^(alpha/2) gamma) dt.

    ``E`` may carry a positive imaginary part (finite eta).
    """
    g = complex(gamma_star_1)
    if not g.real > 0:
        raise ValueError("need Re gamma > 0")
    if p < 1:
        raise ValueError("p must be >= 1")
    E = complex(E)
    # v = t^(alpha/2) turns the stretched exponential into a plain one.
    q = 2.0 / alpha
    k = q * p - 1.0
    V = _cutoff(k, g.real)

    def f(v):
        return q * v**k * np.exp(1j * E * v**q - g * v)

    val, _ = quad(f, 0.0, V, complex_func=True, limit=500, epsabs=1e-13, epsrel=1e-11)
    return complex(val / Gamma(p))


@dataclass(frozen=True)
class YResult:
    value: complex
    error: float
    interpolation_error: float
    flagged: bool


def frak_Y_full(alpha: float, E, gamma_star, p: int, a: int, rtol: float = 1e-9, atol: float = 1e-10) -> YResult:
    """Cartesian cubature of the two-dimensional Y integral over [0, T]^2."""
    if not 1 <= a <= p - 1:
        raise ValueError("need 1 <= a <= p - 1")
    E = complex(E)
    if hasattr(gamma_star, "values"):
        min_re = float(np.min(gamma_star.values.real))
        interp_err = gamma_star.interpolation_error()
    elif callable(gamma_star):
        th = np.linspace(0.0, math.pi / 2.0, 65)
        min_re = float(np.min(np.real(gamma_star(np.exp(1j * th)))))
        interp_err = 0.0
    else:
        min_re = complex(gamma_star).real
        interp_err = 0.0
    if not min_re > 0:
        raise ValueError("need Re gamma > 0 on the quarter circle")
    if callable(gamma_star):
        gfun = gamma_star
    else:
        gc = complex(gamma_star)

        def gfun(u):
            return np.full(np.shape(u), gc) * np.abs(u) ** (alpha / 2.0)

    # radial cutoff with the polynomial weight r^(p-2) r dr
    q = 2.0 / alpha
    V = _cutoff(q * p - 1.0, min_re)
    T = V**q

    def f(x):
        t, s = x[:, 0], x[:, 1]
        r = np.hypot(t, s)
        safe = np.where(r > 0, r, 1.0)
        u = (t + 1j * s) / safe
        u = np.where(r > 0, u, 1.0)
        # gamma is (alpha/2)-homogeneous, so gamma(t + i s) = r^(alpha/2) gamma(u)
        gval = np.asarray(gfun(u), dtype=complex) * (r ** (alpha / 2.0))
        # exp(i z t - i conj(z) s); equals exp(i E (t - s)) on the real axis
        val = t ** (a - 1) * s ** (p - a - 1) * np.exp(1j * (E * t - E.conjugate() * s) - gval)
        return np.stack([val.real, val.imag], axis=-1)

    res = cubature(f, [0.0, 0.0], [T, T], rtol=rtol, atol=atol, max_subdivisions=20000)
    norm = Gamma(a) * Gamma(p - a)
    val = complex(res.estimate[0], res.estimate[1]) / norm
    err = float(np.hypot(*res.error)) / norm
    return YResult(val, err, interp_err, interp_err > 1e-3 or res.status != "converged")


def frak_Y(alpha: float, E, gamma_star, p: int, a: int) -> complex:
    return frak_Y_full(alpha, E, gamma_star, p, a).value


def frak_Y_polar(alpha: float, E, gamma_star, p: int, a: int) -> complex:
    """Same integral in polar coordinates (iterated 1-D quadrature)."""
    E = complex(E)
    if callable(gamma_star):
        gfun = lambda u: complex(gamma_star(u))
    else:
        gfun = lambda u: complex(gamma_star)

    def angular(phi):
        c, s = math.cos(phi), math.sin(phi)
        g = gfun(complex(c, s))
        q = 2.0 / alpha
        k = q * p - 1.0
        V = _cutoff(k, g.real)

        def radial(v):
            r = v**q
            return q * v**k * np.exp(1j * r * (E * c - E.conjugate() * s) - g * v)

        rad = quad(radial, 0.0, V, complex_func=True, limit=400, epsabs=1e-14, epsrel=1e-11)[0]
        return c ** (a - 1) * s ** (p - a - 1) * rad

    val = quad(angular, 0.0, math.pi / 2.0, complex_func=True, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
    return complex(val / (Gamma(a) * Gamma(p - a)))


def imR_moment(alpha: float, E, p: int, gamma_star, tol: float = 1e-6) -> float:
    """Limit of E[(Im R)^p] from X and Y."""
    g1 = _gamma_value(gamma_star, 1.0 + 0.0j)
    X = frak_X(alpha, E, g1, p)
    total = X + X.conjugate()
    for a in range(1, p):
        total += math.comb(p, a) * frak_Y(alpha, E, gamma_star, p, a)
    total /= 2.0**p
    if abs(total.imag) > tol * max(1.0, abs(total.real)):
        raise ArithmeticError(f"imaginary residue {total.imag:g} in moment p={p}")
    return float(total.real)


def inverse_stable_moment(alpha: float, p: int) -> float:
    """E[S^-p] = (2/alpha) Gamma(2p/alpha) / Gamma(p) for S one-sided
    (alpha/2)-stable with Laplace transform exp(-t^(alpha/2))."""
    return math.exp(math.log(2.0 / alpha) + gammaln(2.0 * p / alpha) - gammaln(p))


def median_moment(alpha: float, p: int) -> float:
    """Limit of E[(N u_k(i)^2)^p] at E = 0."""
    if int(p) != p or p < 1:
        raise ValueError("p must be a positive integer")
    p = int(p)
    logv = (
        math.log(double_factorial_odd(p))
        + math.log(2.0 / alpha)
        + gammaln(2.0 * p / alpha)
        - gammaln(p)
        - p * gammaln(1.0 + 2.0 / alpha)
    )
    if logv > 700:
        raise OverflowError(f"median_moment overflows at alpha={alpha}, p={p}")
    return math.exp(logv)


def ustar0_second_moment(alpha: float) -> float:
    """E[U(0)^2] = Gamma(1 + 4/alpha) / (2 Gamma(1 + 2/alpha)^2)."""
    return Gamma(1.0 + 4.0 / alpha) / (2.0 * Gamma(1.0 + 2.0 / alpha) ** 2)


def joint_predictions(alpha: float, E: float = 0.0, gamma_star=None) -> tuple[float, float]:
    """(covariance across entries of one eigenvector,
    covariance of one entry across neighbouring eigenvectors)."""
    if E == 0.0 and gamma_star is None:
        return 0.0, ustar0_second_moment(alpha) - 1.0
    if gamma_star is None:
        raise ValueError("gamma_star required away from E = 0")
    m1 = imR_moment(alpha, E, 1, gamma_star)
    m2 = imR_moment(alpha, E, 2, gamma_star)
    return 0.0, m2 / m1**2 - 1.0


# ---------------------------------------------------------------- reports


@dataclass
class MomentRow:
    label: str
    p: int | None
    theory: float
    provenance: str
    method: str
    a: int | None = None
    empirical: float | None = None
    se: float | None = None
    allowance: float = 0.0
    checked: bool = True

    @property
    def passed(self) -> bool | None:
        if self.empirical is None or not self.checked:
            return None
        return bool(abs(self.empirical - self.theory) <= 3.0 * (self.se or 0.0) + self.allowance)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if self.passed is not None:
            d["pass"] = self.passed
        return d


@dataclass
class MomentReport:
    context: dict
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, row: MomentRow) -> MomentRow:
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)

    def row(self, label: str) -> MomentRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"schema": 1, "context": self.context, "rows": [r.to_dict() for r in self.rows], **self.extra}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def limit_table(alpha: float, E: float, p_max: int, gamma_star: Callable | None = None) -> MomentReport:
    """Theory-only rows: Im R moments (if gamma is supplied) and median moments."""
    rep = MomentReport({"alpha": alpha, "E": E, "p_max": p_max})
    if gamma_star is not None:
        for p in range(1, p_max + 1):
            rep.add(
                MomentRow(
                    f"imR_p{p}", p, imR_moment(alpha, E, p, gamma_star), "quadrature",
                    "X/Y integrals against the population order parameter",
                )
            )
    if E == 0:
        for p in range(1, p_max + 1):
            rep.add(
                MomentRow(
                    f"median_p{p}", p, median_moment(alpha, p), "closed_form",
                    "(2p-1)!! E[S^-p] / Gamma(1+2/alpha)^p",
                )
            )
        rep.add(
            MomentRow(
                "neighbour_cov", 2, joint_predictions(alpha, 0.0)[1], "closed_form",
                "Gamma(1+4/alpha) / (2 Gamma(1+2/alpha)^2) - 1",
            )
        )
    return rep

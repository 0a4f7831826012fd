"""Limiting self-consistent equations.

* ``solve_rde``: population dynamics for the law of R(z) solving
  R = -(z + sum_k xi_k R_k)^-1 in distribution, with {xi_k} the Poisson
  process of intensity (alpha/2) x^(-alpha/2-1) dx.
* ``solve_m_alpha``: the scalar fixed point for the limiting Stieltjes
  transform.
* order parameter gamma(u) = Gamma(1 - alpha/2) E[(-i R . u)^(alpha/2)],
  where h.u = Re(u) h + Im(u) conj(h).
* the density, its closed form at 0 and exact draws of U(0).
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma as Gamma

from .rng import as_generator, substream
from .stable_rand import StableLaw, ppp_largest, ppp_tail_mean, sample_stable

log = logging.getLogger(__name__)

DEFAULT_ETAS = (4e-3, 2e-3, 1e-3)
N_GRID = 65


# ---------------------------------------------------------------- population


@dataclass
class Population:
    pool: np.ndarray
    z: complex
    alpha: float
    generation: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    def __post_init__(self):
        im = self.pool.imag
        if np.any(im <= 0):
            raise ValueError("pool elements must have positive imaginary part")

    @property
    def size(self) -> int:
        return len(self.pool)

    def im_moment(self, p: int = 1) -> tuple[float, float]:
        """Pool mean of (Im R)^p and its standard error."""
        v = self.pool.imag**p
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))

    def frac_moment(self) -> complex:
        """E[(-iR)^(alpha/2)]."""
        return complex(np.mean((-1j * self.pool) ** (self.alpha / 2.0)))


def rde_generation(
    pool: np.ndarray,
    alpha: float,
    z: complex,
    rng: np.random.Generator,
    ppp_points: int = 100,
    damping: float = 0.5,
    chunk: int = 20_000,
) -> np.ndarray:
    """One synchronous sweep of the distributional map.

    Each slot draws the ``ppp_points`` largest Poisson points and as many
    uniform pool members; the discarded points below the K-th are replaced
    by their conditional mean times the pool mean.  A slot takes its new
    value with probability ``damping``, which removes the period-2 scale
    mode of the undamped map at E = 0 without moving the fixed point.
    """
    P = len(pool)
    mean_r = pool.mean()
    new = np.empty_like(pool)
    for lo in range(0, P, chunk):
        n = min(chunk, P - lo)
        xi = ppp_largest(alpha, ppp_points, n, rng)
        idx = rng.integers(0, P, size=(n, ppp_points))
        S = np.einsum("ij,ij->i", xi, pool[idx])
        S += ppp_tail_mean(alpha, xi[:, -1]) * mean_r
        new[lo : lo + n] = -1.0 / (z + S)
    keep = rng.random(P) >= damping
    new[keep] = pool[keep]
    return new


def solve_rde(
    alpha: float,
    z: complex,
    pool_size: int = 100_000,
    generations: int = 200,
    ppp_points: int = 100,
    seed=0,
    damping: float = 0.5,
    min_generations: int = 30,
    window: int = 5,
) -> Population:
    """Population dynamics for R(z).

    Stops early once the window-averaged first and second moments of Im R
    move by less than half a standard error; otherwise returns after
    ``generations`` with ``converged=False``.
    """
    z = complex(z)
    if not z.imag > 0:
        raise ValueError("need Im z > 0")
    if pool_size < 10_000:
        raise ValueError("pool_size must be >= 1e4")
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    pool = np.full(pool_size, 1j * min(1.0, 1.0 / z.imag))
    hist = []
    converged = False
    g = 0
    for g in range(1, generations + 1):
        rng = substream(int(seed), "rde", g)
        pool = rde_generation(pool, alpha, z, rng, ppp_points, damping)
        im = pool.imag
        hist.append((im.mean(), (im**2).mean(), im.std() / math.sqrt(pool_size), (im**2).std() / math.sqrt(pool_size)))
        if g >= max(min_generations, 2 * window):
            h = np.asarray(hist)
            cur = h[-window:].mean(axis=0)
            prev = h[-2 * window : -window].mean(axis=0)
            if abs(cur[0] - prev[0]) < 0.5 * cur[2] and abs(cur[1] - prev[1]) < 0.5 * cur[3]:
                converged = True
                break
    if not converged:
        log.warning("population dynamics did not settle after %d generations (z=%s)", g, z)
    return Population(pool, z, alpha, g, converged, hist)


# ---------------------------------------------------------------- m_alpha


def _phi_psi(alpha: float, z: complex, x: complex, theta: float) -> tuple[complex, complex]:
    c = Gamma(1.0 - alpha / 2.0)
    rot = np.exp(1j * theta)
    rot_a = np.exp(1j * alpha * theta / 2.0)
    lin = c * rot_a * x
    quad_ = 1j * z * rot
    p = 2.0 / alpha

    def f(v):
        return np.exp(quad_ * v**p - lin * v)

    def g(v):
        return v ** (p - 1.0) * np.exp(quad_ * v**p - lin * v)

    opts = {"complex_func": True, "limit": 400, "epsabs": 1e-13, "epsrel": 1e-11}
    I_phi = quad(f, 0.0, np.inf, **opts)[0]
    I_psi = quad(g, 0.0, np.inf, **opts)[0]
    return rot_a * I_phi / Gamma(1.0 + alpha / 2.0), rot * p * I_psi


def _rotation(alpha: float, z: complex, x: complex) -> float:
    # Turn the ray toward the decaying side of exp(i z t) while keeping
    # the fractional-power term in the right half-plane.
    if z.real == 0.0:
        return 0.0
    margin = 0.1
    if z.real > 0:
        safe = (math.pi / 2.0 - margin - np.angle(x)) * 2.0 / alpha
    else:
        safe = (math.pi / 2.0 - margin + np.angle(x)) * 2.0 / alpha
    th = max(0.0, min(math.pi / 4.0, safe))
    return math.copysign(th, z.real)


@dataclass(frozen=True)
class MAlpha:
    m: complex
    y: complex
    iterations: int


def solve_m_alpha_full(alpha: float, z: complex, tol: float = 1e-10, max_iter: int = 500) -> MAlpha:
    z = complex(z)
    if not z.imag > 0:
        raise ValueError("need Im z > 0")
    y = 1.0 + 0.0j
    for it in range(1, max_iter + 1):
        th = _rotation(alpha, z, y)
        phi, _ = _phi_psi(alpha, z, y, th)
        y_new = 0.5 * y + 0.5 * phi
        if abs(y_new - y) < tol * max(1.0, abs(y_new)):
            y = y_new
            _, psi = _phi_psi(alpha, z, y, _rotation(alpha, z, y))
            return MAlpha(complex(1j * psi), complex(y), it)
        y = y_new
    raise ArithmeticError(f"m_alpha fixed point did not converge at z={z}")


@functools.lru_cache(maxsize=4096)
def solve_m_alpha(alpha: float, z: complex) -> complex:
    """Limiting Stieltjes transform m_alpha(z), Im z > 0."""
    return solve_m_alpha_full(alpha, z).m


def y_fixed_point(alpha: float, z: complex) -> complex:
    """The fixed point y(z) = E[(-i R(z))^(alpha/2)]."""
    return solve_m_alpha_full(alpha, z).y


# ---------------------------------------------------------------- order parameter


def _dot(h: np.ndarray, u: complex) -> np.ndarray:
    return u.real * h + u.imag * np.conj(h)


@dataclass(frozen=True)
class OrderParameter:
    """gamma(u) on the quarter circle, extended by (alpha/2)-homogeneity."""

    angles: np.ndarray
    values: np.ndarray
    z: complex
    alpha: float
    se: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.values.real < 0):
            raise ValueError("order parameter must have non-negative real part")

    @functools.cached_property
    def _interp(self):
        return (
            PchipInterpolator(self.angles, self.values.real),
            PchipInterpolator(self.angles, self.values.imag),
        )

    def __call__(self, u):
        u = np.asarray(u, dtype=complex)
        r = np.abs(u)
        th = np.angle(u)
        if np.any(th < -1e-12) or np.any(th > math.pi / 2 + 1e-12):
            raise ValueError("u must lie in the closed first quadrant")
        th = np.clip(th, 0.0, math.pi / 2)
        fr, fi = self._interp
        return r ** (self.alpha / 2.0) * (fr(th) + 1j * fi(th))

    @property
    def min_real(self) -> float:
        return float(self.values.real.min())

    def interpolation_error(self) -> float:
        """Max deviation at odd nodes of the interpolant built from even nodes."""
        a, v = self.angles, self.values
        fr = PchipInterpolator(a[::2], v.real[::2])
        fi = PchipInterpolator(a[::2], v.imag[::2])
        odd = a[1::2]
        return float(np.max(np.abs(fr(odd) + 1j * fi(odd) - v[1::2])))


def quarter_circle(n: int = N_GRID) -> np.ndarray:
    return np.linspace(0.0, math.pi / 2.0, n)


def order_parameter(pop: Population, u_grid=None) -> OrderParameter:
    """Population estimate of gamma(u) on ``u_grid`` (angles, default 65 nodes)."""
    angles = quarter_circle() if u_grid is None else np.asarray(u_grid, dtype=float)
    if pop.size == 0:
        raise ValueError("empty population")
    if np.any(pop.pool.imag <= 0):
        raise ValueError("pool element with non-positive imaginary part")
    a2 = pop.alpha / 2.0
    c = Gamma(1.0 - a2)
    h = -1j * pop.pool
    vals, ses = [], []
    for th in angles:
        w = _dot(h, complex(math.cos(th), math.sin(th))) ** a2
        vals.append(c * w.mean())
        ses.append(c * math.sqrt(w.real.var() + w.imag.var()) / math.sqrt(len(w)))
    return OrderParameter(angles, np.array(vals), pop.z, pop.alpha, np.array(ses))


def order_parameter_from_y(alpha: float, y: complex, z: complex = 0j) -> complex:
    """gamma(1) from the scalar fixed point: Gamma(1 - alpha/2) y."""
    return Gamma(1.0 - alpha / 2.0) * y


# ---------------------------------------------------------------- real energy


def _intercept_weights(etas) -> np.ndarray:
    x = np.asarray(etas, dtype=float)
    if len(x) == 1:
        return np.ones(1)
    xb = x.mean()
    return 1.0 / len(x) - xb * (x - xb) / np.sum((x - xb) ** 2)


@dataclass
class EtaScan:
    """Populations at z = E + i eta for a decreasing eta sequence."""

    alpha: float
    E: float
    etas: tuple
    populations: list

    @property
    def weights(self) -> np.ndarray:
        k = min(3, len(self.etas))
        w = np.zeros(len(self.etas))
        w[-k:] = _intercept_weights(self.etas[-k:])
        return w

    def extrapolate(self, stat) -> tuple[complex, float]:
        """Linear-in-eta extrapolation to eta = 0 of ``stat(pop) -> (value, se)``."""
        vals, ses = zip(*(stat(p) for p in self.populations))
        w = self.weights
        val = np.dot(w, np.asarray(vals))
        se = math.sqrt(float(np.dot(w**2, np.asarray(ses) ** 2)))
        return val, se

    def im_moment(self, p: int) -> tuple[float, float]:
        v, s = self.extrapolate(lambda pop: pop.im_moment(p))
        return float(np.real(v)), s

    def per_eta(self, stat) -> list:
        return [stat(p) for p in self.populations]

    @property
    def converged(self) -> bool:
        return all(p.converged for p in self.populations)


def eta_scan(
    alpha: float,
    E: float,
    eta_sequence=DEFAULT_ETAS,
    pool_size: int = 100_000,
    generations: int = 200,
    ppp_points: int = 100,
    seed=0,
) -> EtaScan:
    etas = tuple(float(e) for e in eta_sequence)
    if any(b >= a for a, b in itertools.pairwise(etas)):
        raise ValueError("eta_sequence must be strictly decreasing")
    pops = [
        solve_rde(alpha, complex(E, eta), pool_size, generations, ppp_points, seed=(int(seed) + 7919 * j))
        for j, eta in enumerate(etas)
    ]
    return EtaScan(alpha, float(E), etas, pops)


@dataclass(frozen=True)
class RealEnergyOrderParameter:
    gamma: OrderParameter
    per_eta: list
    lipschitz: list
    monotone: bool


def gamma_star_at_real_E(
    alpha: float,
    E: float,
    eta_sequence=DEFAULT_ETAS,
    pool_size: int = 100_000,
    generations: int = 200,
    ppp_points: int = 100,
    seed=0,
    scan: EtaScan | None = None,
) -> RealEnergyOrderParameter:
    """gamma at E + i0 by linear extrapolation in eta over the last three points."""
    scan = scan or eta_scan(alpha, E, eta_sequence, pool_size, generations, ppp_points, seed)
    ops = [order_parameter(p) for p in scan.populations]
    w = scan.weights
    vals = sum(wi * op.values for wi, op in zip(w, ops))
    se = np.sqrt(sum(wi**2 * op.se**2 for wi, op in zip(w, ops)))
    # Linear extrapolation can push Re slightly negative only through noise.
    vals = np.where(vals.real < 0, 1j * vals.imag, vals)
    gamma = OrderParameter(ops[0].angles, vals, complex(E, 0.0), alpha, se)
    lips = [
        float(np.max(np.abs(a.values - b.values)) / abs(ea - eb))
        for (a, ea), (b, eb) in zip(zip(ops, scan.etas), zip(ops[1:], scan.etas[1:]))
    ]
    g1 = np.array([op.values[0].real for op in ops])
    d = np.diff(g1)
    tol = 3.0 * max(op.se[0] for op in ops)
    monotone = bool(np.all(d >= -tol) or np.all(d <= tol))
    if not monotone:
        log.warning("gamma(1) is not monotone along the eta sequence at E=%g", E)
    return RealEnergyOrderParameter(gamma, ops, lips, monotone)


# ---------------------------------------------------------------- density


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    se: float
    population_value: float | None
    quadrature_value: float | None
    disagreement: float | None
    flagged: bool


def density_quadrature(alpha: float, E: float, eta: float = 1e-9) -> float:
    """Im m_alpha(E + i eta) / pi with eta effectively zero."""
    return solve_m_alpha(float(alpha), complex(E, eta)).imag / math.pi


def density(
    alpha: float,
    E: float,
    eta_sequence=DEFAULT_ETAS,
    pool_size: int = 100_000,
    generations: int = 200,
    ppp_points: int = 100,
    seed=0,
    backend: str = "both",
    scan: EtaScan | None = None,
) -> DensityEstimate:
    """varrho_alpha(E) from the population and/or the scalar fixed point.

    With ``backend="both"`` a relative disagreement above 5% is flagged.
    """
    if backend not in ("both", "population", "quadrature"):
        raise ValueError(f"unknown backend {backend!r}")
    qv = density_quadrature(alpha, E) if backend != "population" else None
    pv = se = None
    if backend != "quadrature":
        scan = scan or eta_scan(alpha, E, eta_sequence, pool_size, generations, ppp_points, seed)
        m, s = scan.im_moment(1)
        pv, se = m / math.pi, s / math.pi
    if pv is None:
        return DensityEstimate(qv, 0.0, None, qv, None, False)
    if qv is None:
        return DensityEstimate(pv, se, pv, None, None, False)
    dis = abs(pv - qv) / qv
    flagged = dis > 0.05
    if flagged:
        warnings.warn(f"density backends disagree by {dis:.1%} at E={E}", RuntimeWarning)
    return DensityEstimate(qv, se, pv, qv, dis, flagged)


def closed_form_rho0(alpha: float) -> dict:
    """varrho_alpha(0) in both orientations of the inner Gamma ratio.

    ``"inverted"`` is (1/pi) Gamma(1+2/alpha) (Gamma(1+alpha/2)/Gamma(1-alpha/2))^(1/alpha),
    the value the fixed-point equations produce; ``"printed"`` uses the
    reciprocal ratio.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    base = Gamma(1.0 + 2.0 / alpha) / math.pi
    ratio = Gamma(1.0 - alpha / 2.0) / Gamma(1.0 + alpha / 2.0)
    return {"printed": base * ratio ** (1.0 / alpha), "inverted": base * ratio ** (-1.0 / alpha)}


def select_rho0_orientation(alpha: float, rho_numeric: float) -> tuple[str, float]:
    """The closed-form orientation closest (relatively) to a numerical density."""
    forms = closed_form_rho0(alpha)
    name = min(forms, key=lambda k: abs(forms[k] - rho_numeric) / forms[k])
    return name, forms[name]


def rho0(alpha: float) -> float:
    return closed_form_rho0(alpha)["inverted"]


class DensityCdf:
    """CDF of varrho_alpha from a tabulated density on [0, x_max] plus the
    power-law tail alpha/(2 x^(alpha+1)) beyond; symmetric about 0."""

    def __init__(self, alpha: float, x_max: float = 200.0, n_linear: int = 41, n_log: int = 40):
        self.alpha = alpha
        x = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_linear), np.geomspace(1.0, x_max, n_log)]))
        rho = np.array([density_quadrature(alpha, float(v)) for v in x])
        self.x, self.rho = x, rho
        self._pchip = PchipInterpolator(x, rho)
        self._anti = self._pchip.antiderivative()
        self.x_max = x_max
        tail = 0.5 * x_max ** (-alpha)
        self.total_half = float(self._anti(x_max)) + tail
        self.normalization_error = abs(2.0 * self.total_half - 1.0)

    def __call__(self, y: float) -> float:
        s = abs(y)
        if s <= self.x_max:
            half = float(self._anti(s))
        else:
            half = float(self._anti(self.x_max)) + 0.5 * (self.x_max ** (-self.alpha) - s ** (-self.alpha))
        half /= 2.0 * self.total_half
        return 0.5 + math.copysign(half, y) if y != 0 else 0.5


@functools.lru_cache(maxsize=8)
def density_cdf(alpha: float) -> DensityCdf:
    return DensityCdf(float(alpha))


# ---------------------------------------------------------------- U(0)


def sample_ustar0(alpha: float, n: int, seed=0) -> np.ndarray:
    """Exact draws of U(0) = theta / Gamma(1 + 2/alpha), theta = 1/S with S
    one-sided (alpha/2)-stable of Laplace transform exp(-t^(alpha/2))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(seed, "ustar0")
    S = sample_stable(StableLaw.one_sided(alpha / 2.0), n, rng)
    return 1.0 / (S * Gamma(1.0 + 2.0 / alpha))

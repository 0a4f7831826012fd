"""Dyson Brownian motion and the eigenvector moment flow.

The matrix flow X_s = X_0 + W_s is simulated exactly in law by adding
independent GOE increments.  The moment flow acts on functions of particle
configurations xi through

    (B f)(xi) = sum_{i != j} c_ij r xi_i (1 + 2 xi_j) (f(xi^{ij}) - f(xi)),
    c_ij = 1 / (N (lambda_i - lambda_j)^2),

where xi^{ij} moves one particle from site i to site j.  The customary
rate factor is r = 2.  For the additive flow X_s = X + W_s with
off-diagonal variance s/N, conditional overlap moments actually move at
r = 1 (``MATRIX_FLOW_RATE``), as the antithetic small-step test confirms.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ensemble import EnsembleSpec, build_levy, decompose, goe, perturb
from .rng import as_generator, substream
from .spectral import ParticleConfig, double_factorial_odd, eigh_full, quadratic_form_im

MAX_STATES = 1_000_000
MIN_GAP = 1e-12
DEFAULT_RATE = 2.0
MATRIX_FLOW_RATE = 1.0


# ---------------------------------------------------------------- DBM


@dataclass(frozen=True)
class DbmTrajectory:
    times: np.ndarray
    matrices: list
    seed: int

    def eigenvalues(self) -> np.ndarray:
        """Spectra along the path, shape (len(times), N)."""
        return np.array([np.linalg.eigvalsh(M) for M in self.matrices])


def evolve_dbm(X0: np.ndarray, t_end: float, steps: int, seed=0) -> DbmTrajectory:
    """X_{s + ds} = X_s + sqrt(ds) G on a uniform grid of ``steps`` steps."""
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X0 = np.asarray(X0, dtype=float)
    if t_end == 0:
        return DbmTrajectory(np.zeros(1), [X0.copy()], _seed_label(seed))
    rng = as_generator(seed, "dbm")
    times = np.linspace(0.0, t_end, steps + 1)
    mats = [X0.copy()]
    N = X0.shape[0]
    for ds in np.diff(times):
        mats.append(mats[-1] + math.sqrt(ds) * goe(N, rng))
    return DbmTrajectory(times, mats, _seed_label(seed))


def _seed_label(seed) -> int:
    return int(seed) if isinstance(seed, (int, np.integer)) else -1


def dbm_eigenvalue_step(lam: np.ndarray, ds: float, rng) -> np.ndarray:
    """Euler step of d lambda_k = dW_kk + (1/N) sum_{l != k} ds / (lambda_k - lambda_l).

    Only meant for tiny steps at small N, as a cross-check of ``evolve_dbm``.
    """
    N = len(lam)
    diff = lam[:, None] - lam[None, :]
    np.fill_diagonal(diff, np.inf)
    drift = np.sum(1.0 / diff, axis=1) / N
    return lam + math.sqrt(2.0 * ds / N) * rng.standard_normal(N) + drift * ds


# ---------------------------------------------------------------- generator


def enumerate_configs(N: int, n: int) -> list[ParticleConfig]:
    """All configurations of ``n`` particles on sites 1..N."""
    count = math.comb(N + n - 1, n)
    if count > MAX_STATES:
        raise ValueError(f"{count} configurations exceed the cap of {MAX_STATES}")
    out = []
    for combo in itertools.combinations_with_replacement(range(1, N + 1), n):
        d: dict[int, int] = {}
        for k in combo:
            d[k] = d.get(k, 0) + 1
        out.append(ParticleConfig.from_mapping(d, N))
    return out


def rate_coefficients(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    N = len(lam)
    diff = lam[:, None] - lam[None, :]
    off = ~np.eye(N, dtype=bool)
    if np.min(np.abs(diff[off])) < MIN_GAP:
        raise ValueError("degenerate spectrum: eigenvalue gap below 1e-12")
    c = np.zeros((N, N))
    c[off] = 1.0 / (N * diff[off] ** 2)
    return c


@dataclass
class GeneratorMatrix:
    configs: list
    rates: sp.csr_matrix
    lam: np.ndarray
    range_ell: int | None = None
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {c: i for i, c in enumerate(self.configs)}

    @property
    def Q(self) -> sp.csr_matrix:
        """Rates with the diagonal set to minus the row sums."""
        out = sp.lil_matrix(self.rates)
        out.setdiag(-np.asarray(self.rates.sum(axis=1)).ravel())
        return out.tocsr()

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.rates @ f - np.asarray(self.rates.sum(axis=1)).ravel() * f

    @property
    def max_exit_rate(self) -> float:
        return float(np.max(self.rates.sum(axis=1)))


def build_generator(lam, xi0: ParticleConfig, range_ell: int | None = None, long_range: bool = False,
                    configs=None, rate_factor: float = DEFAULT_RATE) -> GeneratorMatrix:
    """Rate table of the moment flow on the configurations with
    ``xi0.n_particles`` particles.

    With ``range_ell`` only moves with 0 < |i - j| <= ell are kept (the
    short-range part); ``long_range=True`` keeps the complement instead.
    """
    lam = np.asarray(lam, dtype=float)
    N = len(lam)
    if xi0.N != N:
        raise ValueError("configuration and spectrum dimensions differ")
    c = rate_coefficients(lam)
    if range_ell is not None:
        dist = np.abs(np.arange(N)[:, None] - np.arange(N)[None, :])
        mask = dist <= range_ell
        c = np.where(~mask, c, 0.0) if long_range else np.where(mask, c, 0.0)
    configs = configs if configs is not None else enumerate_configs(N, xi0.n_particles)
    index = {cfg: i for i, cfg in enumerate(configs)}
    rows, cols, vals = [], [], []
    for a, cfg in enumerate(configs):
        occ = dict(cfg.sites)
        for i, ni in occ.items():
            for j in range(1, N + 1):
                if j == i:
                    continue
                rate = c[i - 1, j - 1] * rate_factor * ni * (1.0 + 2.0 * occ.get(j, 0))
                if rate == 0.0:
                    continue
                rows.append(a)
                cols.append(index[cfg.moved(i, j)])
                vals.append(rate)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(len(configs), len(configs)))
    return GeneratorMatrix(configs, R, lam, range_ell, index)


def split_generator(lam, xi0: ParticleConfig, ell: int,
                    rate_factor: float = DEFAULT_RATE) -> tuple[GeneratorMatrix, GeneratorMatrix]:
    """(short-range, long-range) parts; their rates sum to the full generator."""
    configs = enumerate_configs(len(lam), xi0.n_particles)
    return (
        build_generator(lam, xi0, ell, configs=configs, rate_factor=rate_factor),
        build_generator(lam, xi0, ell, long_range=True, configs=configs, rate_factor=rate_factor),
    )


def integrate_emf(
    lam_path,
    f0,
    s0: float,
    s1: float,
    ode_steps: int,
    xi0: ParticleConfig,
    range_ell: int | None = None,
    rate_factor: float = DEFAULT_RATE,
) -> tuple[np.ndarray, list]:
    """RK4 for d/ds f = B(s) f with rates rebuilt from lambda(s).

    ``lam_path`` is a callable s -> spectrum, or a fixed spectrum.  ``f0`` is
    a callable on configurations or an array over ``enumerate_configs``.
    Returns (f at s1, configurations).
    """
    if ode_steps < 1:
        raise ValueError("ode_steps must be >= 1")
    if callable(lam_path):
        lam_of = lam_path
    else:
        fixed = np.asarray(lam_path, float)

        def lam_of(s):
            return fixed

    N = len(lam_of(s0))
    configs = enumerate_configs(N, xi0.n_particles)
    f = np.array([f0(c) for c in configs], dtype=float) if callable(f0) else np.asarray(f0, dtype=float).copy()
    frozen = not callable(lam_path)
    cache: dict[float, GeneratorMatrix] = {}

    def B(s):
        key = 0.0 if frozen else s
        if key not in cache:
            if len(cache) >= 3:
                cache.pop(next(iter(cache)))
            cache[key] = build_generator(lam_of(s), xi0, range_ell, configs=configs, rate_factor=rate_factor)
        return cache[key]

    h = (s1 - s0) / ode_steps
    warned = False
    s = s0
    for _ in range(ode_steps):
        g1 = B(s)
        if not warned and g1.max_exit_rate * abs(h) > 0.1:
            warnings.warn("EMF step is stiff: max rate * ds > 0.1", RuntimeWarning)
            warned = True
        k1 = g1.apply(f)
        g2 = B(s + h / 2)
        k2 = g2.apply(f + h / 2 * k1)
        k3 = g2.apply(f + h / 2 * k2)
        k4 = B(s + h).apply(f + h * k3)
        f = f + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return f, configs


# ---------------------------------------------------------------- F and its prediction


def replica_matrix(
    spec: EnsembleSpec, t: float, replica: int, X0: np.ndarray | None = None, tag: str = "perturb"
) -> np.ndarray:
    """X_t for one replica: removed Levy matrix (or ``X0``) plus sqrt(t) GOE."""
    X = decompose(build_levy(spec, replica), spec).X if X0 is None else X0
    return perturb(X, t, substream(spec.seed, tag, replica))


@dataclass(frozen=True)
class ReplicaProjections:
    """Spectrum and squared projections <q, u_k>^2 of one replica."""

    eigenvalues: np.ndarray
    proj2: np.ndarray


def replica_projections(
    spec: EnsembleSpec, t: float, q: dict, replica: int, X0=None, tag: str = "perturb"
) -> ReplicaProjections:
    M = replica_matrix(spec, t, replica, X0, tag)
    lam, U = eigh_full(M)
    proj = sum(v * U[i - 1] for i, v in q.items())
    return ReplicaProjections(lam, proj**2)


def observable_from_projections(rp: ReplicaProjections, xi: ParticleConfig) -> float:
    N = len(rp.eigenvalues)
    out = 1.0
    for k, j in xi.sites:
        out *= (N * rp.proj2[k - 1]) ** j / double_factorial_odd(j)
    return out


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def estimate_F(
    spec: EnsembleSpec,
    t: float,
    q: dict,
    xi: ParticleConfig,
    replicas: int,
    X0: np.ndarray | None = None,
    projections: Sequence[ReplicaProjections] | None = None,
) -> tuple[float, float]:
    """Replica mean and SE of the normalized overlap moment at time t."""
    if replicas < 100:
        raise ValueError("estimate_F needs at least 100 replicas")
    if xi.n_particles == 0:
        return 1.0, 0.0
    if projections is None:
        projections = [replica_projections(spec, t, q, r, X0) for r in range(replicas)]
    return mean_se([observable_from_projections(rp, xi) for rp in projections[:replicas]])


def theory_rhs_values(
    projections: Sequence[ReplicaProjections],
    xi: ParticleConfig,
    eta: float,
    gamma_hat: np.ndarray,
    m_im: dict,
) -> np.ndarray:
    """Per-replica prod_k (Im <q, R(gamma-hat_k + i eta) q> / Im m(gamma_k + i eta))^xi_k.

    ``m_im`` maps site k to Im m_alpha(gamma_k + i eta).
    """
    out = np.ones(len(projections))
    for k, j in xi.sites:
        z = complex(gamma_hat[k - 1], eta)
        vals = np.array([quadratic_form_im(rp.eigenvalues, np.sqrt(rp.proj2), z) for rp in projections])
        out *= (vals / m_im[k]) ** j
    return out


def theory_rhs(
    spec: EnsembleSpec,
    t: float,
    q: dict,
    xi: ParticleConfig,
    eta: float,
    replicas: int,
    projections: Sequence[ReplicaProjections] | None = None,
    window: float = 0.05,
) -> tuple[float, float]:
    """Replica mean and SE of the resolvent prediction for F_t(xi)."""
    from .rde import density_cdf, solve_m_alpha
    from .spectral import classical_locations, empirical_quantiles

    if xi.n_particles == 0:
        return 1.0, 0.0
    if projections is None:
        projections = [replica_projections(spec, t, q, r) for r in range(replicas)]
    gamma_hat = empirical_quantiles([rp.eigenvalues for rp in projections])
    sites = [k for k, _ in xi.sites]
    gamma_cl = dict(zip(sites, classical_locations(density_cdf(spec.alpha), spec.N, sites)))
    for k, g in gamma_cl.items():
        if abs(g) > window:
            warnings.warn(f"site {k} lies outside the small-energy window (gamma={g:.3g})", RuntimeWarning)
    m_im = {k: solve_m_alpha(spec.alpha, complex(g, eta)).imag for k, g in gamma_cl.items()}
    return mean_se(theory_rhs_values(projections, xi, eta, gamma_hat, m_im))


def spectral_scale(spec: EnsembleSpec, c_exp: float = 0.02) -> float:
    """eta = N^(c - frak_a)."""
    return spec.N ** (c_exp - spec.frak_a)


def scale_ratios(spec: EnsembleSpec, t: float, c_exp: float = 0.02) -> tuple[float, float]:
    """(eta sqrt(N), t / eta); both should be large."""
    eta = spectral_scale(spec, c_exp)
    return eta * math.sqrt(spec.N), t / eta

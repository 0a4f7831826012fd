"""Samplers for alpha-stable laws, Levy-matrix entries and the Poisson
point process with intensity (alpha/2) x^(-alpha/2-1) dx.

Stable draws use the Chambers-Mallows-Stuck transform in the
parametrization

    E[exp(itZ)] = exp(-sigma^a |t|^a (1 - i beta sgn(t) u)),
    u = tan(pi a / 2)  (a != 1),   u = -(2/pi) log|t|  (a = 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .rng import as_generator


@dataclass(frozen=True)
class StableLaw:
    alpha: float
    beta: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if abs(self.beta) > 1.0:
            raise ValueError(f"|beta| must be <= 1, got {self.beta}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def cf(self, t):
        """Characteristic function at real ``t``."""
        t = np.asarray(t, dtype=float)
        a, b, s = self.alpha, self.beta, self.sigma
        at = np.abs(t)
        if a == 1.0:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.where(at > 0, -(2.0 / np.pi) * np.log(np.where(at > 0, at, 1.0)), 0.0)
        else:
            u = np.tan(np.pi * a / 2.0)
        return np.exp(-(s**a) * at**a * (1.0 - 1j * b * np.sign(t) * u))

    @classmethod
    def one_sided(cls, alpha: float) -> StableLaw:
        """Positive (beta = 1) law with Laplace transform exp(-t^alpha).

        Requires alpha < 1.
        """
        if not 0.0 < alpha < 1.0:
            raise ValueError("one-sided laws with unit Laplace scale need alpha in (0, 1)")
        return cls(alpha, 1.0, np.cos(np.pi * alpha / 2.0) ** (1.0 / alpha))


@dataclass(frozen=True)
class PppPoints:
    """Points of the PPP above ``cutoff``, in decreasing order."""

    points: np.ndarray
    cutoff: float
    alpha: float

    def __len__(self):
        return len(self.points)


def cms_standard(alpha: float, beta: float, size, rng: np.random.Generator) -> np.ndarray:
    """Unit-scale stable draws via Chambers-Mallows-Stuck."""
    V = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size)
    W = rng.exponential(1.0, size)
    if alpha == 1.0:
        half = np.pi / 2.0 + beta * V
        return (2.0 / np.pi) * (half * np.tan(V) - beta * np.log((np.pi / 2.0) * W * np.cos(V) / half))
    if beta == 0.0:
        return (
            np.sin(alpha * V)
            / np.cos(V) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * V) / W) ** ((1.0 - alpha) / alpha)
        )
    zeta = beta * np.tan(np.pi * alpha / 2.0)
    B = np.arctan(zeta) / alpha
    S = (1.0 + zeta**2) ** (1.0 / (2.0 * alpha))
    return (
        S
        * np.sin(alpha * (V + B))
        / np.cos(V) ** (1.0 / alpha)
        * (np.cos(V - alpha * (V + B)) / W) ** ((1.0 - alpha) / alpha)
    )


def sample_stable(law: StableLaw, n: int, seed=0) -> np.ndarray:
    """Draw ``n`` i.i.d. samples of ``law``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(seed, "stable")
    x = cms_standard(law.alpha, law.beta, n, rng)
    out = law.sigma * x
    if law.alpha == 1.0 and law.beta != 0.0:
        out += (2.0 / np.pi) * law.beta * law.sigma * np.log(law.sigma)
    return out


def entry_sigma(alpha: float) -> float:
    """Scale making P[|Z| > t] ~ t^-alpha for the symmetric entry law."""
    return (np.pi / (2.0 * np.sin(np.pi * alpha / 2.0) * gamma(alpha))) ** (1.0 / alpha)


def entry_law(alpha: float) -> StableLaw:
    return StableLaw(alpha, 0.0, entry_sigma(alpha))


def sample_entry(alpha: float, N: int, n, seed=0) -> np.ndarray:
    """Draws of N^(-1/alpha) Z with Z the symmetric entry law.

    ``n`` may be an int or a shape tuple.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = as_generator(seed, "entry")
    return (entry_sigma(alpha) * N ** (-1.0 / alpha)) * cms_standard(alpha, 0.0, n, rng)


def sample_ppp(alpha: float, cutoff: float, seed=0) -> PppPoints:
    """All PPP points above ``cutoff``.

    Points are Gamma_k^(-2/alpha) for unit-rate arrival times Gamma_k, so the
    expected count above u is u^(-alpha/2).
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    rng = as_generator(seed, "ppp")
    horizon = cutoff ** (-alpha / 2.0)
    arrivals = []
    last = 0.0
    chunk = max(16, int(1.5 * horizon) + 16)
    while last <= horizon:
        g = last + np.cumsum(rng.exponential(1.0, chunk))
        arrivals.append(g)
        last = g[-1]
    g = np.concatenate(arrivals)
    g = g[g <= horizon]
    return PppPoints(points=g ** (-2.0 / alpha), cutoff=float(cutoff), alpha=float(alpha))


def ppp_largest(alpha: float, k: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """The ``k`` largest PPP points for ``size`` independent copies.

    Returns an array of shape (size, k), each row decreasing.
    """
    g = np.cumsum(rng.exponential(1.0, (size, k)), axis=1)
    return g ** (-2.0 / alpha)


def ppp_tail_mean(alpha: float, eps) -> np.ndarray:
    """E[sum of PPP points below eps] = alpha/(2-alpha) eps^(1-alpha/2)."""
    return (alpha / (2.0 - alpha)) * np.asarray(eps) ** (1.0 - alpha / 2.0)

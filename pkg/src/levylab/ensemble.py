"""Matrix models: the Levy matrix H, its three-tier split H = A + B + C,
the removed matrix X = B + C, Gaussian perturbations X_s = X + sqrt(s) W
and the interpolation gamma A + X + sqrt(1 - gamma^2) sqrt(t) W.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rng import as_generator, substream
from .stable_rand import cms_standard, entry_sigma

MAGIC = b"LEVM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnsembleSpec:
    """Model parameters.  ``frak_a`` sets the spectral scale eta = N^(c - frak_a)."""

    alpha: float
    N: int
    b: float
    nu: float
    frak_a: float
    rho: float
    seed: int = 0

    def __post_init__(self):
        problems = parameter_violations(self.alpha, self.b, self.nu, self.frak_a, self.rho)
        if problems:
            raise ValueError("invalid ensemble parameters: " + "; ".join(problems))
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @classmethod
    def for_alpha(cls, alpha: float, N: int, seed: int = 0) -> EnsembleSpec:
        return cls(alpha=alpha, N=N, seed=seed, **select_parameters(alpha))

    def with_seed(self, seed: int) -> EnsembleSpec:
        return replace(self, seed=seed)

    @property
    def nu_threshold(self) -> float:
        return self.N ** (-self.nu)

    @property
    def rho_threshold(self) -> float:
        return self.N ** (-self.rho)


def parameter_violations(alpha, b, nu, frak_a, rho) -> list[str]:
    out = []
    if not 0.0 < alpha < 2.0:
        out.append("alpha must lie in (0, 2)")
        return out
    if not (nu > 0 and abs(nu - (1.0 / alpha - b)) < 1e-12):
        out.append("need nu = 1/alpha - b > 0")
    if not 1.0 / (4.0 - alpha) < nu < 1.0 / (4.0 - 2.0 * alpha):
        out.append("need 1/(4-alpha) < nu < 1/(4-2 alpha)")
    if not (2.0 - alpha) * nu < frak_a < 0.5:
        out.append("need (2-alpha) nu < a < 1/2")
    if not 0.0 < rho < nu < 0.5:
        out.append("need 0 < rho < nu < 1/2")
    if not alpha * rho < (2.0 - alpha) * nu:
        out.append("need alpha rho < (2-alpha) nu")
    if not b > 0:
        out.append("need b > 0")
    return out


def select_parameters(alpha: float) -> dict:
    """Midpoints of the feasible exponent intervals, chosen in the order
    nu, b, frak_a, rho."""
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    lo = 1.0 / (4.0 - alpha)
    hi = min(1.0 / (4.0 - 2.0 * alpha), 1.0 / alpha, 0.5)
    if not lo < hi:
        raise ValueError(f"no admissible nu for alpha={alpha}")
    nu = 0.5 * (lo + hi)
    b = 1.0 / alpha - nu
    frak_a = 0.5 * ((2.0 - alpha) * nu + 0.5)
    rho = 0.5 * min(nu, (2.0 - alpha) * nu / alpha)
    params = {"b": b, "nu": nu, "frak_a": frak_a, "rho": rho}
    problems = parameter_violations(alpha, **params)
    if problems:
        raise ValueError(f"parameter selection failed for alpha={alpha}: {problems}")
    return params


# ---------------------------------------------------------------- matrices


def symmetrize_upper(vals: np.ndarray, N: int) -> np.ndarray:
    """Fill an N x N symmetric matrix from upper-triangle values (row-major)."""
    M = np.zeros((N, N))
    iu = np.triu_indices(N)
    M[iu] = vals
    M.T[iu] = vals
    return M


def build_levy(spec: EnsembleSpec, replica: int = 0, rng=None) -> np.ndarray:
    """Symmetric N x N matrix with i.i.d. upper entries N^(-1/alpha) Z."""
    N = spec.N
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = rng if rng is not None else substream(spec.seed, "levy", replica)
    scale = entry_sigma(spec.alpha) * N ** (-1.0 / spec.alpha)
    vals = scale * cms_standard(spec.alpha, 0.0, N * (N + 1) // 2, rng)
    return symmetrize_upper(vals, N)


def goe(N: int, rng: np.random.Generator) -> np.ndarray:
    """GOE with entry variance (1 + [i == j]) / N."""
    G = rng.standard_normal((N, N))
    return (G + G.T) / np.sqrt(2.0 * N)


@dataclass(frozen=True)
class DecomposedMatrix:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Psi: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.B + self.C

    @property
    def H(self) -> np.ndarray:
        return self.A + self.B + self.C


def decompose(H: np.ndarray, spec: EnsembleSpec) -> DecomposedMatrix:
    """Threshold H at N^-nu and N^-rho into small, mid and large entries."""
    if H.shape != (spec.N, spec.N):
        raise ValueError(f"matrix shape {H.shape} does not match N={spec.N}")
    lo, hi = spec.nu_threshold, spec.rho_threshold
    if not lo < hi:
        raise ValueError("thresholds out of order: need N^-nu < N^-rho")
    absH = np.abs(H)
    big = absH >= hi
    small = absH < lo
    mid = ~big & ~small
    zero = np.zeros_like(H)
    return DecomposedMatrix(
        A=np.where(small, H, zero),
        B=np.where(mid, H, zero),
        C=np.where(big, H, zero),
        Psi=big.astype(np.int8),
    )


def removed_matrix(spec: EnsembleSpec, replica: int = 0) -> np.ndarray:
    return decompose(build_levy(spec, replica), spec).X


def perturb(X: np.ndarray, s: float, seed=0) -> np.ndarray:
    """X + sqrt(s) W with W an independent GOE draw."""
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0:
        return X.copy()
    rng = as_generator(seed, "perturb")
    return X + np.sqrt(s) * goe(X.shape[0], rng)


def interpolate(gamma: float, parts: DecomposedMatrix, t: PerturbTime | float, seed=0) -> np.ndarray:
    """gamma A + (B + C) + sqrt(1 - gamma^2) sqrt(t) W."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    tval = t.t if isinstance(t, PerturbTime) else float(t)
    out = gamma * parts.A + (parts.B + parts.C)
    coef = np.sqrt(1.0 - gamma**2) * np.sqrt(tval)
    if coef > 0:
        rng = as_generator(seed, "interpolate")
        out = out + coef * goe(parts.A.shape[0], rng)
    return out


# ---------------------------------------------------------------- time t


@dataclass(frozen=True)
class PerturbTime:
    t: float
    estimator_se: float
    lower: float
    upper: float
    bracket_constants: tuple = (1e-3, 1e3)


def compute_t(spec: EnsembleSpec, mc_samples: int = 2_000_000, seed=None) -> PerturbTime:
    """Monte Carlo estimate of N E[H^2 1(|H| < N^-nu)] / P[|H| < N^-rho].

    Raises if the relative standard error exceeds 1%.
    """
    if mc_samples < 100_000:
        raise ValueError("mc_samples must be >= 1e5")
    rng = as_generator(spec.seed if seed is None else seed, "perturb-time")
    a, N = spec.alpha, spec.N
    z = entry_sigma(a) * cms_standard(a, 0.0, mc_samples, rng)
    # |H| < N^-nu  <=>  |Z| < N^b
    small = np.abs(z) < N**spec.b
    num = np.where(small, z * z, 0.0)
    den = (np.abs(z) < N ** (1.0 / a - spec.rho)).astype(float)
    mn, md = num.mean(), den.mean()
    scale = N ** (1.0 - 2.0 / a)
    t = scale * mn / md
    # delta method for a ratio of means
    cov = np.cov(num, den)
    var = (cov[0, 0] / md**2 - 2 * mn * cov[0, 1] / md**3 + mn**2 * cov[1, 1] / md**4) / mc_samples
    se = scale * np.sqrt(max(var, 0.0))
    if se / t > 0.01:
        raise ValueError(f"relative SE {se / t:.3%} exceeds 1%; increase mc_samples")
    c, C = 1e-3, 1e3
    ref = N ** ((a - 2.0) * spec.nu)
    if not c * ref <= t <= C * ref:
        raise ArithmeticError(f"t={t:g} outside [{c * ref:g}, {C * ref:g}]")
    return PerturbTime(t=float(t), estimator_se=float(se), lower=c * ref, upper=C * ref)


# ---------------------------------------------------------------- file I/O


def write_matrix(path, M: np.ndarray) -> None:
    M = np.ascontiguousarray(M, dtype="<f8")
    N = M.shape[0]
    if M.shape != (N, N):
        raise ValueError("matrix must be square")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", FORMAT_VERSION, N))
        fh.write(M.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    version, N = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = data[16:]
    if len(body) != 8 * N * N:
        raise ValueError(f"{path}: expected {8 * N * N} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(N, N).copy()

"""Eigendecomposition, resolvents, quantiles and eigenvector observables.

Indices that name eigenvalues, eigenvectors or coordinates follow the
1-based convention ``lambda_1 <= ... <= lambda_N`` and ``u_k(1..N)``.
Python arrays are 0-based internally.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

SYMMETRY_RTOL = 1e-12


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class SpectralSample:
    eigenvalues: np.ndarray
    eigenvector_rows: Mapping[int, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.eigenvalues)

    def entry(self, k: int, i: int) -> float:
        """u_k(i), both indices 1-based."""
        return float(self.eigenvector_rows[i][k - 1])


@dataclass(frozen=True)
class ParticleConfig:
    """Particle configuration xi: ``sites`` maps site index (1-based) to
    multiplicity.  Stored as a sorted tuple so configs are hashable."""

    sites: tuple
    N: int

    def __post_init__(self):
        items = tuple(sorted((int(k), int(v)) for k, v in dict(self.sites).items()))
        for k, v in items:
            if v < 1:
                raise ValueError(f"multiplicity at site {k} must be >= 1")
            if not 1 <= k <= self.N:
                raise ValueError(f"site {k} outside [1, {self.N}]")
        object.__setattr__(self, "sites", items)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int], N: int) -> ParticleConfig:
        return cls(tuple(mapping.items()), N)

    @classmethod
    def parse(cls, text: str, N: int) -> ParticleConfig:
        """Parse ``"k:2,m:1"``; an empty string is the empty config."""
        mapping: dict[int, int] = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            k, _, v = part.partition(":")
            mapping[int(k)] = mapping.get(int(k), 0) + (int(v) if v else 1)
        return cls.from_mapping(mapping, N)

    @property
    def n_particles(self) -> int:
        return sum(v for _, v in self.sites)

    def count(self, k: int) -> int:
        return dict(self.sites).get(k, 0)

    def moved(self, i: int, j: int) -> ParticleConfig:
        """Move one particle from site i to site j."""
        d = dict(self.sites)
        if d.get(i, 0) < 1:
            raise ValueError(f"no particle at site {i}")
        d[i] -= 1
        if d[i] == 0:
            del d[i]
        d[j] = d.get(j, 0) + 1
        return ParticleConfig.from_mapping(d, self.N)

    def __str__(self):
        return ",".join(f"{k}:{v}" for k, v in self.sites)


# ---------------------------------------------------------------- eigensolver


def check_symmetric(M: np.ndarray) -> None:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    if np.max(np.abs(M - M.T)) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # Largest-magnitude coordinate of each eigenvector made positive.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def eigh_full(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All eigenvalues (ascending) and the sign-fixed eigenvector matrix."""
    check_symmetric(M)
    try:
        lam, U = scipy.linalg.eigh(M, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    return lam, _fix_signs(U)


def eigh(M: np.ndarray, rows: Iterable[int] = (), meta: dict | None = None) -> SpectralSample:
    """Spectrum of ``M`` plus coordinates u_k(i) for each requested row i."""
    lam, U = eigh_full(M)
    N = len(lam)
    stored = {}
    for i in rows:
        if not 1 <= i <= N:
            raise IndexError(f"row {i} outside [1, {N}]")
        stored[int(i)] = U[i - 1].copy()
    return SpectralSample(lam, stored, dict(meta or {}))


def eigenvector_entries(M: np.ndarray, ks: Iterable[int], rows: Iterable[int]) -> np.ndarray:
    """u_k(i) for eigen-indices ``ks`` and coordinates ``rows`` (all 1-based).

    Only the requested eigenpairs are computed.  Returns shape (len(ks), len(rows)).
    """
    ks, rows = list(ks), list(rows)
    check_symmetric(M)
    lo, hi = min(ks) - 1, max(ks) - 1
    _, U = scipy.linalg.eigh(M, subset_by_index=[lo, hi], check_finite=False)
    U = _fix_signs(U)
    return np.array([[U[i - 1, k - 1 - lo] for i in rows] for k in ks])


# ---------------------------------------------------------------- resolvent


def _check_z(z: complex) -> complex:
    z = complex(z)
    if not z.imag > 0:
        raise ValueError(f"need Im z > 0, got {z}")
    return z


def resolvent_from_eig(lam, U, z: complex, pairs) -> np.ndarray:
    z = _check_z(z)
    w = 1.0 / (lam - z)
    return np.array([np.sum(U[i - 1] * U[j - 1] * w) for i, j in pairs])


def resolvent(M: np.ndarray, z: complex, pairs, check: bool = False) -> np.ndarray:
    """Entries R_ij(z) of (M - z)^-1 for 1-based index pairs.

    With ``check=True`` the Ward identity is asserted on each row touched.
    """
    z = _check_z(z)
    lam, U = eigh_full(M)
    pairs = list(pairs)
    out = resolvent_from_eig(lam, U, z, pairs)
    if check:
        for i in sorted({i for i, _ in pairs}):
            row = U[i - 1]
            Rrow = U @ (row / (lam - z))
            lhs = np.sum(np.abs(Rrow) ** 2)
            rhs = Rrow[i - 1].imag / z.imag
            if abs(lhs - rhs) > 1e-9 * max(abs(rhs), 1.0):
                raise ArithmeticError(f"Ward identity violated on row {i}: {lhs} vs {rhs}")
    return out


def resolvent_matrix(M: np.ndarray, z: complex) -> np.ndarray:
    lam, U = eigh_full(M)
    z = _check_z(z)
    return (U / (lam - z)) @ U.T


def stieltjes(M_or_eigs, z: complex) -> complex:
    """N^-1 Tr (M - z)^-1.  A 1-D input is taken to be the spectrum."""
    z = _check_z(z)
    arr = np.asarray(M_or_eigs, dtype=float)
    if arr.ndim == 2:
        check_symmetric(arr)
        arr = scipy.linalg.eigvalsh(arr)
    return complex(np.mean(1.0 / (arr - z)))


def quadratic_form_im(lam, row_coords, z: complex) -> float:
    """Im <e_i, R(z) e_i> from the eigenvalues and the coordinates u_k(i)."""
    z = _check_z(z)
    return float(np.sum(row_coords**2 * z.imag / ((lam - z.real) ** 2 + z.imag**2)))


# ---------------------------------------------------------------- quantiles


def classical_locations(
    cdf: Callable[[float], float],
    N: int,
    indices: Iterable[int] | None = None,
    tol: float = 1e-8,
) -> np.ndarray:
    """gamma_i = min{y : cdf(y) >= i/N} by bisection; inf if never reached."""
    if N < 1:
        raise ValueError("N must be >= 1")
    idx = range(1, N + 1) if indices is None else list(indices)
    seen: list[tuple[float, float]] = []

    def F(y):
        v = float(cdf(y))
        seen.append((y, v))
        return v

    out = []
    for i in idx:
        target = i / N
        lo, hi = -1.0, 1.0
        while F(lo) >= target:
            lo *= 2.0
            if lo < -1e300:
                break
        reached = True
        while F(hi) < target:
            hi *= 2.0
            if hi > 1e300:
                reached = False
                break
        if not reached:
            out.append(math.inf)
            continue
        while hi - lo > tol * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            if F(mid) >= target:
                hi = mid
            else:
                lo = mid
        out.append(hi)
    ys, vs = np.array(seen).T
    order = np.argsort(ys, kind="stable")
    if np.any(np.diff(vs[order]) < -1e-12):
        raise ValueError("cdf is not monotone")
    return np.array(out)


def empirical_quantiles(ensemble) -> np.ndarray:
    """gamma-hat_i = min{y : mean empirical CDF(y) >= i/N}, i = 1..N."""
    spectra = [np.asarray(e, dtype=float) for e in ensemble]
    if not spectra:
        raise ValueError("empty ensemble")
    N = len(spectra[0])
    if any(len(s) != N for s in spectra):
        raise ValueError("all spectra must have the same length")
    R = len(spectra)
    pooled = np.sort(np.concatenate(spectra))
    return pooled[np.arange(1, N + 1) * R - 1]


def quantile_bootstrap_se(ensemble, index: int, n_boot: int = 200, seed=0) -> float:
    """Bootstrap SE of gamma-hat_index over replicas."""
    from .rng import as_generator

    spectra = np.asarray([np.asarray(e, dtype=float) for e in ensemble])
    rng = as_generator(seed, "quantile-bootstrap")
    R = len(spectra)
    vals = [
        empirical_quantiles(spectra[rng.integers(0, R, R)])[index - 1] for _ in range(n_boot)
    ]
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------- observables


def double_factorial_odd(j: int) -> int:
    """(2j - 1)!!, equal to 1 for j = 0."""
    return math.prod(range(1, 2 * j, 2))


def _as_sparse(q, N: int) -> dict[int, float]:
    if isinstance(q, Mapping):
        d = {int(k): float(v) for k, v in q.items() if v != 0}
    else:
        arr = np.asarray(q, dtype=float)
        if arr.shape != (N,):
            raise ValueError(f"q must have length {N}")
        d = {int(k) + 1: float(arr[k]) for k in np.flatnonzero(arr)}
    if abs(math.fsum(v * v for v in d.values()) - 1.0) > 1e-10:
        raise ValueError("q must be a unit vector")
    return d


def overlap_observable(sample: SpectralSample, q, xi: ParticleConfig) -> float:
    """prod_k (sqrt(N) <q, u_k>)^(2 j_k) / (2 j_k - 1)!!.

    ``q`` is a dense length-N vector or a sparse mapping {index: value}.
    """
    N = sample.N
    qd = _as_sparse(q, N)
    missing = [i for i in qd if i not in sample.eigenvector_rows]
    if missing:
        raise KeyError(f"sample lacks eigenvector rows {missing}")
    out = 1.0
    for k, j in xi.sites:
        proj = sum(v * sample.eigenvector_rows[i][k - 1] for i, v in qd.items())
        out *= (N * proj * proj) ** j / double_factorial_odd(j)
    return out


def smooth_cap(x: float, M: float) -> float:
    """C^2 nondecreasing cutoff: x below M - 1, M from M on, quintic blend between."""
    if math.isinf(M):
        return x
    if x <= M - 1.0:
        return x
    if x >= M:
        return M
    s = x - (M - 1.0)
    return (M - 1.0) + s * (1.0 + s * s * (4.0 + s * (-7.0 + 3.0 * s)))


def level_repulsion(eigenvalues, i: int, M: float = math.inf) -> float:
    """f_M(Q_i) with Q_i = N^-2 sum_{j != i} |lambda_j - lambda_i|^-2."""
    lam = np.asarray(eigenvalues, dtype=float)
    N = len(lam)
    if not 1 <= i <= N:
        raise IndexError(f"index {i} outside [1, {N}]")
    d = np.delete(lam, i - 1) - lam[i - 1]
    if np.any(d == 0):
        Q = math.inf
    else:
        Q = float(np.sum(d**-2.0)) / N**2
    if math.isinf(Q) and math.isinf(M):
        return Q
    return smooth_cap(Q, M)


# ---------------------------------------------------------------- CSV


def write_spectrum_csv(path, eigenvalues) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for k, v in enumerate(eigenvalues, start=1):
            w.writerow([k, repr(float(v))])


def write_overlap_csv(path, rows) -> None:
    """``rows`` yields (k, i, N u_k(i)^2)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "i", "N_u2"])
        for k, i, v in rows:
            w.writerow([int(k), int(i), repr(float(v))])

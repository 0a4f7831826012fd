import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from levylab.ensemble import EnsembleSpec, build_levy, goe
from levylab.rng import substream
from levylab.spectral import (
    ParticleConfig,
    SpectralSample,
    classical_locations,
    eigenvector_entries,
    eigh,
    eigh_full,
    empirical_quantiles,
    level_repulsion,
    overlap_observable,
    quantile_bootstrap_se,
    resolvent,
    resolvent_matrix,
    smooth_cap,
    stieltjes,
    write_overlap_csv,
    write_spectrum_csv,
)


def random_symmetric(N, seed=0):
    G = substream(seed, "test-matrix").standard_normal((N, N))
    return G + G.T


def heavy(N, seed=0, alpha=0.8):
    return build_levy(EnsembleSpec.for_alpha(alpha, N, seed=seed))


def test_two_by_two():
    s = eigh(np.array([[0.0, 1.0], [1.0, 0.0]]), rows=(1, 2))
    assert np.allclose(s.eigenvalues, [-1.0, 1.0])
    assert s.entry(1, 1) ** 2 == pytest.approx(0.5)


@pytest.mark.parametrize("M", [random_symmetric(50), heavy(50)])
def test_reconstruction_and_row_norms(M):
    lam, U = eigh_full(M)
    assert np.all(np.diff(lam) >= 0)
    scale = np.abs(M).max()
    assert np.abs(M - (U * lam) @ U.T).max() <= 1e-9 * scale
    resid = np.linalg.norm(M @ U - U * lam, axis=0)
    assert resid.max() <= 1e-9 * 50 * scale
    s = eigh(M, rows=range(1, 51))
    for row in s.eigenvector_rows.values():
        assert np.sum(row**2) == pytest.approx(1.0, abs=1e-10)


def test_sign_convention():
    _, U = eigh_full(heavy(40, seed=2))
    idx = np.argmax(np.abs(U), axis=0)
    assert np.all(U[idx, np.arange(40)] > 0)


def test_subset_entries_match_full():
    M = heavy(60, seed=3, alpha=1.5)
    _, U = eigh_full(M)
    sub = eigenvector_entries(M, [30, 31], [1, 2, 5])
    for a, k in enumerate([30, 31]):
        for b, i in enumerate([1, 2, 5]):
            assert sub[a, b] ** 2 == pytest.approx(U[i - 1, k - 1] ** 2, abs=1e-12)


def test_rejects_non_symmetric():
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        eigh(M)
    with pytest.raises(ValueError):
        resolvent(M, 1j, [(1, 1)])


def test_resolvent_diagonal_matrix():
    a = np.array([-1.0, 0.5, 2.0])
    z = 0.3 + 0.2j
    R = resolvent(np.diag(a), z, [(i, i) for i in (1, 2, 3)])
    assert np.allclose(R, 1 / (a - z), rtol=0, atol=1e-15)


def test_ward_identity_and_bound():
    M = random_symmetric(20, seed=4) / 5
    z = 0.1 + 0.05j
    R = resolvent_matrix(M, z)
    lhs = np.sum(np.abs(R) ** 2, axis=1)
    rhs = R.diagonal().imag / z.imag
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=0)
    assert np.abs(R).max() <= 1 / z.imag
    resolvent(M, z, [(1, 1), (2, 3)], check=True)
    with pytest.raises(ValueError):
        resolvent(M, 0.5, [(1, 1)])


def test_resolvent_identity():
    M = random_symmetric(20, seed=5)
    z1, z2 = 0.3 + 0.7j, -0.2 + 0.4j
    Kinv, Minv = resolvent_matrix(M, z1), resolvent_matrix(M, z2)
    K = M - z1 * np.eye(20)
    Mz = M - z2 * np.eye(20)
    assert np.allclose(Kinv, np.linalg.inv(K), atol=1e-12)
    lhs = Kinv - Minv
    rhs = Kinv @ (Mz - K) @ Minv
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(lhs).max()
    # the variant with a trailing M instead of M^-1 is not an identity
    assert np.abs(lhs - Kinv @ (Mz - K) @ Mz).max() > 1e-3


def test_stieltjes():
    assert stieltjes(np.array([0.0]), 1j) == pytest.approx(1j)
    M = random_symmetric(30, seed=6)
    for z in (0.1 + 0.01j, -2 + 1j, 5 + 0.5j):
        m = stieltjes(M, z)
        assert m.imag > 0
        assert m == pytest.approx(np.mean(resolvent_matrix(M, z).diagonal()), abs=1e-12)


def test_classical_locations_uniform():
    cdf = lambda y: min(max(y, 0.0), 1.0)
    g = classical_locations(cdf, 4)
    assert np.allclose(g, [0.25, 0.5, 0.75, 1.0], atol=1e-8)


def test_classical_locations_symmetric():
    g = classical_locations(stats.cauchy.cdf, 10)
    assert abs(g[4]) < 1e-8
    assert np.all(np.diff(g) >= 0)


def test_classical_locations_rejects_non_monotone():
    with pytest.raises(ValueError):
        classical_locations(lambda y: 0.5 + 0.4 * math.sin(y), 4)


def test_empirical_quantiles():
    x = np.array([3.0, -1.0, 2.0, 0.5])
    assert np.array_equal(empirical_quantiles([x]), np.sort(x))
    with pytest.raises(ValueError):
        empirical_quantiles([])


def test_empirical_quantile_symmetry_and_se():
    N = 40

    def spectra(R, seed):
        return [np.linalg.eigvalsh(goe(N, substream(seed, "q", r))) for r in range(R)]

    ens = spectra(400, 1)
    g = empirical_quantiles(ens)[N // 2 - 1]
    se = quantile_bootstrap_se(ens, N // 2)
    assert abs(g) < 3 * se
    se_small = quantile_bootstrap_se(spectra(100, 2), N // 2)
    assert 1.3 < se_small / se < 3.0


def sample_for(q_rows, N, seed=0):
    M = random_symmetric(N, seed)
    return eigh(M, rows=q_rows)


def test_overlap_observable():
    N = 8
    s = sample_for((1, 2), N)
    assert overlap_observable(s, {1: 1.0}, ParticleConfig((), N)) == 1.0
    u = s.entry(3, 1)
    one = overlap_observable(s, {1: 1.0}, ParticleConfig.parse("3:1", N))
    assert one == pytest.approx(N * u * u)
    two = overlap_observable(s, {1: 1.0}, ParticleConfig.parse("3:2", N))
    assert two == pytest.approx((N * u * u) ** 2 / 3)
    q = {1: 1 / math.sqrt(2), 2: 1 / math.sqrt(2)}
    proj = (s.entry(5, 1) + s.entry(5, 2)) / math.sqrt(2)
    assert overlap_observable(s, q, ParticleConfig.parse("5:1", N)) == pytest.approx(N * proj**2)
    with pytest.raises(ValueError):
        overlap_observable(s, {1: 2.0}, ParticleConfig.parse("3:1", N))


def test_particle_config():
    xi = ParticleConfig.parse("4:2, 1:1", 5)
    assert xi.n_particles == 3
    assert str(xi) == "1:1,4:2"
    assert xi.moved(4, 2) == ParticleConfig.parse("1:1,2:1,4:1", 5)
    with pytest.raises(ValueError):
        ParticleConfig.parse("6:1", 5)
    with pytest.raises(ValueError):
        ParticleConfig.parse("2:0", 5)


def test_level_repulsion_examples():
    assert level_repulsion([0.0, 1.0, 2.0], 2, M=100.0) == pytest.approx(2 / 9)
    assert level_repulsion([0.0, 1.0, 2.0], 2) == pytest.approx(2 / 9)
    assert level_repulsion([0.0, 1.0, 1.0], 2, M=7.0) == 7.0
    with pytest.raises(IndexError):
        level_repulsion([0.0, 1.0], 3)


@given(st.floats(0.0, 60.0), st.floats(2.0, 50.0))
@settings(max_examples=200)
def test_smooth_cap_bounds(x, M):
    f = smooth_cap(x, M)
    if x <= M:
        assert abs(f - x) <= 1 + 1e-12
    else:
        assert f == M
    assert smooth_cap(x + 1e-3, M) >= f - 1e-12


def test_smooth_cap_is_c2():
    M, h = 10.0, 1e-5
    f = lambda x: smooth_cap(x, M)
    for x0 in (M - 1.0, M):
        d1 = [(f(x + h) - f(x - h)) / (2 * h) for x in (x0 - 2 * h, x0 + 2 * h)]
        d2 = [(f(x + h) - 2 * f(x) + f(x - h)) / h**2 for x in (x0 - 2 * h, x0 + 2 * h)]
        assert d1[0] == pytest.approx(d1[1], abs=1e-3)
        assert d2[0] == pytest.approx(d2[1], abs=5e-3)


def test_csv_exports(tmp_path):
    write_spectrum_csv(tmp_path / "s.csv", [0.5, 1.5])
    assert (tmp_path / "s.csv").read_text().splitlines() == ["index,eigenvalue", "1,0.5", "2,1.5"]
    write_overlap_csv(tmp_path / "o.csv", [(1, 2, 0.25)])
    assert (tmp_path / "o.csv").read_text().splitlines()[1] == "1,2,0.25"


def test_sample_is_immutable():
    s = SpectralSample(np.zeros(2), {})
    with pytest.raises(dataclasses.FrozenInstanceError):
        s.meta = {}


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="max of ~1e5 squared coordinates exceeds N^0.2/N at N=1000 even for GOE (observed N max u^2 ~ 18-44)",
)
def test_delocalization_near_zero():
    N = 1000
    spec = EnsembleSpec.for_alpha(1.5, N, seed=12)
    bound = N ** (-1 + 0.2)
    ok = []
    for r in range(10):
        _, U = eigh_full(build_levy(spec, r))
        bulk = U[:, N // 2 - N // 10 + 1 : N // 2 + N // 10]
        ok.append(np.max(bulk**2) < bound)
    assert np.mean(ok) >= 0.99

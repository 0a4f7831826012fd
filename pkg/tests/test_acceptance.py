"""Exit-criteria suite.

Each test records a line through the ``acceptance`` fixture; the terminal
summary prints one PASS/FAIL line per criterion. The statistical criteria
run at full scale and take most of an hour on a single core.
"""

import math

import numpy as np
import pytest
from scipy import stats

from levylab.emf import build_generator, enumerate_configs, integrate_emf
from levylab.ensemble import EnsembleSpec, build_levy, decompose
from levylab.experiments import (
    ExperimentConfig,
    report_passed,
    run,
    sample_entries,
    verify_dynamics,
    verify_joint,
    verify_median,
    verify_que,
)
from levylab.limit_moments import imR_moment, median_moment
from levylab.rde import (
    density_quadrature,
    eta_scan,
    gamma_star_at_real_E,
    select_rho0_orientation,
)
from levylab.spectral import ParticleConfig, resolvent_matrix
from levylab.stable_rand import StableLaw, sample_ppp, sample_stable

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

N_LARGE = 1000
REPLICAS = 2000
# covariances of products of skewed entries need an order of magnitude more
JOINT_REPLICAS = 20000


def _rows_summary(rep) -> str:
    return ", ".join(
        f"{r.label}={r.empirical:.4g}±{r.se:.2g} vs {r.theory:.4g}{'' if r.passed in (None, True) else ' (FAIL)'}"
        for r in rep.rows
    )


# ---------------------------------------------------------------- 1


def test_exact_identities(acceptance):
    spec = EnsembleSpec.for_alpha(1.5, 200, seed=1)
    H = build_levy(spec)
    z1, z2 = 0.1 + 0.05j, -0.4 + 0.3j
    R1, R2 = resolvent_matrix(H, z1), resolvent_matrix(H, z2)
    ward = np.abs(np.sum(np.abs(R1) ** 2, axis=1) - R1.diagonal().imag / z1.imag).max()
    ward_rel = ward / np.abs(R1.diagonal().imag / z1.imag).max()
    lhs = R1 - R2
    ident = np.abs(lhs - (z1 - z2) * R1 @ R2).max() / np.abs(lhs).max()
    ok_res = ward_rel < 1e-9 and ident < 1e-9

    lam = np.linspace(-2, 2, 8) + 0.05 * np.sin(np.arange(8))
    Q = build_generator(lam, ParticleConfig.parse("3:2", 8)).Q.toarray()
    off = Q - np.diag(np.diag(Q))
    ok_gen = bool(np.all(off >= 0) and np.abs(Q.sum(axis=1)).max() <= 1e-12 * np.abs(Q).max())

    f, _ = integrate_emf(lambda s: lam + s, lambda c: 1.0, 0.0, 1.0, 200, ParticleConfig.parse("4:1,5:1", 8))
    ok_stat = np.abs(f - 1).max() < 1e-10
    assert len(enumerate_configs(8, 2)) == len(f)

    med = [median_moment(a, 1) for a in np.linspace(0.1, 1.9, 19)]
    ok_med = np.allclose(med, 1.0, rtol=1e-12, atol=0)

    parts = decompose(H, spec)
    ok_dec = np.array_equal(parts.A + parts.B + parts.C, H)

    ok = acceptance(
        1, ok_res and ok_gen and ok_stat and ok_med and ok_dec,
        f"ward {ward_rel:.1e}, resolvent identity {ident:.1e}, generator {ok_gen}, "
        f"f=1 stationary {ok_stat}, median_moment(a,1)=1 {ok_med}, A+B+C=H {ok_dec}",
    )
    assert ok


# ---------------------------------------------------------------- 2


def test_stable_law_suite(acceptance):
    n = 1_000_000
    t = np.array([-2.0, -0.5, 0.25, 1.0, 3.0])
    worst = 0.0
    for k, (alpha, beta) in enumerate([(0.7, 0.0), (1.0, 0.5), (1.5, 1.0), (1.9, -0.3)]):
        law = StableLaw(alpha, beta, 1.0)
        x = sample_stable(law, n, seed=100 + k)
        emp = np.array([np.exp(1j * s * x).mean() for s in t])
        worst = max(worst, float(np.abs(emp - law.cf(t)).max()))
    ok_cf = worst < 4 / math.sqrt(n)

    counts = np.array([len(sample_ppp(1.0, 0.01, seed=s)) for s in range(4000)])
    edges = list(range(4, 18))
    obs = [np.sum(counts < 4)] + [np.sum(counts == k) for k in edges] + [np.sum(counts >= 18)]
    pois = stats.poisson(10.0)
    probs = [pois.cdf(3)] + [pois.pmf(k) for k in edges] + [pois.sf(17)]
    _, p_chi = stats.chisquare(obs, np.array(probs) * len(counts))
    ok_ppp = p_chi > 0.01

    z_scores = []
    for a in (0.5, 0.75):
        x = sample_stable(StableLaw.one_sided(a), n, seed=7)
        for s in (0.5, 1.0, 2.0):
            v = np.exp(-s * x)
            z_scores.append(abs(v.mean() - math.exp(-(s**a))) / (v.std() / math.sqrt(n)))
    ok_lap = max(z_scores) < 3

    ok = acceptance(
        2, ok_cf and ok_ppp and ok_lap,
        f"max CF error {worst:.2e} (< {4 / math.sqrt(n):.0e}), PPP chi-square p={p_chi:.3f}, "
        f"Laplace max |z|={max(z_scores):.2f}",
    )
    assert ok


# ---------------------------------------------------------------- 3


@pytest.mark.parametrize("alpha", [1.0, 1.5])
@pytest.mark.parametrize("E", [0.0, 0.03])
def test_rde_limit_cross_check(acceptance, alpha, E):
    scan = eta_scan(alpha, E, pool_size=50_000, generations=200, seed=1)
    gamma = gamma_star_at_real_E(alpha, E, scan=scan).gamma
    rho = density_quadrature(alpha, E)
    ok = scan.converged
    parts = []
    for p in (1, 2):
        m, se = scan.im_moment(p)
        th = imR_moment(alpha, E, p, gamma)
        good = abs(m - th) <= 3 * se + 0.02 * abs(th)
        ok &= good
        parts.append(f"E[ImR^{p}] {m:.4f}±{se:.4f} vs {th:.4f}")
    m1, se1 = scan.im_moment(1)
    u, use = m1 / (math.pi * rho), se1 / (math.pi * rho)
    ok &= abs(u - 1) <= 3 * use
    parts.append(f"E[U]={u:.4f}±{use:.4f}")
    if E == 0.0:
        name, value = select_rho0_orientation(alpha, m1 / math.pi)
        rel = abs(m1 / math.pi - value) / value
        ok &= rel <= 0.02
        parts.append(f"rho(0) orientation {name}, closed form {value:.5f}, population off {rel:.2%}")
    ok = acceptance(3, ok, f"alpha={alpha} E={E}: " + ", ".join(parts))
    assert ok


# ---------------------------------------------------------------- 4, 5


@pytest.fixture(scope="module")
def cauchy_entries():
    """N u_k(i)^2 for k in (N/2, N/2+1), i in (1, 2) at alpha = 1."""
    cfg = ExperimentConfig("joint", 1.0, N_LARGE, JOINT_REPLICAS, 2024)
    data, failed = sample_entries(cfg, (cfg.k, cfg.k + 1), (1, 2))
    return cfg, data, failed


def test_median_flagship_alpha_15(acceptance):
    cfg = ExperimentConfig("median", 1.5, N_LARGE, REPLICAS, 2024, p_max=2)
    assert median_moment(1.5, 2) == pytest.approx(4.246, rel=1e-3)
    rep = verify_median(cfg)
    ks = rep.extra["ks"]
    ok = acceptance(4, report_passed(rep), f"alpha=1.5: {_rows_summary(rep)}, KS={ks['statistic']:.4f}")
    assert ok


def test_median_flagship_alpha_1(acceptance, cauchy_entries):
    cfg, data, failed = cauchy_entries
    cfg = ExperimentConfig("median", 1.0, N_LARGE, JOINT_REPLICAS, 2024, p_max=2)
    assert median_moment(1.0, 2) == pytest.approx(9.0)
    rep = verify_median(cfg, data[:, :1, :1], failed)
    assert "skipped" in rep.extra["ks"]
    ok = acceptance(4, report_passed(rep), f"alpha=1: {_rows_summary(rep)}, KS skipped")
    assert ok


def test_joint_structure(acceptance, cauchy_entries):
    cfg, data, failed = cauchy_entries
    rep = verify_joint(cfg, data, failed)
    ok = acceptance(5, report_passed(rep), _rows_summary(rep))
    assert ok


# ---------------------------------------------------------------- 6


def test_dynamics(acceptance):
    rep = verify_dynamics(ExperimentConfig("dynamics", 1.5, N_LARGE, 400, 2024))
    ok = acceptance(6, report_passed(rep), f"t={rep.context['t']:.4f}: {_rows_summary(rep)}")
    assert ok


# ---------------------------------------------------------------- 7


def test_que_variance_decreases(acceptance):
    rep = verify_que(ExperimentConfig("que", 1.5, N_LARGE, 1000, 2024))
    checks = rep.extra["decreasing"]
    ok = all(c["pass"] for c in checks)
    detail = ", ".join(
        f"Var[{s}]={rep.row(f'que_var[{s}]').empirical:.4g}" for s in rep.context["sizes"]
    ) + "; " + ", ".join(f"{a}->{b}: {c['difference']:.3g} vs 3SE {3 * c['se']:.2g}"
                         for c in checks for a, b in [c["sizes"]])
    ok = acceptance(7, ok, detail)
    assert ok


# ---------------------------------------------------------------- 8


@pytest.mark.parametrize(
    "name,extra",
    [
        ("median", "rows = 1, 2"),
        ("joint", ""),
        ("dynamics", "t_samples = 200000"),
        ("que", "que_sizes = 4, 8, 16"),
    ],
)
def test_reproducible_across_workers(acceptance, tmp_path, name, extra):
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        f"[experiment]\nname = {name}\nalpha = 1.5\nn = 60\nreplicas = 100\nseed = 9\n{extra}\n"
    )
    outs = [tmp_path / "w1", tmp_path / "w2", tmp_path / "w1again"]
    codes = [run(cfg, workers=w, out_dir=str(o)) for w, o in zip((1, 2, 1), outs)]
    files = sorted(p.name for p in outs[0].iterdir())
    same = all(
        (outs[0] / f).read_bytes() == (o / f).read_bytes() for o in outs[1:] for f in files
    )
    same &= len(set(codes)) == 1
    ok = acceptance(8, same, f"{name}: {len(files)} files identical for workers 1, 2, 1")
    assert ok

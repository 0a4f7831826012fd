"""Command-line entry point ``levylab``."""

from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import emf, ensemble, experiments, limit_moments, rde, stable_rand
from .experiments import ConfigError, ExperimentConfig
from .spectral import ParticleConfig

log = logging.getLogger("levylab")


GLOBAL_DEFAULTS = {"seed": 0, "workers": 1, "out_dir": "results"}


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # Subcommands repeat the global flags with suppressed defaults so that
    # both "levylab --seed 3 rde ..." and "levylab rde ... --seed 3" work.
    def default(key):
        return argparse.SUPPRESS if suppress else GLOBAL_DEFAULTS[key]

    parser.add_argument("--seed", type=int, default=default("seed"), help="master seed")
    parser.add_argument("--workers", type=int, default=default("workers"), help="worker processes")
    parser.add_argument("--out-dir", default=default("out_dir"), help="directory for artifacts")


def _out_path(args, name: str) -> Path:
    p = Path(name)
    if not p.is_absolute() and p.parent == Path("."):
        p = Path(args.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_column(path: Path, values) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{float(v)!r}\n" for v in values)


# ---------------------------------------------------------------- handlers


def cmd_stable_sample(args) -> int:
    law = stable_rand.StableLaw(args.alpha, args.beta, args.sigma)
    x = stable_rand.sample_stable(law, args.n, args.seed)
    _write_column(_out_path(args, args.out), x)
    return 0


def cmd_stable_ppp(args) -> int:
    pts = stable_rand.sample_ppp(args.alpha, args.cutoff, args.seed)
    _write_column(_out_path(args, args.out), pts.points)
    return 0


def _spec(args) -> ensemble.EnsembleSpec:
    return ensemble.EnsembleSpec.for_alpha(args.alpha, args.n, args.seed)


def cmd_matrix_build(args) -> int:
    ensemble.write_matrix(_out_path(args, args.out), ensemble.build_levy(_spec(args), args.replica))
    return 0


def cmd_matrix_decompose(args) -> int:
    spec = _spec(args)
    parts = ensemble.decompose(ensemble.build_levy(spec, args.replica), spec)
    base = _out_path(args, args.out)
    for name in ("A", "B", "C"):
        ensemble.write_matrix(base.with_name(f"{base.name}.{name}.levm"), getattr(parts, name))
    ensemble.write_matrix(base.with_name(f"{base.name}.X.levm"), parts.X)
    print(json.dumps({"N": spec.N, "psi_count": int(parts.Psi.sum()), "nu": spec.nu, "rho": spec.rho}))
    return 0


def cmd_matrix_perturb(args) -> int:
    X = ensemble.read_matrix(args.input)
    ensemble.write_matrix(_out_path(args, args.out), ensemble.perturb(X, args.s, args.seed))
    return 0


def cmd_matrix_time(args) -> int:
    pt = ensemble.compute_t(_spec(args), args.samples)
    print(json.dumps({"t": pt.t, "se": pt.estimator_se, "lower": pt.lower, "upper": pt.upper}))
    return 0


def cmd_rde_solve(args) -> int:
    pop = rde.solve_rde(args.alpha, complex(args.re, args.im), args.pool, args.gens, args.points, args.seed)
    with open(_out_path(args, args.out), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im"])
        for v in pop.pool:
            w.writerow([repr(float(v.real)), repr(float(v.imag))])
    print(json.dumps({"generations": pop.generation, "converged": pop.converged,
                      "mean_im": pop.im_moment(1)[0]}))
    return 0


def cmd_rde_density(args) -> int:
    backend = args.backend
    est = rde.density(args.alpha, args.energy, pool_size=args.pool, seed=args.seed, backend=backend)
    out = {"alpha": args.alpha, "E": args.energy, "density": est.value, "se": est.se,
           "population": est.population_value, "quadrature": est.quadrature_value, "flagged": est.flagged}
    if args.energy == 0:
        out["closed_form"] = rde.closed_form_rho0(args.alpha)
    print(json.dumps(out, default=float))
    return 0


def cmd_rde_mstar(args) -> int:
    m = rde.solve_m_alpha(args.alpha, complex(args.re, args.im))
    print(json.dumps({"re": m.real, "im": m.imag}))
    return 0


def cmd_moments_limit(args) -> int:
    gamma = None
    if args.pool > 0:
        gamma = rde.gamma_star_at_real_E(args.alpha, args.energy, pool_size=args.pool, seed=args.seed).gamma
    rep = limit_moments.limit_table(args.alpha, args.energy, args.pmax, gamma)
    _out_path(args, args.out).write_text(rep.to_json())
    return 0


def cmd_emf_run(args) -> int:
    cfg = ExperimentConfig("dynamics", args.alpha, args.n, args.replicas, args.seed,
                           q_support=tuple(int(v) for v in args.q.split(",")), workers=args.workers)
    spec = cfg.spec
    mapping = {}
    for part in filter(None, args.xi.split(",")):
        site, _, mult = part.partition(":")
        k = experiments.resolve_index(site, args.n)
        mapping[k] = mapping.get(k, 0) + int(mult or 1)
    xi = ParticleConfig.from_mapping(mapping, args.n)
    pt = ensemble.compute_t(spec)
    eta = emf.spectral_scale(spec)
    projs, failed = experiments.map_replicas(
        functools.partial(experiments.projection_replica, spec, pt.t, cfg.q, None, "perturb"),
        cfg.replicas,
        cfg.workers,
    )
    F, seF = emf.estimate_F(spec, pt.t, cfg.q, xi, len(projs), projections=projs)
    rhs, seR = emf.theory_rhs(spec, pt.t, cfg.q, xi, eta, len(projs), projections=projs)
    rep = limit_moments.MomentReport(
        {"alpha": args.alpha, "N": args.n, "replicas": len(projs), "failed_replicas": len(failed),
         "seed": args.seed, "xi": str(xi), "t": pt.t, "eta": eta}
    )
    rep.add(limit_moments.MomentRow(
        f"F_vs_rhs[{xi}]", xi.n_particles, rhs, "monte_carlo", "resolvent prediction",
        empirical=F, se=float(np.hypot(seF, seR)), allowance=experiments.DYNAMICS_ALLOWANCE,
    ))
    _out_path(args, args.out).write_text(rep.to_json())
    return 0 if rep.passed else 1


def _verify_config(args, name: str) -> ExperimentConfig:
    if args.config:
        cfg = experiments.load_config(args.config)
        if cfg.name != name:
            raise ConfigError(f"config describes experiment {cfg.name!r}, not {name!r}")
        return cfg.with_overrides(workers=getattr(args, "workers", None))
    return ExperimentConfig(name, args.alpha, args.n, args.replicas, args.seed, workers=args.workers,
                            out_dir=args.out_dir)


def cmd_verify(args) -> int:
    cfg = _verify_config(args, args.which)
    rep, raw = experiments.run_experiment(cfg)
    experiments.write_outputs(cfg, rep, raw, args.out_dir)
    print(json.dumps({"experiment": cfg.name, "pass": rep.extra["pass"]}))
    return 0 if rep.extra["pass"] else 1


def cmd_run(args) -> int:
    out_dir = args.out_dir if args.out_dir != GLOBAL_DEFAULTS["out_dir"] else None
    return experiments.run(args.config, workers=args.workers, out_dir=out_dir)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    p = argparse.ArgumentParser(prog="levylab", description="Levy matrix eigenvector laboratory")
    _global_options(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    st = sub.add_parser("stable", help="stable-law and Poisson samplers").add_subparsers(dest="action", required=True)
    s = st.add_parser("sample", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stable_sample)
    s = st.add_parser("ppp", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--cutoff", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stable_ppp)

    mx = sub.add_parser("matrix", help="matrix models").add_subparsers(dest="action", required=True)
    for name, func in (("build", cmd_matrix_build), ("decompose", cmd_matrix_decompose), ("time", cmd_matrix_time)):
        s = mx.add_parser(name, parents=[common])
        s.add_argument("--alpha", type=float, required=True)
        s.add_argument("--n", type=int, required=True)
        if name == "time":
            s.add_argument("--samples", type=int, default=2_000_000)
        else:
            s.add_argument("--replica", type=int, default=0)
            s.add_argument("--out", required=True)
        s.set_defaults(func=func)
    s = mx.add_parser("perturb", parents=[common])
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--s", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_matrix_perturb)

    rd = sub.add_parser("rde", help="limiting equations").add_subparsers(dest="action", required=True)
    s = rd.add_parser("solve", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--re", type=float, default=0.0)
    s.add_argument("--im", type=float, required=True)
    s.add_argument("--pool", type=int, default=100_000)
    s.add_argument("--gens", type=int, default=200)
    s.add_argument("--points", type=int, default=100, help="largest Poisson points kept per update")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rde_solve)
    s = rd.add_parser("density", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--energy", type=float, default=0.0)
    s.add_argument("--pool", type=int, default=50_000)
    s.add_argument("--backend", choices=("both", "population", "quadrature"), default="quadrature")
    s.set_defaults(func=cmd_rde_density)
    s = rd.add_parser("mstar", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--re", type=float, default=0.0)
    s.add_argument("--im", type=float, required=True)
    s.set_defaults(func=cmd_rde_mstar)

    mo = sub.add_parser("moments", help="limit moments").add_subparsers(dest="action", required=True)
    s = mo.add_parser("limit", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--energy", type=float, default=0.0)
    s.add_argument("--pmax", type=int, default=3)
    s.add_argument("--pool", type=int, default=50_000, help="population size for gamma; 0 skips Im R rows")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_moments_limit)

    em = sub.add_parser("emf", help="moment-flow check").add_subparsers(dest="action", required=True)
    s = em.add_parser("run", parents=[common])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--replicas", type=int, default=400)
    s.add_argument("--xi", default="N/2:1", help='particle sites, e.g. "N/2:2" or "500:1,501:1"')
    s.add_argument("--q", default="1", help="support of q (uniform weights)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_emf_run)

    def verify_args(s):
        s.add_argument("--config")
        s.add_argument("--alpha", type=float, default=1.5)
        s.add_argument("--n", type=int, default=1000)
        s.add_argument("--replicas", type=int, default=400)

    ve = sub.add_parser("verify", help="verification suites").add_subparsers(dest="which", required=True)
    for name in experiments.EXPERIMENTS:
        s = ve.add_parser(name, parents=[common])
        verify_args(s)
        s.set_defaults(func=cmd_verify)
    s = sub.add_parser("que", parents=[common], help="same as 'verify que'")
    verify_args(s)
    s.set_defaults(func=cmd_verify, which="que")

    s = sub.add_parser("run", parents=[common], help="run an experiment from a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except (ConfigError, ValueError) as exc:
        print(f"levylab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

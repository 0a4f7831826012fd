"""Static SVG figures for experiment reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .rde import sample_ustar0
from .rng import substream

# fixed ids and no date stamp so reruns give identical files
matplotlib.rcParams["svg.hashsalt"] = "levylab"
_SVG_META = {"Date": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _entries_histogram(ax, values, alpha: float, seed: int):
    vals = np.asarray(values, dtype=float)
    vals = vals[vals > 0]
    bins = np.linspace(-4, 2, 61)
    ax.hist(np.log10(vals), bins=bins, density=True, alpha=0.6, label="simulation")
    rng = substream(seed, "plot-reference")
    ref = rng.standard_normal(200_000) ** 2 * sample_ustar0(alpha, 200_000, rng)
    h, edges = np.histogram(np.log10(ref[ref > 0]), bins=bins, density=True)
    ax.step(edges[:-1], h, where="post", color="k", label="limit law")
    ax.set_xlabel("log10 N u^2")
    ax.set_ylabel("density")
    ax.legend()


def plot_report(cfg, rep, raw: dict, out_dir) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if cfg.name in ("median", "joint") and raw.get("entries"):
        vals = [v for (_, k, i, v) in raw["entries"] if k == cfg.k and i == 1]
        _entries_histogram(ax, vals, cfg.alpha, cfg.seed)
        ax.set_title(f"alpha={cfg.alpha}, N={cfg.N}, k={cfg.k}")
    elif cfg.name == "que":
        sizes = rep.context["sizes"]
        rows = [rep.row(f"que_var[{s}]") for s in sizes]
        ax.errorbar(sizes, [r.empirical for r in rows], yerr=[3 * r.se for r in rows], fmt="o", label="variance")
        ax.plot(sizes, [r.theory for r in rows], "k--", label="Var(N u^2)/|a|")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("|a|")
        ax.legend()
    else:
        rows = rep.rows
        x = np.arange(len(rows))
        ax.errorbar(x, [r.empirical for r in rows], yerr=[3 * r.se for r in rows], fmt="o", label="F (3 SE)")
        ax.plot(x, [r.theory for r in rows], "kx", label="prediction")
        ax.set_xticks(x, [r.label for r in rows], rotation=30, ha="right", fontsize=7)
        ax.legend()
    fig.tight_layout()
    return _save(fig, Path(out_dir) / f"{cfg.name}.svg")

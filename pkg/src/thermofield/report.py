"""Figures for command-line runs.

matplotlib is imported only when a figure is drawn, so the numerical modules
never depend on it. PNGs are written without timestamps so reruns are
byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

_PNG_METADATA = {"Software": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    _pyplot().close(fig)
    return path


def plot_xi(varsigmas: Sequence[float], xis: Sequence[float], path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(varsigmas, xis, "o-", ms=3)
    k = int(np.argmin(xis))
    ax.axvline(varsigmas[k], color="grey", ls="--", lw=1)
    ax.set_xlabel("varsigma")
    ax.set_ylabel("Xi")
    ax.set_title(f"argmin = {varsigmas[k]:.2f}")
    fig.tight_layout()
    return _save(fig, path)


def plot_landscape(values: np.ndarray, grid: Sequence[float], axis: str, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    g = np.asarray(grid)
    im = ax.pcolormesh(g, g, np.asarray(values).T, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="cost")
    sym = "gamma" if axis == "gamma" else "alpha"
    ax.set_xlabel(f"{sym}1")
    ax.set_ylabel(f"{sym}2")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(records: Sequence, path, gibbs_purity=None) -> Path:
    """Fidelity and purity against beta, one curve per (mode, level)."""
    plt = _pyplot()
    fig, (ax_f, ax_p) = plt.subplots(1, 2, figsize=(9, 3.5))
    groups: dict[tuple[str, int], list] = {}
    for r in records:
        groups.setdefault((r.mode, r.level), []).append(r)
    for (mode, level), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r.beta)
        b = [r.beta for r in recs]
        label = f"{mode} L{level}"
        ax_f.plot(b, [r.F_mean for r in recs], "o-", ms=3, label=label)
        ax_p.plot(b, [0.5 * (r.purity["A"] + r.purity["B"]) for r in recs], "o-", ms=3, label=label)
    if gibbs_purity is not None:
        bs = np.linspace(0, max(r.beta for r in records), 101)
        ax_p.plot(bs, [gibbs_purity(x) for x in bs], "k--", lw=1, label="Gibbs")
    ax_f.set_xlabel("beta")
    ax_f.set_ylabel("fidelity")
    ax_p.set_xlabel("beta")
    ax_p.set_ylabel("purity")
    ax_p.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)

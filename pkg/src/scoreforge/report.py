"""Static PNG figures: training-loss curves and PCA scatter plots."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PcaResult  # noqa: E402
from .traincore import LossLog  # noqa: E402

# no timestamps or version strings, so identical inputs give identical bytes
_PNG_META = {"Software": None}

_PRETTY = {
    "loss_d": "Discriminator", "loss_g": "Generator",
    "loss_dh": "Disc H", "loss_dp": "Disc P", "loss_gh": "Gen H", "loss_gp": "Gen P",
    "loss_cycle": "Cycle",
}


def loss_series(log: LossLog) -> list[str]:
    return [n for n in log.names if n.startswith("loss_")]


def plot_losses(log: LossLog, path: str | Path, title: str | None = None) -> tuple[Path, int]:
    """All ``loss_*`` series of a log in one figure; returns the path and the number of curves."""
    if len(log) == 0:
        raise ValueError("loss log is empty")
    names = loss_series(log) or log.names
    fig, ax = plt.subplots(figsize=(7, 4), dpi=100)
    steps = log.steps()
    for name in names:
        ax.plot(steps, log.series(name), label=_PRETTY.get(name, name), linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    n_curves = len(ax.get_lines())
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return Path(path), n_curves


def plot_series(log: LossLog, name: str, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3), dpi=100)
    ax.plot(log.steps(), log.series(name), linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel(_PRETTY.get(name, name))
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def loss_report(log: LossLog, out_dir: str | Path, title: str | None = None) -> tuple[list[Path], int]:
    """Combined ``losses.png`` plus one ``series_<name>.png`` per logged series."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    combined, n_curves = plot_losses(log, out_dir / "losses.png", title)
    paths = [combined]
    for name in log.names:
        paths.append(plot_series(log, name, out_dir / f"series_{name}.png"))
    return paths, n_curves


def plot_pca(result: PcaResult, path: str | Path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5), dpi=100)
    for label, pts in result.coords.items():
        ax.scatter(pts[:, 0], pts[:, 1], s=8, alpha=0.6, label=label)
    r = result.explained_variance_ratio
    ax.set_xlabel(f"PC1 ({100 * r[0]:.1f}%)")
    ax.set_ylabel(f"PC2 ({100 * r[1]:.1f}%)" if len(r) > 1 else "PC2")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return Path(path)

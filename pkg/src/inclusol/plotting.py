"""Figures written next to the column files of a run."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no Software/date chunks, so identical data gives identical bytes
_META = {"Software": None}


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def trajectory_figure(path, t, states, r=None, title=""):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    D = states.shape[1]
    for i in range(min(D, 8)):
        a1.plot(t, states[:, i], lw=1.2, label=f"x{i + 1}")
    if D <= 8:
        a1.legend(fontsize=7, loc="best")
    a1.set_xlabel("t")
    a1.set_title(title or "state")
    a2.plot(t, np.linalg.norm(states, axis=1), lw=1.4, label="|x|")
    if r is not None:
        a2.plot(t, r, "--", lw=1.2, label="r")
    a2.set_xlabel("t")
    a2.legend(fontsize=7)
    a2.set_title("norm vs envelope")
    _save(fig, path)


def series_figure(path, x, ys: dict, xlabel="t", title="", logx=False, logy=False, marker=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in ys.items():
        ax.plot(x, y, lw=1.2, marker=marker, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend(fontsize=7)
    _save(fig, path)

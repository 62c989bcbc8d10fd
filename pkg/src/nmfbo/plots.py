"""Matplotlib rendering of convergence reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["ARM_STYLE", "render_convergence"]

ARM_STYLE = {
    "baseline": {"color": "tab:blue", "label": "MFBO"},
    "non_myopic": {"color": "tab:red", "label": "non-myopic MFBO"},
}

# display floor so exactly-solved trials survive the log axis
ERROR_FLOOR = 1e-12


def render_convergence(curve, title: str, path, dpi: int = 150) -> str:
    """Median normalized error vs budget with an interquartile band per arm."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for arm, stats in curve.arms.items():
        style = ARM_STYLE.get(arm, {"color": None, "label": arm})
        med = np.maximum(stats["median"], ERROR_FLOOR)
        lo = np.maximum(stats["p25"], ERROR_FLOOR)
        hi = np.maximum(stats["p75"], ERROR_FLOOR)
        ax.plot(curve.budgets, med, color=style["color"], label=style["label"])
        ax.fill_between(curve.budgets, lo, hi, color=style["color"], alpha=0.25, lw=0)
    ax.set_yscale("log")
    ax.set_xlabel("budget")
    ax.set_ylabel(r"normalized error $\Delta f$")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return str(path)

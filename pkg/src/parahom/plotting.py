"""SVG figures for sweep and appendix reports (byte-deterministic)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "parahom"
plt.rcParams["svg.fonttype"] = "path"

_META = {"Date": None, "Creator": "parahom"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_sweep(report: dict, path) -> None:
    """Log-log error plot with the fitted line and an eps^(1/4) reference."""
    rows = report["records"]
    eps = np.array([r["epsilon"] for r in rows])
    err = np.array([r["l2_error"] for r in rows])
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(eps, err, "o-", label="L2 error")
    w = [r["w_eps_h1"] for r in rows]
    if all(v is not None for v in w):
        ax.loglog(eps, w, "s--", label="w_eps H1 norm")
    fit = report.get("fit") or {}
    if fit.get("slope") is not None:
        c = np.exp(fit["intercept"])
        ax.loglog(eps, c * eps ** fit["slope"], "k-", lw=0.8, label=f"fit slope {fit['slope']:.3f}")
    ax.loglog(eps, err[0] * (eps / eps[0]) ** 0.25, ":", color="gray", label="eps^(1/4)")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("error")
    ax.set_title(report["config"].get("preset") or "sweep")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_appendix(report: dict, path) -> None:
    rows = report["rows"]
    names = sorted({r["estimate"] for r in rows})
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for name in names:
        sub = [r for r in rows if r["estimate"] == name]
        ax.semilogx([r["epsilon"] for r in sub], [r["ratio_max"] for r in sub], "o-", label=name)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("max ratio")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    _save(fig, path)

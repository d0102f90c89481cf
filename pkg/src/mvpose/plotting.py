"""Figures for reports and the trend experiments, rendered straight to files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import accuracy_curve  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def plot_accuracy_curves(report, path, classes=("ALL",)):
    """Accuracy vs. distance threshold for ADD-S and ADD(-S)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = sorted(report.add_s)
        for name in classes:
            if name == "ALL":
                a = [x for n in names for x in report.add_s[n]]
                c = [x for n in names for x in report.add_combined[n]]
            else:
                a, c = report.add_s[name], report.add_combined[name]
            th, acc = accuracy_curve(a)
            ax.plot(th * 100, acc * 100, label=f"{name} ADD-S")
            th, acc = accuracy_curve(c)
            ax.plot(th * 100, acc * 100, "--", label=f"{name} ADD(-S)")
        ax.set_xlabel("threshold [cm]")
        ax.set_ylabel("accuracy [%]")
        ax.set_ylim(0, 101)
        ax.legend(loc="lower right")
        fig.savefig(path)
        plt.close(fig)


def plot_view_ablation(reports: dict, path):
    ks = sorted(reports)
    rows = [reports[k].overall() for k in ks]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(ks, [r["add_s_auc"] for r in rows], "o-", label="ADD-S AUC")
        ax.plot(ks, [r["adds_auc"] for r in rows], "s--", label="ADD(-S) AUC")
        ax.set_xticks(ks)
        ax.set_xlabel("views used")
        ax.set_ylabel("AUC")
        ax.legend(loc="lower right")
        fig.savefig(path)
        plt.close(fig)


def plot_wiggle_sweep(rows, path):
    sig = [1000 * r["sigma_m"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(sig, [r["add_s_auc"] for r in rows], "o-", label="ADD-S AUC")
        ax.plot(sig, [r["adds_auc"] for r in rows], "s--", label="ADD(-S) AUC")
        ax.set_xlabel("camera position jitter [mm]")
        ax.set_ylabel("AUC")
        ax.legend(loc="lower left")
        fig.savefig(path)
        plt.close(fig)

"""Figures for run directories.  Rendering is headless (Agg) and every
function writes one PNG and returns its path."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import MetricsLog, hyper_diagnostics  # noqa: E402

STYLE = {"figure.figsize": (6.0, 3.6), "axes.grid": True, "grid.alpha": 0.3,
         "font.size": 9, "legend.fontsize": 8, "savefig.dpi": 120}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _new(ncols=1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, ncols, figsize=(STYLE["figure.figsize"][0] * (1 + 0.6 * (ncols - 1)),
                                                  STYLE["figure.figsize"][1]))
    return fig, ax


def plot_flips(log: MetricsLog, path) -> Path:
    """Accumulated up/down flips, and the running down-minus-up balance of
    the first filter of the first layer."""
    up, down = log.ledger.totals()
    fig, (a, b) = _new(2)
    a.plot(np.cumsum(up), label="-1 to +1")
    a.plot(np.cumsum(down), "--", label="+1 to -1")
    a.set_xlabel("iteration")
    a.set_ylabel("accumulated flips")
    a.legend()
    if log.ledger.up:
        b.plot(log.ledger.cumulative_difference(0, 0))
    b.set_xlabel("iteration")
    b.set_ylabel("down - up (layer 0, filter 0)")
    return _save(fig, path)


def plot_entropy(log: MetricsLog, path) -> Path:
    fig, ax = _new()
    for key, style in (("weight_entropy_min", "-"), ("weight_entropy_max", ":"),
                       ("activation_entropy", "--")):
        if log.series.get(key):
            ax.plot(log.series[key], style, label=key.replace("_", " "))
    ax.set_ylim(-0.02, 1.05)
    ax.set_xlabel("iteration")
    ax.set_ylabel("entropy (bits)")
    ax.legend()
    return _save(fig, path)


def plot_hyper(log: MetricsLog, path) -> Path:
    h = hyper_diagnostics(log)
    lr = [r["lr"] for r in log.epoch_rows("iter")]
    fig, axes = _new(4)
    for ax, (title, y) in zip(axes, (("mean |W|", h["latent_abs_mean"]),
                                     ("mean |grad|", h["grad_abs_mean"]),
                                     ("flips / iteration", h["flips_per_iter"]),
                                     ("learning rate", lr))):
        ax.plot(y)
        ax.set_title(title)
        ax.set_xlabel("iteration")
    return _save(fig, path)


def plot_sweep(rows: Sequence[Dict], path) -> Path:
    p = np.array([r["p_pos"] for r in rows])
    m = np.array([r["mean_accuracy"] for r in rows])
    s = np.array([r["std_accuracy"] for r in rows])
    fig, ax = _new()
    ax.errorbar(p, m, yerr=s, marker="o", capsize=3)
    ax.set_xlabel("p_pos")
    ax.set_ylabel("test accuracy")
    return _save(fig, path)


def plot_prune(rows: Sequence[Dict], path) -> Path:
    fig, ax = _new()
    for method in sorted({r["binarizer"] for r in rows}):
        sel = [r for r in rows if r["binarizer"] == method]
        ax.errorbar([r["rho"] for r in sel], [r["mean_accuracy"] for r in sel],
                    yerr=[r["std_accuracy"] for r in sel], marker="o", capsize=3, label=method)
    ax.set_xlabel("pruned fraction")
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)


def plot_multi_seed(rows: Sequence[Dict], path) -> Path:
    fig, (a, b) = _new(2)
    for method in sorted({r["method"] for r in rows}):
        sel = [r for r in rows if r["method"] == method]
        a.plot([r["test_loss"] for r in sel], label=method)
        b.plot(sorted(r["test_accuracy"] for r in sel), label=method)
    a.set_xlabel("run (sorted by loss)")
    a.set_ylabel("test loss")
    b.set_xlabel("run (sorted by accuracy)")
    b.set_ylabel("test accuracy")
    a.legend()
    return _save(fig, path)


def plot_toy(rows: List[Dict], path) -> Path:
    fig, ax = _new()
    for res in sorted({r["resolution"] for r in rows}):
        sel = [r for r in rows if r["resolution"] == res]
        n = [r["n_neg"] for r in sel]
        ax.semilogy(n, [max(r["unique_solutions"], 0.8) for r in sel], "o-", label=f"unique, {res}x{res}")
    first = [r for r in rows if r["resolution"] == rows[0]["resolution"]]
    ax.semilogy([r["n_neg"] for r in first], [r["combinations"] for r in first], "k--", label="combinations")
    ax.set_xlabel("number of -1 weights")
    ax.set_ylabel("count (zero drawn at 0.8)")
    ax.legend()
    return _save(fig, path)

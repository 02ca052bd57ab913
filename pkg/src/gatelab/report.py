"""Render figures from experiment CSVs, next to the delimited output."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(value)
    out = {}
    for name, values in cols.items():
        try:
            out[name] = np.array([float(v) for v in values])
        except ValueError:
            out[name] = np.array(values)
    return out


def _save(fig, out_dir: str, name: str, written: list[str]) -> None:
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(path)


def _plot_growth(cols, out_dir, written):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    rules = sorted(set(cols["rule"].tolist()))
    colors = {r: c for r, c in zip(rules, plt.rcParams["axes.prop_cycle"].by_key()["color"])}
    for rule in rules:
        mask = cols["rule"] == rule
        ids = np.unique(cols["sample_id"][mask])
        for k, sid in enumerate(ids[:20]):
            sel = mask & (cols["sample_id"] == sid)
            order = np.argsort(cols["t_over_m_success"][sel])
            label = rule if k == 0 else None
            axes[0].plot(
                cols["t_over_m_success"][sel][order], cols["delta_norm"][sel][order],
                color=colors[rule], alpha=0.35, lw=0.8, label=label,
            )
            axes[1].plot(
                cols["t_over_m_success"][sel][order], cols["grad_norm"][sel][order],
                color=colors[rule], alpha=0.35, lw=0.8, label=label,
            )
    for ax, title in zip(axes, ("perturbation norm", "gradient norm")):
        ax.set_yscale("log")
        ax.set_xlabel("t / m_success")
        ax.set_title(title)
        ax.legend(fontsize=7)
    _save(fig, out_dir, "growth.png", written)


def _plot_kappa(cols, out_dir, written):
    fig, ax = plt.subplots(figsize=(7.5, 3.4))
    networks = list(dict.fromkeys(cols["network"].tolist()))
    baselines = list(dict.fromkeys(cols["baseline"].tolist()))
    width = 0.8 / len(baselines)
    xs = np.arange(len(networks))
    for k, baseline in enumerate(baselines):
        values = []
        for net in networks:
            sel = (cols["network"] == net) & (cols["baseline"] == baseline)
            values.append(cols["kappa"][sel][0] if np.any(sel) else np.nan)
        ax.bar(xs + k * width, values, width, label=baseline)
    ax.set_yscale("log")
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(networks, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("kappa")
    ax.legend(fontsize=7)
    _save(fig, out_dir, "kappa_table.png", written)


def _plot_effect_fit(cols, out_dir, written):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    xs = np.arange(len(cols["network"]))
    ax.semilogy(xs, cols["kappa"], "o-", label="free gates (kappa)")
    ax.semilogy(xs, cols["kappa_prime"], "s-", label="frozen gates (kappa')")
    ax.set_xticks(xs)
    ax.set_xticklabels(cols["network"], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("relative fit error")
    ax.legend(fontsize=8)
    _save(fig, out_dir, "effect_fit.png", written)


def _plot_impact(cols, out_dir, written):
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key in zip(axes, ("H_z", "Hz_gx2", "A_hat")):
        ax.loglog(np.maximum(cols[key], 1e-300), np.maximum(cols["abs_phi_star"], 1e-300), ".", ms=3)
        ax.set_xlabel(key)
        ax.set_ylabel("|phi*|")
    _save(fig, out_dir, "impact_vs_a.png", written)


def _plot_cosine(cols, out_dir, written):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(cols["a_hat_mid"], cols["mean_cosine"], "o-")
    ax.set_xscale("symlog", linthresh=1e-12)
    ax.set_xlabel("amplification estimate (bin median)")
    ax.set_ylabel("mean cosine with mean shift")
    _save(fig, out_dir, "cosine_vs_a.png", written)


def _plot_oscillation(cols, out_dir, written):
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    lo = min(cols["delta_ori"].min(), cols["delta_adv"].min())
    hi = max(cols["delta_ori"].max(), cols["delta_adv"].max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.plot(cols["delta_ori"], cols["delta_adv"], ".", ms=4)
    ax.set_xlabel("gradient response, clean input")
    ax.set_ylabel("gradient response, attacked input")
    _save(fig, out_dir, "oscillation.png", written)


def _plot_history(cols, out_dir, written):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    axes[0].plot(cols["epoch"], cols["mean_loss"])
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("mean loss")
    axes[1].plot(cols["epoch"], cols["clean_accuracy"], label="clean")
    if np.all(np.isfinite(cols["robust_accuracy"])):
        axes[1].plot(cols["epoch"], cols["robust_accuracy"], label="robust")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("accuracy")
    axes[1].legend(fontsize=8)
    _save(fig, out_dir, "history.png", written)


_PLOTTERS = {
    "growth.csv": _plot_growth,
    "kappa-table.csv": _plot_kappa,
    "effect-fit.csv": _plot_effect_fit,
    "impact-vs-a.csv": _plot_impact,
    "cosine-vs-a.csv": _plot_cosine,
    "oscillation.csv": _plot_oscillation,
    "history.csv": _plot_history,
}


def render_reports(out_dir: str) -> list[str]:
    """Render a figure for every known CSV present in ``out_dir``.

    Returns the list of written image paths.
    """
    written: list[str] = []
    for filename, plotter in _PLOTTERS.items():
        path = os.path.join(out_dir, filename)
        if not os.path.exists(path):
            continue
        cols = _read_csv(path)
        if not cols or not len(next(iter(cols.values()))):
            continue
        plotter(cols, out_dir, written)
    return written

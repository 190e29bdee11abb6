"""SVG figures: GPR overlays, first-layer weight signatures, t-SNE scatters."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .preprocess import WarpParams, warp_map  # noqa: E402

# fixed ids and no timestamp, so identical inputs give byte-identical SVG
plt.rcParams["svg.hashsalt"] = "phenolearn"
_SVG_META = {"Date": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def overlay_curves(interp):
    """Grid times, mean, and the mean -/+ one predictive standard deviation."""
    sd = np.sqrt(np.maximum(interp.variances, 0.0))
    return interp.grid_times, interp.means, interp.means - sd, interp.means + sd


def _draw_overlay(ax, series, interp, warp):
    t, mean, lower, upper = overlay_curves(interp)
    ax.plot(series.times, series.values, "k-o", ms=3, lw=1, label="original")
    ax.plot(warp_map(series.times, series.times, warp), series.values, "r-", lw=1, label="warped")
    ax.plot(t, mean, "b-", lw=1, label="GPR mean")
    ax.plot(t, lower, "b:", lw=0.8)
    ax.plot(t, upper, "b:", lw=0.8, label="±1 sd")


def plot_gpr_overlay(path, series, interp, warp: WarpParams = WarpParams()):
    fig, ax = plt.subplots(figsize=(8, 4))
    _draw_overlay(ax, series, interp, warp)
    ax.set_xlabel("days")
    ax.set_ylabel("value")
    ax.set_title(f"admission {series.hadm_id} (label {series.label})")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def plot_gpr_examples(path, pairs, warp: WarpParams = WarpParams(), cols=3):
    rows = max(1, math.ceil(len(pairs) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.5 * rows), squeeze=False)
    for ax in axes.flat[len(pairs):]:
        ax.set_visible(False)
    for ax, (series, interp) in zip(axes.flat, pairs):
        _draw_overlay(ax, series, interp, warp)
        ax.set_title(f"{series.hadm_id} / label {series.label}", fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    _save(fig, path)


def plot_signatures(path, signatures, patch_len):
    """One small panel per hidden unit: mean-channel and variance-channel weights."""
    signatures = np.asarray(signatures)
    n = len(signatures)
    side = math.ceil(math.sqrt(n))
    fig, axes = plt.subplots(side, math.ceil(n / side), figsize=(12, 12), squeeze=False)
    idx = np.arange(patch_len)
    for k, ax in enumerate(axes.flat):
        if k >= n:
            fig.delaxes(ax)
            continue
        ax.plot(idx, signatures[k, :patch_len], "b-", lw=0.8)
        ax.plot(idx, signatures[k, patch_len:], "r-", lw=0.8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle("first-layer weights (blue: mean channel, red: variance channel)")
    _save(fig, path)


def plot_embedding(path, coords, labels, title):
    fig, ax = plt.subplots(figsize=(6, 6))
    labels = np.asarray(labels)
    for lab, color in ((0, "tab:blue"), (1, "tab:red")):
        m = labels == lab
        ax.scatter(coords[m, 0], coords[m, 1], s=6, c=color, label=f"label {lab}", alpha=0.7)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)

"""Figures for training runs, trajectories, volumes and feature spaces (PNG via Agg)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import geometry as geo
from .geometry import FrameGeometry


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curves(records: Sequence[dict], path, keys=("train_loss", "val_loss", "disc_loss")) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r["epoch"] for r in records]
    for k in keys:
        vals = [r.get(k) for r in records]
        if any(v is not None and np.isfinite(v) for v in vals):
            ax.plot(epochs, vals, label=k)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def frame_centres(poses, g: FrameGeometry) -> np.ndarray:
    """World position of each frame's image centre."""
    c = geo.local_corners(g).mean(axis=0)
    return np.asarray(poses)[:, :3, :3] @ c + np.asarray(poses)[:, :3, 3]


def trajectories(gt, predictions: Mapping[str, np.ndarray], g: FrameGeometry, path, title: str = "") -> Path:
    """Frame-centre paths, top view (x-z) and side view (y-z)."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    curves = {"ground truth": gt, **predictions}
    for name, poses in curves.items():
        p = frame_centres(poses, g)
        style = dict(color="k", lw=2) if name == "ground truth" else {}
        axes[0].plot(p[:, 2], p[:, 0], label=name, **style)
        axes[1].plot(p[:, 2], p[:, 1], label=name, **style)
    axes[0].set_xlabel("z (mm)")
    axes[0].set_ylabel("x (mm)")
    axes[1].set_xlabel("z (mm)")
    axes[1].set_ylabel("y (mm)")
    axes[1].invert_yaxis()
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def volume_slice(img: np.ndarray, voxel_mm: float, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    h, w = img.shape
    ax.imshow(img, cmap="gray", origin="upper", extent=(0, w * voxel_mm, h * voxel_mm, 0))
    ax.set_xlabel("z (mm)")
    ax.set_ylabel("depth (mm)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def pca_2d(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    return x @ vt[:2].T


def feature_projection(features: np.ndarray, ax_deg: np.ndarray, domains: Sequence[str], path, title: str = "") -> Path:
    """First two principal components, coloured by rotation about x, marker by domain."""
    proj = pca_2d(features)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    domains = np.asarray(domains)
    markers = {"source": "o", "target": "^"}
    sc = None
    for dom in sorted(set(domains)):
        m = domains == dom
        sc = ax.scatter(proj[m, 0], proj[m, 1], c=np.asarray(ax_deg)[m], cmap="viridis", s=10,
                        marker=markers.get(dom, "s"), label=dom, vmin=np.min(ax_deg), vmax=np.max(ax_deg))
    if sc is not None:
        fig.colorbar(sc, ax=ax, label="ax (deg)")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def error_bars(summary: Mapping[str, Mapping[str, float]], path) -> Path:
    """Mean ADE and final drift per model."""
    names = list(summary)
    ade = [summary[n]["mean_ade_mm"] for n in names]
    fd = [summary[n]["mean_fd_mm"] for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.4 * len(names) + 2, 3.5))
    ax.bar(x - 0.2, ade, 0.4, label="avg distance error")
    ax.bar(x + 0.2, fd, 0.4, label="final drift")
    ax.set_xticks(x, names, rotation=20)
    ax.set_ylabel("mm")
    ax.legend(fontsize=8)
    return _save(fig, path)

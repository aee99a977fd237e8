"""Sliding-window motion prediction, trajectory chaining and volume compounding."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy import ndimage

from . import geometry as geo
from .dataset import DofStats
from .errors import InvalidArgument
from .geometry import FrameGeometry
from .model import Network

HOLE_FILL_RADIUS = 2.0


def predict_windows(g_net: Network, r_net: Network, frames: np.ndarray, n: int, batch: int = 64) -> np.ndarray:
    """Destandardised window DOF predictions, shape ``(T-N+1, 6)``.

    Features come from ``g_net``'s extractor and are regressed by ``r_net``'s
    regressor using ``r_net``'s label statistics.
    """
    T = frames.shape[0]
    if T < n:
        raise InvalidArgument(f"sweep has {T} frames, fewer than N={n}")
    if g_net.cfg.feature_dim != r_net.cfg.feature_dim or g_net.cfg.n_frames != n:
        raise InvalidArgument("extractor and regressor checkpoints are not compatible")
    windows = np.lib.stride_tricks.sliding_window_view(frames, n, axis=0)  # (W, H, Wd, n)
    windows = np.moveaxis(windows, -1, 1)
    out = []
    with torch.no_grad():
        for i in range(0, windows.shape[0], batch):
            x = torch.from_numpy(np.ascontiguousarray(windows[i : i + batch], dtype=np.float32))
            out.append(r_net.r(g_net.g(x)).double().numpy())
    return r_net.stats.destandardize(np.concatenate(out))


def per_step_from_windows(window_dofs: np.ndarray, n: int) -> np.ndarray:
    """Average ``window / (N-1)`` over every stride-1 window covering each step."""
    window_dofs = np.asarray(window_dofs, dtype=np.float64)
    n_windows = window_dofs.shape[0]
    n_steps = n_windows + n - 2
    acc = np.zeros((n_steps, 6))
    cnt = np.zeros(n_steps)
    per = geo.scale_dof(window_dofs, 1.0 / (n - 1))
    for w in range(n_windows):
        acc[w : w + n - 1] += per[w]
        cnt[w : w + n - 1] += 1
    return acc / cnt[:, None]


def predict_per_step(
    g_net: Network | None,
    r_net: Network | None,
    frames: np.ndarray,
    n: int,
    window_predictor: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Per-step DOF estimates, shape ``(T-1, 6)``.

    ``window_predictor(frames, n)`` may replace the network pair, e.g. with
    an oracle returning ground-truth window labels.
    """
    if frames.shape[0] < n:
        raise InvalidArgument(f"sweep has {frames.shape[0]} frames, fewer than N={n}")
    if window_predictor is not None:
        windows = np.asarray(window_predictor(frames, n), dtype=np.float64)
    else:
        windows = predict_windows(g_net, r_net, frames, n)
    return per_step_from_windows(windows, n)


def chain_trajectory(initial, steps: Sequence) -> np.ndarray:
    """Poses ``(len(steps)+1, 4, 4)`` with ``pose[i+1] = pose[i] @ dof_to_pose(step_i)``."""
    steps = np.asarray(steps, dtype=np.float64).reshape(-1, 6)
    mats = geo.dof_to_pose(steps)
    out = np.empty((len(steps) + 1, 4, 4))
    out[0] = np.asarray(initial, dtype=np.float64)
    for i, m in enumerate(mats):
        out[i + 1] = out[i] @ m
    return out


@dataclass
class GridSpec:
    dims: tuple
    voxel_mm: float
    origin_mm: tuple  # world position of voxel (0, 0, 0) centre

    def __post_init__(self):
        if not self.voxel_mm > 0:
            raise InvalidArgument("voxel size must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidArgument("grid needs three positive dimensions")


@dataclass
class VolumeGrid:
    spec: GridSpec
    value_sum: np.ndarray
    weight_sum: np.ndarray
    intensity: np.ndarray

    @property
    def dims(self):
        return self.spec.dims


def grid_for_poses(poses, g: FrameGeometry, voxel_mm: float, margin_mm: float = 1.0) -> GridSpec:
    """Axis-aligned grid enclosing every frame placed at ``poses``."""
    pts = np.concatenate([geo.frame_corners(g, p) for p in poses])
    lo = pts.min(axis=0) - margin_mm
    hi = pts.max(axis=0) + margin_mm
    dims = tuple(int(np.ceil((h - l) / voxel_mm)) + 1 for l, h in zip(lo, hi))
    return GridSpec(dims=dims, voxel_mm=float(voxel_mm), origin_mm=tuple(float(x) for x in lo))


def compound_volume(
    frames: np.ndarray,
    poses,
    g: FrameGeometry,
    grid: GridSpec,
    pixel_mask: np.ndarray | None = None,
    fill_radius: float = HOLE_FILL_RADIUS,
) -> VolumeGrid:
    """Splat every (masked) pixel into its 8 neighbouring voxels with trilinear weights.

    Voxels left empty take the value of the nearest filled voxel within
    ``fill_radius`` voxels, else 0.
    """
    frames = np.asarray(frames)
    poses = np.asarray(poses, dtype=np.float64)
    dims = tuple(int(d) for d in grid.dims)
    n_vox = int(np.prod(dims))
    value_sum = np.zeros(n_vox)
    weight_sum = np.zeros(n_vox)
    if frames.shape[0] != poses.shape[0]:
        raise InvalidArgument(f"{frames.shape[0]} frames but {poses.shape[0]} poses")
    if frames.shape[0] == 0:
        z = np.zeros(dims)
        return VolumeGrid(grid, z, z.copy(), z.copy())

    local = geo.pixel_local_points(g)
    if pixel_mask is not None:
        local = local[pixel_mask]
    local = local.reshape(-1, 3)
    origin = np.asarray(grid.origin_mm, dtype=np.float64)
    dims_arr = np.asarray(dims)
    for img, pose in zip(frames, poses):
        vals = (img[pixel_mask] if pixel_mask is not None else img).reshape(-1).astype(np.float64)
        f = (geo.transform_points(pose, local) - origin) / grid.voxel_mm
        i0 = np.floor(f).astype(np.int64)
        t = f - i0
        for dx in (0, 1):
            wx = t[:, 0] if dx else 1.0 - t[:, 0]
            for dy in (0, 1):
                wy = t[:, 1] if dy else 1.0 - t[:, 1]
                for dz in (0, 1):
                    wz = t[:, 2] if dz else 1.0 - t[:, 2]
                    idx = i0 + (dx, dy, dz)
                    ok = np.all((idx >= 0) & (idx < dims_arr), axis=1)
                    w = (wx * wy * wz)[ok]
                    flat = np.ravel_multi_index(idx[ok].T, dims)
                    weight_sum += np.bincount(flat, weights=w, minlength=n_vox)
                    value_sum += np.bincount(flat, weights=w * vals[ok], minlength=n_vox)

    value_sum = value_sum.reshape(dims)
    weight_sum = weight_sum.reshape(dims)
    filled = weight_sum > 0
    intensity = np.zeros(dims)
    intensity[filled] = value_sum[filled] / weight_sum[filled]
    if fill_radius > 0 and filled.any() and not filled.all():
        dist, (ix, iy, iz) = ndimage.distance_transform_edt(~filled, return_indices=True)
        holes = ~filled & (dist <= fill_radius)
        intensity[holes] = intensity[ix[holes], iy[holes], iz[holes]]
    return VolumeGrid(grid, value_sum, weight_sum, intensity)


def save_volume(vol: VolumeGrid, directory) -> Path:
    """Write ``vol.json`` and ``vol.f32`` (little-endian float32, x fastest)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "dims": [int(x) for x in vol.spec.dims],
        "voxel_mm": float(vol.spec.voxel_mm),
        "origin_mm": [float(x) for x in vol.spec.origin_mm],
        "layout": "x-fastest",
        "dtype": "<f4",
    }
    (d / "vol.json").write_text(json.dumps(meta, indent=1))
    (d / "vol.f32").write_bytes(np.asarray(vol.intensity, dtype="<f4").tobytes(order="F"))
    return d


def load_volume(directory) -> tuple[dict, np.ndarray]:
    d = Path(directory)
    meta = json.loads((d / "vol.json").read_text())
    data = np.frombuffer((d / "vol.f32").read_bytes(), dtype="<f4")
    return meta, data.reshape(meta["dims"], order="F").copy()


def sagittal_slice(vol: VolumeGrid, x_index: int | None = None) -> np.ndarray:
    """The ``(y, z)`` plane at lateral index ``x_index`` (default: centre)."""
    ix = vol.intensity.shape[0] // 2 if x_index is None else x_index
    return vol.intensity[ix]


def write_pgm(img: np.ndarray, path, vmax: float | None = None) -> Path:
    """8-bit binary PGM; rows are the first array axis."""
    img = np.asarray(img, dtype=np.float64)
    top = vmax if vmax is not None else (img.max() if img.size and img.max() > 0 else 1.0)
    data = np.clip(np.round(img / top * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())
    return path


def reconstruct_sweep(
    frames: np.ndarray,
    g: FrameGeometry,
    g_net: Network,
    r_net: Network,
    voxel_mm: float,
    pixel_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, VolumeGrid]:
    """Predict, chain from the identity and compound one sweep."""
    n = g_net.cfg.n_frames
    steps = predict_per_step(g_net, r_net, frames, n)
    poses = chain_trajectory(np.eye(4), steps)
    grid = grid_for_poses(poses, g, voxel_mm)
    return poses, compound_volume(frames, poses, g, grid, pixel_mask)

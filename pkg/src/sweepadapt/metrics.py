"""Trajectory error metrics and feature export."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import geometry as geo
from . import reconstruct
from .dataset import Sample, extract_samples, labels_of
from .errors import InvalidArgument
from .geometry import FrameGeometry
from .model import Network
from .simulate import Sweep


def _corner_errors(pred, gt, g: FrameGeometry) -> np.ndarray:
    """Mean corner distance (mm) for each frame."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[0] < 1:
        raise InvalidArgument(f"pose lists differ or are empty: {pred.shape} vs {gt.shape}")
    c = geo.local_corners(g)
    cp = np.einsum("tij,kj->tki", pred[:, :3, :3], c) + pred[:, None, :3, 3]
    cg = np.einsum("tij,kj->tki", gt[:, :3, :3], c) + gt[:, None, :3, 3]
    return np.linalg.norm(cp - cg, axis=-1).mean(axis=1)


def average_distance_error(pred, gt, g: FrameGeometry) -> float:
    return float(_corner_errors(pred, gt, g).mean())


def final_drift(pred, gt, g: FrameGeometry) -> float:
    return float(_corner_errors(pred, gt, g)[-1])


def sweep_dof_summary(sweep: Sweep, n: int) -> np.ndarray:
    """Mean window label over all stride-1 windows of a sweep."""
    return labels_of(extract_samples(sweep, n, 1)).mean(axis=0)


def feature_rows(net: Network, samples: Sequence[Sample], batch: int = 64) -> np.ndarray:
    feats = []
    with torch.no_grad():
        for i in range(0, len(samples), batch):
            x = torch.from_numpy(np.stack([s.frames for s in samples[i : i + batch]]).astype(np.float32))
            feats.append(net.g(x).numpy())
    return np.concatenate(feats) if feats else np.zeros((0, net.cfg.feature_dim), dtype=np.float32)


def write_feature_csv(samples: Sequence[Sample], feats: np.ndarray, path) -> Path:
    """CSV: domain, sweep_id, start, label aX (deg), then one column per feature."""
    feats = np.asarray(feats)
    if len(samples) != len(feats):
        raise InvalidArgument(f"{len(samples)} samples but {len(feats)} feature rows")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "sweep_id", "start", "ax_deg"] + [f"f{i}" for i in range(feats.shape[1])])
    for s, f in zip(samples, feats):
        w.writerow([s.domain, s.sweep_id, s.start, repr(float(s.label[3]))] + [repr(float(x)) for x in f])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def export_features(net: Network, samples: Sequence[Sample], path) -> Path:
    return write_feature_csv(samples, feature_rows(net, samples), path)


def read_feature_csv(path) -> tuple[list[dict], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = [{"domain": r[0], "sweep_id": r[1], "start": int(r[2]), "ax_deg": float(r[3])} for r in rows[1:]]
    feats = np.array([[float(x) for x in r[4:]] for r in rows[1:]])
    return meta, feats


def _summary(rows: list[dict]) -> dict:
    ade = np.array([r["ade_mm"] for r in rows])
    fd = np.array([r["fd_mm"] for r in rows])
    return {
        "mean_ade_mm": float(ade.mean()),
        "median_ade_mm": float(np.median(ade)),
        "mean_fd_mm": float(fd.mean()),
        "median_fd_mm": float(np.median(fd)),
    }


def evaluate_models(models: dict, sweeps: list[Sweep]) -> tuple[dict, dict]:
    """Metrics for each ``name -> (g_net, r_net)`` plus a zero-motion reference, and predicted poses."""
    if not sweeps:
        raise InvalidArgument("no sweeps to evaluate")
    out = {"n_sweeps": len(sweeps), "models": {}}
    predicted = {}
    named = {"zero_motion": None, **models}
    for name, nets in named.items():
        rows = []
        for sw in sweeps:
            if nets is None:
                poses = np.repeat(np.eye(4)[None], sw.n_frames, axis=0)
            else:
                steps = reconstruct.predict_per_step(nets[0], nets[1], sw.frames, nets[0].cfg.n_frames)
                poses = reconstruct.chain_trajectory(np.eye(4), steps)
            predicted.setdefault(sw.sweep_id, {})[name] = poses
            rows.append({
                "sweep_id": sw.sweep_id,
                "ade_mm": average_distance_error(poses, sw.gt_poses, sw.geometry),
                "fd_mm": final_drift(poses, sw.gt_poses, sw.geometry),
            })
        out["models"][name] = {"per_sweep": rows, **_summary(rows)}
    return out, predicted

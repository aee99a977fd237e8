"""Labelled N-frame windows, label standardisation and motion-based pairing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import geometry as geo
from .errors import InvalidArgument, InvalidState
from .simulate import Sweep

STD_FLOOR = 1e-6


@dataclass
class Sample:
    domain: str
    sweep_id: str
    start: int
    frames: np.ndarray  # (N, H, W) float32, a view into the sweep
    label: np.ndarray  # (6,) DOF from first to last frame of the window

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


def window_label(gt_poses: np.ndarray, start: int, n: int) -> np.ndarray:
    return geo.pose_to_dof(geo.relative_pose(gt_poses[start], gt_poses[start + n - 1]))


def extract_samples(sweep: Sweep, n: int, stride: int = 1) -> list[Sample]:
    if n < 2 or stride < 1:
        raise InvalidArgument("need N >= 2 and stride >= 1")
    T = sweep.n_frames
    if T < n:
        raise InvalidArgument(f"sweep {sweep.sweep_id} has {T} frames, fewer than N={n}")
    starts = range(0, T - n + 1, stride)
    labels = geo.pose_to_dof(
        geo.relative_pose(sweep.gt_poses[list(starts)], sweep.gt_poses[[s + n - 1 for s in starts]])
    )
    return [
        Sample(sweep.domain, sweep.sweep_id, s, sweep.frames[s : s + n], labels[i])
        for i, s in enumerate(starts)
    ]


def extract_all(sweeps: Sequence[Sweep], n: int, stride: int = 1) -> list[Sample]:
    return [s for sw in sweeps for s in extract_samples(sw, n, stride)]


def labels_of(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.float64).reshape(-1, 6)


@dataclass(frozen=True)
class DofStats:
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def destandardize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "DofStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    @classmethod
    def identity(cls) -> "DofStats":
        return cls(np.zeros(6), np.ones(6))


def standardize_stats(samples: Sequence[Sample]) -> DofStats:
    """Per-component mean and population std of the labels, std floored."""
    if len(samples) == 0:
        raise InvalidArgument("cannot compute statistics of an empty sample list")
    y = labels_of(samples)
    return DofStats(y.mean(axis=0), np.maximum(y.std(axis=0), STD_FLOOR))


class SamplePool:
    """Source-domain windows searchable by motion label."""

    def __init__(self, samples: Sequence[Sample], stats: DofStats):
        self.samples = tuple(samples)
        self.stats = stats
        self.z = stats.standardize(labels_of(self.samples))
        self.z.setflags(write=False)

    def __len__(self) -> int:
        return len(self.samples)

    def nearest_index(self, y_t) -> int:
        if not self.samples:
            raise InvalidState("sample pool is empty")
        q = self.stats.standardize(y_t)
        d2 = np.sum((self.z - q) ** 2, axis=1)
        return int(np.argmin(d2))  # argmin keeps the lowest index on ties


def nearest_source_sample(pool: SamplePool, y_t, stats: DofStats | None = None) -> Sample:
    """The pool sample whose standardised label is closest to ``y_t``.

    ``stats`` defaults to the statistics the pool was built with.
    """
    if stats is not None and stats is not pool.stats:
        pool = SamplePool(pool.samples, stats)
    return pool.samples[pool.nearest_index(y_t)]


def batch_iter(samples: Sequence, k: int, epoch_seed) -> Iterator[list]:
    """Yield a seeded permutation of ``samples`` in batches of ``k``; last batch may be short."""
    if k < 1:
        raise InvalidArgument("batch size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(len(samples))
    for i in range(0, len(order), k):
        yield [samples[j] for j in order[i : i + k]]


def split_by_sweep(samples: Sequence[Sample], val_fraction: float, seed: int):
    """Split samples into (train, val) by whole sweeps."""
    ids = sorted({s.sweep_id for s in samples})
    n_val = int(round(len(ids) * val_fraction))
    if val_fraction > 0 and n_val == 0 and len(ids) > 1:
        n_val = 1
    if n_val >= len(ids):
        n_val = len(ids) - 1
    perm = np.random.default_rng(seed).permutation(len(ids))
    val_ids = {ids[i] for i in perm[:n_val]}
    train = [s for s in samples if s.sweep_id not in val_ids]
    val = [s for s in samples if s.sweep_id in val_ids]
    return train, val

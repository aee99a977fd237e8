"""Convolutional feature extractor, linear DOF regressor and their losses.

The extractor treats the N frames of a window as input channels, applies
stride-2 conv + ReLU stages, global-average-pools and projects linearly to a
feature vector. The regressor is a single affine layer from features to six
standardised DOF values.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataset import DofStats
from .errors import InvalidArgument

CHECKPOINT_MAGIC = b"SWPCKPT1"
CHECKPOINT_VERSION = 1
ROLE_SOURCE = "G_s+R_s"
ROLE_TARGET = "G_t"
ROLES = (ROLE_SOURCE, ROLE_TARGET, "G+R")


@dataclass(frozen=True)
class NetworkConfig:
    n_frames: int = 5
    height: int = 64
    width: int = 64
    channels: tuple = (16, 32, 64, 64)
    kernel: int = 3
    feature_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 6:
            raise InvalidArgument("feature width must be at least 6")
        if self.n_frames < 2:
            raise InvalidArgument("need at least 2 input frames")
        div = 2 ** len(self.channels)
        if self.height % div or self.width % div:
            raise InvalidArgument(f"frame size must be divisible by {div}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgument("kernel size must be a positive odd number")

    @property
    def stages(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d.pop("stages", None)
        if "channels" in d:
            d["channels"] = tuple(int(c) for c in d["channels"])
        return cls(**d)


class FeatureExtractor(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        layers = []
        c_in = cfg.n_frames
        for c_out in cfg.channels:
            layers += [nn.Conv2d(c_in, c_out, cfg.kernel, stride=2, padding=cfg.kernel // 2), nn.ReLU()]
            c_in = c_out
        self.convs = nn.Sequential(*layers)
        self.proj = nn.Linear(c_in, cfg.feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.convs(x).mean(dim=(2, 3)))


class Network(nn.Module):
    """Feature extractor ``g`` plus regressor ``r`` and the label stats they were trained with."""

    def __init__(self, cfg: NetworkConfig, stats: DofStats | None = None):
        super().__init__()
        self.cfg = cfg
        self.g = FeatureExtractor(cfg)
        self.r = nn.Linear(cfg.feature_dim, 6)
        self.stats = stats if stats is not None else DofStats.identity()

    def forward(self, x):
        return self.r(self.g(x))

    def segments(self) -> dict[str, torch.Tensor]:
        return dict(self.named_parameters())

    def g_parameters(self):
        return list(self.g.parameters())


def init_network(cfg: NetworkConfig, stats: DofStats | None = None) -> Network:
    """He-normal weights from a seeded generator, zero biases."""
    net = Network(cfg, stats)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in = int(np.prod(p.shape[1:]))
                p.copy_(torch.randn(p.shape, generator=gen) * np.sqrt(2.0 / fan_in))
    return net


def _as_batch(net: Network, x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=next(net.parameters()).dtype)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    cfg = net.cfg
    if x.ndim != 4 or tuple(x.shape[1:]) != (cfg.n_frames, cfg.height, cfg.width):
        raise InvalidArgument(
            f"expected input (B, {cfg.n_frames}, {cfg.height}, {cfg.width}), got {tuple(x.shape)}"
        )
    return x


def extract_features(net: Network, x) -> torch.Tensor:
    """Features for one window ``(N, H, W)`` -> ``(F,)`` or a batch ``(B, N, H, W)`` -> ``(B, F)``."""
    single = torch.as_tensor(x).ndim == 3
    v = net.g(_as_batch(net, x))
    return v[0] if single else v


def regress_dof(net: Network, v) -> torch.Tensor:
    """Standardised DOF prediction from feature(s); destandardise separately."""
    v = torch.as_tensor(v, dtype=net.r.weight.dtype)
    if v.shape[-1] != net.cfg.feature_dim:
        raise InvalidArgument(f"feature width {v.shape[-1]} != {net.cfg.feature_dim}")
    return net.r(v)


def mse_loss(pred: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Mean over batch and components of the squared difference."""
    label = torch.as_tensor(label, dtype=pred.dtype)
    if pred.shape != label.shape or pred.shape[-1] != 6:
        raise InvalidArgument(f"shape mismatch: pred {tuple(pred.shape)} vs label {tuple(label.shape)}")
    return torch.mean((pred - label) ** 2)


def pair_distances(v_s: torch.Tensor, v_t: torch.Tensor) -> torch.Tensor:
    """Per-pair Euclidean distances with ``v_s`` held constant.

    The gradient at a zero difference is defined as zero.
    """
    if v_s.ndim == 1:
        v_s, v_t = v_s[None], v_t[None]
    if v_s.shape != v_t.shape:
        raise InvalidArgument(f"feature shapes differ: {tuple(v_s.shape)} vs {tuple(v_t.shape)}")
    if v_s.shape[0] == 0:
        raise InvalidArgument("need at least one pair")
    sq = torch.sum((v_s.detach() - v_t) ** 2, dim=-1)
    pos = sq > 0
    safe = torch.where(pos, sq, torch.ones_like(sq))
    return torch.where(pos, torch.sqrt(safe), torch.zeros_like(sq))


def discrepancy_loss(v_s, v_t) -> torch.Tensor:
    """Mean over pairs of the (unsquared) L2 distance between paired features."""
    v_s = torch.as_tensor(v_s)
    v_t = torch.as_tensor(v_t)
    return pair_distances(v_s, v_t).mean()


# ---------------------------------------------------------------------------
# checkpoint files: magic, u32 header length, JSON header, little-endian f32 payload


def _segment_order(names):
    return sorted(names)


def params_checksum(net: Network, prefix: str = "") -> str:
    h = hashlib.sha256()
    for name, p in sorted(net.state_dict().items()):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    net: Network
    role: str
    optimizer: dict | None = None  # {"step": int, "exp_avg": {...}, "exp_avg_sq": {...}}
    extra: dict = field(default_factory=dict)


def _encode(ckpt: Checkpoint) -> bytes:
    if ckpt.role not in ROLES:
        raise InvalidArgument(f"unknown checkpoint role {ckpt.role!r}")
    tensors = {}
    for name, p in ckpt.net.named_parameters():
        if ckpt.role == ROLE_TARGET and not name.startswith("g."):
            continue
        tensors[name] = p.detach().cpu().numpy()
    opt_meta = None
    if ckpt.optimizer is not None:
        opt_meta = {"step": int(ckpt.optimizer["step"])}
        for kind in ("exp_avg", "exp_avg_sq"):
            for name, arr in ckpt.optimizer[kind].items():
                tensors[f"opt.{kind}.{name}"] = np.asarray(arr)

    segments, chunks, offset = [], [], 0
    for name in _segment_order(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        segments.append({"name": name, "shape": list(tensors[name].shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "role": ckpt.role,
        "network": ckpt.net.cfg.to_dict(),
        "stats": ckpt.net.stats.to_dict(),
        "segments": segments,
        "optimizer": opt_meta,
        "extra": ckpt.extra,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_encode(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InvalidArgument(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", raw[pos : pos + 4])
    header = json.loads(raw[pos + 4 : pos + 4 + hlen])
    payload = raw[pos + 4 + hlen :]
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version {header.get('format_version')}")

    arrays = {}
    for seg in header["segments"]:
        buf = payload[seg["offset"] : seg["offset"] + seg["nbytes"]]
        arrays[seg["name"]] = np.frombuffer(buf, dtype="<f4").reshape(seg["shape"]).copy()

    net = Network(NetworkConfig.from_dict(header["network"]), DofStats.from_dict(header["stats"]))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name in arrays:
                p.copy_(torch.from_numpy(arrays[name]))
            elif header["role"] == ROLE_TARGET:
                p.zero_()  # extractor-only file: the regressor comes from elsewhere
            else:
                raise InvalidArgument(f"{path}: missing parameter segment {name}")
    optimizer = None
    if header.get("optimizer"):
        optimizer = {"step": header["optimizer"]["step"], "exp_avg": {}, "exp_avg_sq": {}}
        for name, arr in arrays.items():
            for kind in ("exp_avg", "exp_avg_sq"):
                tag = f"opt.{kind}."
                if name.startswith(tag):
                    optimizer[kind][name[len(tag):]] = arr
    return Checkpoint(net=net, role=header["role"], optimizer=optimizer, extra=header.get("extra", {}))


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

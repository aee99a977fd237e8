"""Source training, feature-discrepancy adaptation and baseline training loops."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .dataset import (
    DofStats,
    Sample,
    SamplePool,
    batch_iter,
    labels_of,
    split_by_sweep,
    standardize_stats,
)
from .errors import InvalidArgument
from .model import (
    ROLE_SOURCE,
    ROLE_TARGET,
    Checkpoint,
    Network,
    NetworkConfig,
    init_network,
    mse_loss,
    pair_distances,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 24
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    n_frames: int = 5
    val_fraction: float = 0.2
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch size must be >= 1")
        if not self.lr > 0:
            raise InvalidArgument("step size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidArgument("validation fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class RunLog:
    config: dict
    records: list = field(default_factory=list)

    def add(self, **rec) -> None:
        self.records.append(rec)

    def losses(self, key: str = "train_loss") -> list[float]:
        return [r[key] for r in self.records]

    def to_jsonl(self, include_time: bool = True) -> str:
        lines = []
        for r in self.records:
            if not include_time:
                r = {k: v for k, v in r.items() if k != "wall_time_s"}
            lines.append(json.dumps(r, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log: RunLog


def _epoch_seed(seed: int, epoch: int) -> list[int]:
    return [int(seed), int(epoch)]


def stack_frames(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.frames for s in samples]).astype(np.float32))


def _targets(samples: Sequence[Sample], stats: DofStats) -> torch.Tensor:
    return torch.from_numpy(stats.standardize(labels_of(samples)).astype(np.float32))


def _make_adam(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.lr, betas=tuple(cfg.betas), eps=cfg.eps)


def optimizer_state(opt: torch.optim.Adam, net: Network) -> dict | None:
    names = {id(p): n for n, p in net.named_parameters()}
    out = {"step": 0, "exp_avg": {}, "exp_avg_sq": {}}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            out["step"] = int(st["step"])
            out["exp_avg"][names[id(p)]] = st["exp_avg"].detach().numpy().copy()
            out["exp_avg_sq"][names[id(p)]] = st["exp_avg_sq"].detach().numpy().copy()
    return out if out["exp_avg"] else None


def restore_optimizer(opt: torch.optim.Adam, net: Network, state: dict | None) -> None:
    if not state:
        return
    params = dict(net.named_parameters())
    for name, m in state["exp_avg"].items():
        p = params[name]
        opt.state[p] = {
            "step": torch.tensor(float(state["step"])),
            "exp_avg": torch.from_numpy(np.array(m, dtype=np.float32)),
            "exp_avg_sq": torch.from_numpy(np.array(state["exp_avg_sq"][name], dtype=np.float32)),
        }


def evaluate_mse(net: Network, samples: Sequence[Sample], batch: int = 64) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i : i + batch]
            pred = net(stack_frames(chunk))
            total += float(mse_loss(pred, _targets(chunk, net.stats))) * len(chunk)
    return total / len(samples)


def _fit(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None,
    role: str,
    resume: Checkpoint | None = None,
    stats: DofStats | None = None,
) -> TrainResult:
    if len(samples) == 0:
        raise InvalidArgument("training set is empty")
    train, val = split_by_sweep(samples, cfg.val_fraction, cfg.seed)

    if resume is not None:
        net = copy.deepcopy(resume.net)
        start_epoch = int(resume.extra.get("epoch", 0))
        best_score = float(resume.extra.get("best_score", np.inf))
    else:
        if net_cfg is None:
            h, w = samples[0].frames.shape[1:]
            net_cfg = NetworkConfig(n_frames=cfg.n_frames, height=h, width=w, seed=cfg.seed)
        net = init_network(net_cfg, stats if stats is not None else standardize_stats(train))
        start_epoch = 0
        best_score = np.inf
    if samples[0].n_frames != net.cfg.n_frames:
        raise InvalidArgument(f"samples have {samples[0].n_frames} frames, network expects {net.cfg.n_frames}")

    opt = _make_adam(net.parameters(), cfg)
    if resume is not None:
        restore_optimizer(opt, net, resume.optimizer)

    runlog = RunLog(config={"train": cfg.to_dict(), "network": net.cfg.to_dict(), "role": role,
                            "n_train": len(train), "n_val": len(val)})
    best_state = copy.deepcopy(net.state_dict())
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for batch in batch_iter(train, cfg.batch_size, _epoch_seed(cfg.seed, epoch)):
            x = stack_frames(batch)
            y = _targets(batch, net.stats)
            opt.zero_grad(set_to_none=True)
            loss = mse_loss(net(x), y)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        train_loss = total / count
        val_loss = evaluate_mse(net, val) if val else float("nan")
        score = val_loss if val else train_loss
        if score < best_score:
            best_score = score
            best_state = copy.deepcopy(net.state_dict())
        runlog.add(epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                   wall_time_s=time.perf_counter() - t0, seed=cfg.seed)
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)

    last = Checkpoint(net=net, role=role, optimizer=optimizer_state(opt, net),
                      extra={"epoch": cfg.epochs, "best_score": float(best_score)})
    best_net = copy.deepcopy(net)
    best_net.load_state_dict(best_state)
    best = Checkpoint(net=best_net, role=role, extra={"epoch": cfg.epochs, "best_score": float(best_score)})
    return TrainResult(best=best, last=last, log=runlog)


def train_source(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Jointly fit extractor and regressor on source windows with an MSE loss.

    Validation is split by whole sweeps; ``result.best`` keeps the parameters
    with the lowest validation loss and ``result.last`` the final ones (with
    optimiser state, so training can be resumed).
    """
    return _fit(samples, cfg, net_cfg, ROLE_SOURCE, resume)


def train_baseline(
    mode: str,
    source: Sequence[Sample],
    target: Sequence[Sample],
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
) -> TrainResult:
    """Comparison models: ``source``, ``target`` (target only) or ``mixed``."""
    if mode in ("target", "target_only"):
        if len(target) == 0:
            raise InvalidArgument("target-only baseline needs target samples")
        return _fit(target, cfg, net_cfg, "G+R")
    if mode == "mixed":
        if len(source) == 0 or len(target) == 0:
            raise InvalidArgument("mixed baseline needs both source and target samples")
        return _fit(list(source) + list(target), cfg, net_cfg, "G+R")
    if mode == "source":
        return train_source(source, cfg, net_cfg)
    raise InvalidArgument(f"unknown baseline mode {mode!r}")


def compute_pairing(pool: SamplePool, target: Sequence[Sample]) -> list[int]:
    return [pool.nearest_index(s.label) for s in target]


@dataclass
class AdaptResult:
    checkpoint: Checkpoint
    log: RunLog
    pairing: list


def adapt_target(
    source_ckpt: Checkpoint,
    target: Sequence[Sample],
    pool: SamplePool,
    cfg: TrainConfig,
    pairing: Sequence[int] | None = None,
) -> AdaptResult:
    """Train a target extractor to reproduce frozen source features of motion-matched windows.

    Every target window is paired with the source window of closest
    standardised motion; only the target extractor is updated, by minimising
    the mean L2 distance between the paired feature vectors. Target labels are
    read only to form the pairing, and not at all when ``pairing`` (one pool
    index per target sample) is supplied.
    """
    if source_ckpt.role != ROLE_SOURCE:
        raise InvalidArgument(f"adaptation needs a {ROLE_SOURCE} checkpoint, got {source_ckpt.role}")
    if len(target) == 0:
        raise InvalidArgument("adaptation needs target samples")
    if len(pool) == 0:
        raise InvalidArgument("adaptation needs a non-empty source pool")
    if pairing is not None and len(pairing) != len(target):
        raise InvalidArgument("pairing must hold one pool index per target sample")

    g_s = source_ckpt.net.g  # read-only; never handed to the optimiser
    tgt = copy.deepcopy(source_ckpt.net)
    for p in tgt.r.parameters():
        p.requires_grad_(False)
    opt = _make_adam(tgt.g.parameters(), cfg)

    feature_cache: dict[int, torch.Tensor] = {}

    def source_features(idx: list[int]) -> torch.Tensor:
        missing = sorted({i for i in idx if i not in feature_cache})
        if missing:
            with torch.no_grad():
                v = g_s(stack_frames([pool.samples[i] for i in missing]))
            for i, row in zip(missing, v):
                feature_cache[i] = row
        return torch.stack([feature_cache[i] for i in idx])

    runlog = RunLog(config={"train": cfg.to_dict(), "network": tgt.cfg.to_dict(), "role": ROLE_TARGET,
                            "n_target": len(target), "n_pool": len(pool)})
    used_pairs = [None] * len(target)
    order = list(range(len(target)))
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for batch in batch_iter(order, cfg.batch_size, _epoch_seed(cfg.seed, epoch)):
            if pairing is None:
                idx = [pool.nearest_index(target[b].label) for b in batch]
            else:
                idx = [int(pairing[b]) for b in batch]
            for b, i in zip(batch, idx):
                used_pairs[b] = i
            v_s = source_features(idx)
            v_t = tgt.g(stack_frames([target[b] for b in batch]))
            d = pair_distances(v_s, v_t)
            loss = d.mean()
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(d.detach().sum())
            count += len(batch)
        runlog.add(epoch=epoch, disc_loss=total / count, wall_time_s=time.perf_counter() - t0, seed=cfg.seed)
        log.info("adapt epoch %d L_D %.4f", epoch, total / count)

    ckpt = Checkpoint(net=tgt, role=ROLE_TARGET, extra={"epoch": cfg.epochs})
    return AdaptResult(checkpoint=ckpt, log=runlog, pairing=used_pairs)

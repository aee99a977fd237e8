"""Synthetic freehand sweeps over a speckled ellipsoid phantom.

Two transducer "domains" differ in both appearance (imaging mask, depth gain,
contrast, noise) and motion pattern (rocking fan sweeps versus sliding
linear sweeps), which gives a controllable domain gap with exact ground
truth poses.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import geometry as geo
from .errors import DegenerateRotation, GenerationError, InvalidArgument
from .geometry import FrameGeometry

SWEEP_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Ellipsoid:
    center_mm: tuple
    semi_axes_mm: tuple
    intensity: float

    def contains(self, x, y, z):
        cx, cy, cz = self.center_mm
        a, b, c = self.semi_axes_mm
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0

    @property
    def volume(self) -> float:
        a, b, c = self.semi_axes_mm
        return 4.0 / 3.0 * np.pi * a * b * c


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (96, 72, 96)
    voxel_mm: float = 0.5
    background: float = 0.4
    ellipsoids: tuple = ()
    speckle: float = 0.5
    seed: int = 0
    # world position of voxel (0, 0, 0); None centres x/z and puts y just above 0
    origin_mm: tuple | None = None

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise InvalidArgument("phantom needs at least 8 voxels per axis")
        if not 0.0 <= self.background <= 1.0:
            raise InvalidArgument("background intensity must lie in [0, 1]")
        if not 0.0 <= self.speckle < 1.0:
            raise InvalidArgument("speckle strength must lie in [0, 1)")
        for e in self.ellipsoids:
            if not 0.0 <= e.intensity <= 1.0:
                raise InvalidArgument("ellipsoid intensity must lie in [0, 1]")

    def resolved_origin(self) -> np.ndarray:
        if self.origin_mm is not None:
            return np.asarray(self.origin_mm, dtype=np.float64)
        nx, _, nz = self.dims
        v = self.voxel_mm
        return np.array([-(nx - 1) / 2.0 * v, -4.0 * v, -(nz - 1) / 2.0 * v])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["origin_mm"] = None if self.origin_mm is None else list(self.origin_mm)
        d["ellipsoids"] = [
            {
                "center_mm": list(e.center_mm),
                "semi_axes_mm": list(e.semi_axes_mm),
                "intensity": e.intensity,
            }
            for e in self.ellipsoids
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        ells = tuple(
            Ellipsoid(tuple(e["center_mm"]), tuple(e["semi_axes_mm"]), float(e["intensity"]))
            for e in d.get("ellipsoids", ())
        )
        origin = d.get("origin_mm")
        return cls(
            dims=tuple(int(x) for x in d["dims"]),
            voxel_mm=float(d["voxel_mm"]),
            background=float(d["background"]),
            ellipsoids=ells,
            speckle=float(d["speckle"]),
            seed=int(d["seed"]),
            origin_mm=None if origin is None else tuple(origin),
        )


@dataclass
class Phantom:
    """A scalar field on a regular grid, indexed ``data[ix, iy, iz]``."""

    data: np.ndarray
    origin_mm: np.ndarray
    voxel_mm: float

    def sample(self, pts) -> np.ndarray:
        return sample_trilinear(self.data, self.origin_mm, self.voxel_mm, pts)

    def voxel_centers(self) -> np.ndarray:
        axes = [self.origin_mm[i] + np.arange(n) * self.voxel_mm for i, n in enumerate(self.data.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def build_phantom(spec: PhantomSpec) -> Phantom:
    origin = spec.resolved_origin()
    nx, ny, nz = spec.dims
    v = spec.voxel_mm
    x = (origin[0] + np.arange(nx) * v)[:, None, None]
    y = (origin[1] + np.arange(ny) * v)[None, :, None]
    z = (origin[2] + np.arange(nz) * v)[None, None, :]

    data = np.full(spec.dims, spec.background, dtype=np.float64)
    # paint largest first so the innermost (smallest) containing ellipsoid wins
    for e in sorted(spec.ellipsoids, key=lambda e: -e.volume):
        data[np.broadcast_to(e.contains(x, y, z), spec.dims)] = e.intensity
    if spec.speckle > 0:
        eta = np.random.default_rng(spec.seed).standard_normal(spec.dims)
        data *= 1.0 + spec.speckle * eta
    np.clip(data, 0.0, 1.0, out=data)
    return Phantom(data=data, origin_mm=origin, voxel_mm=float(v))


def sample_trilinear(volume: np.ndarray, origin, voxel_mm: float, pts) -> np.ndarray:
    """Trilinear lookup of world points ``(..., 3)``; points outside the grid give 0."""
    pts = np.asarray(pts, dtype=np.float64)
    shape = pts.shape[:-1]
    f = (pts.reshape(-1, 3) - np.asarray(origin)) / voxel_mm
    dims = np.asarray(volume.shape)
    inside = np.all((f >= 0.0) & (f <= dims - 1), axis=1)
    out = np.zeros(f.shape[0])
    fi = f[inside]
    i0 = np.minimum(np.floor(fi).astype(np.int64), dims - 2)
    t = fi - i0
    acc = np.zeros(fi.shape[0])
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1.0 - t[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1.0 - t[:, 2]
                acc += wx * wy * wz * volume[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    out[inside] = acc
    return out.reshape(shape)


@dataclass(frozen=True)
class TransducerProfile:
    id: str
    geometry: FrameGeometry
    mask_kind: str = "fan"  # "fan" or "rect"
    fan_width_deg: float = 60.0
    depth_gain: float = 0.0
    gamma: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        if self.mask_kind not in ("fan", "rect"):
            raise InvalidArgument(f"unknown mask kind {self.mask_kind!r}")
        if self.mask_kind == "fan" and not 10.0 < self.fan_width_deg <= 180.0:
            raise InvalidArgument("fan width must lie in (10, 180] degrees")
        if not 0.2 < self.gamma < 5.0:
            raise InvalidArgument("gamma must lie in (0.2, 5)")
        if self.depth_gain < 0 or self.noise < 0:
            raise InvalidArgument("depth gain and noise must be non-negative")

    def mask(self) -> np.ndarray:
        """Boolean ``(H, W)`` imaging-field mask."""
        pts = geo.pixel_local_points(self.geometry)
        if self.mask_kind == "rect":
            return np.ones(pts.shape[:2], dtype=bool)
        ang = np.degrees(np.abs(np.arctan2(pts[..., 0], pts[..., 1])))
        return ang <= self.fan_width_deg / 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransducerProfile":
        d = dict(d)
        d["geometry"] = FrameGeometry.from_dict(d["geometry"])
        return cls(**d)


def _frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def render_frame(phantom: Phantom, pose, profile: TransducerProfile, frame_seed) -> np.ndarray:
    """Render one ``(H, W)`` float32 frame at ``pose`` (frame -> phantom world).

    ``frame_seed`` is an int or an ``(seed, frame_index)`` pair.
    """
    g = profile.geometry
    local = geo.pixel_local_points(g)
    world = geo.transform_points(pose, local)
    values = phantom.sample(world)

    f = (world - phantom.origin_mm) / phantom.voxel_mm
    inside = np.all((f >= 0.0) & (f <= np.asarray(phantom.data.shape) - 1), axis=-1)

    depth = local[..., 1]
    img = values / (1.0 + profile.depth_gain * depth)
    img = np.power(np.clip(img, 0.0, None), profile.gamma)
    if profile.noise > 0:
        seed, index = frame_seed if isinstance(frame_seed, (tuple, list)) else (frame_seed, 0)
        img = img + profile.noise * _frame_rng(seed, index).standard_normal(img.shape)
    img = np.clip(img, 0.0, 1.0)
    img[~(inside & profile.mask())] = 0.0
    return img.astype(np.float32)


@dataclass(frozen=True)
class TrajectoryModel:
    """Nominal sweep motion plus per-step Gaussian jitter.

    ``fan_sweep`` rocks ``total`` degrees about the frame-local x axis through
    the transducer head; ``linear_sweep`` slides ``total`` mm along
    ``direction``. ``secondary`` adds the other kind of motion (mm of slide
    for a fan sweep, degrees of rocking for a linear sweep), default none.
    ``drift`` is an extra constant per-step DOF added to the nominal motion.
    ``speed_var`` modulates the hand speed smoothly along the sweep: the
    nominal step is scaled by ``1 + speed_var * sin(...)`` with a seeded phase
    and period, renormalised so the totals still hold. ``jitter_corr`` makes
    the jitter an AR(1) process (0 gives white jitter).
    """

    kind: str = "fan_sweep"
    total: float = 30.0
    n_frames: int = 60
    direction: tuple = (0.0, 0.0, 1.0)
    secondary: float = 0.0
    drift: tuple = (0.0,) * 6
    speed_var: float = 0.0
    jitter_std: tuple = (0.0,) * 6
    jitter_corr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fan_sweep", "linear_sweep"):
            raise InvalidArgument(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 3:
            raise InvalidArgument("trajectory needs at least 3 frames")
        if len(self.jitter_std) != 6 or min(self.jitter_std) < 0:
            raise InvalidArgument("jitter_std needs 6 non-negative entries")
        if not np.isclose(np.linalg.norm(self.direction), 1.0):
            raise InvalidArgument("direction must be a unit vector")
        if not 0.0 <= self.jitter_corr < 1.0:
            raise InvalidArgument("jitter_corr must lie in [0, 1)")
        if len(self.drift) != 6:
            raise InvalidArgument("drift needs 6 entries")
        if not 0.0 <= self.speed_var < 1.0:
            raise InvalidArgument("speed_var must lie in [0, 1)")

    def nominal_step(self) -> np.ndarray:
        n = self.n_frames - 1
        rot, slide = (self.total, self.secondary) if self.kind == "fan_sweep" else (self.secondary, self.total)
        step = np.zeros(6)
        step[:3] = np.asarray(self.direction, dtype=np.float64) * (slide / n)
        step[3] = rot / n
        return step + np.asarray(self.drift, dtype=np.float64)

    def start_pose(self) -> np.ndarray:
        """Placement of frame 0 in phantom coordinates, centring the sweep."""
        d = -0.5 * self.nominal_step() * (self.n_frames - 1)
        return geo.dof_to_pose(d)

    def steps(self) -> np.ndarray:
        """The ``(T-1, 6)`` per-step DOF vectors, deterministic given seed."""
        rng = np.random.default_rng(self.seed)
        n = self.n_frames - 1
        white = rng.standard_normal((n, 6))
        rho = self.jitter_corr
        if rho > 0:
            # stationary AR(1): unit marginal variance, lag-1 correlation rho
            innov = np.sqrt(1.0 - rho * rho)
            for k in range(1, len(white)):
                white[k] = rho * white[k - 1] + innov * white[k]
        cycles, phase = rng.uniform(0.75, 2.0), rng.uniform(0.0, 2 * np.pi)
        speed = 1.0 + self.speed_var * np.sin(2 * np.pi * cycles * np.arange(n) / n + phase)
        speed /= speed.mean()
        return speed[:, None] * self.nominal_step() + white * np.asarray(self.jitter_std)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = list(self.direction)
        d["jitter_std"] = list(self.jitter_std)
        d["drift"] = list(self.drift)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryModel":
        d = dict(d)
        d["direction"] = tuple(d.get("direction", (0.0, 0.0, 1.0)))
        d["drift"] = tuple(d.get("drift", (0.0,) * 6))
        d["jitter_std"] = tuple(d.get("jitter_std", (0.0,) * 6))
        return cls(**d)


@dataclass
class Sweep:
    """A simulated scan: frames, aligned ground-truth poses and provenance.

    ``origin_pose`` maps the aligned frame of reference (frame 0 = identity)
    back into phantom coordinates.
    """

    sweep_id: str
    domain: str
    profile: TransducerProfile
    frames: np.ndarray
    gt_poses: np.ndarray
    origin_pose: np.ndarray = field(default_factory=geo.identity)
    meta: dict = field(default_factory=dict)

    @property
    def geometry(self) -> FrameGeometry:
        return self.profile.geometry

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def step_dofs(self) -> np.ndarray:
        return geo.pose_to_dof(geo.relative_pose(self.gt_poses[:-1], self.gt_poses[1:]))


def generate_sweep(
    phantom: Phantom,
    traj: TrajectoryModel,
    profile: TransducerProfile,
    seed: int,
    sweep_id: str = "sweep",
    domain: str = "source",
) -> Sweep:
    steps = traj.steps()
    raw = np.empty((traj.n_frames, 4, 4))
    raw[0] = traj.start_pose()
    for i, step in enumerate(steps):
        raw[i + 1] = raw[i] @ geo.dof_to_pose(step)
    gt = geo.align_trajectory(raw)
    try:
        geo.pose_to_dof(gt)
        geo.pose_to_dof(geo.relative_pose(gt[:-1], gt[1:]))
    except DegenerateRotation as exc:
        raise GenerationError(f"trajectory for {sweep_id} hits the gimbal guard") from exc

    frames = np.stack([render_frame(phantom, p, profile, (seed, i)) for i, p in enumerate(raw)])
    return Sweep(
        sweep_id=sweep_id,
        domain=domain,
        profile=profile,
        frames=frames,
        gt_poses=gt,
        origin_pose=raw[0].copy(),
        meta={"seed": int(seed), "trajectory": traj.to_dict()},
    )


# ---------------------------------------------------------------------------
# sweep sets with per-sweep randomised anatomy and motion


@dataclass
class DomainConfig:
    profile: TransducerProfile
    kind: str
    total_range: tuple
    secondary_range: tuple
    jitter_std: tuple
    jitter_corr: float = 0.0
    direction: tuple = (0.0, 0.0, 1.0)
    drift_range: tuple = (0.0,) * 6  # per-step drift drawn uniformly in [-r, r]
    speed_var: float = 0.0

    def to_dict(self) -> dict:
        return {
            "profile": self.profile.to_dict(),
            "kind": self.kind,
            "total_range": list(self.total_range),
            "secondary_range": list(self.secondary_range),
            "jitter_std": list(self.jitter_std),
            "jitter_corr": self.jitter_corr,
            "direction": list(self.direction),
            "drift_range": list(self.drift_range),
            "speed_var": self.speed_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainConfig":
        return cls(
            profile=TransducerProfile.from_dict(d["profile"]),
            kind=d["kind"],
            total_range=tuple(d["total_range"]),
            secondary_range=tuple(d["secondary_range"]),
            jitter_std=tuple(d["jitter_std"]),
            jitter_corr=float(d.get("jitter_corr", 0.0)),
            direction=tuple(d.get("direction", (0.0, 0.0, 1.0))),
            drift_range=tuple(d.get("drift_range", (0.0,) * 6)),
            speed_var=float(d.get("speed_var", 0.0)),
        )


DEFAULT_GEOMETRY = FrameGeometry(64, 64, 0.5)


def default_source_domain(g: FrameGeometry = DEFAULT_GEOMETRY) -> DomainConfig:
    """Narrow fan probe rocked about its long axis with some slide."""
    return DomainConfig(
        profile=TransducerProfile(
            "endfire-fan", g, mask_kind="fan", fan_width_deg=60.0, depth_gain=0.01, gamma=1.0, noise=0.02
        ),
        kind="fan_sweep",
        total_range=(20.0, 60.0),
        secondary_range=(0.0, 30.0),
        jitter_std=(0.0, 0.0, 0.02, 0.05, 0.0, 0.0),
        jitter_corr=0.9,
        speed_var=0.6,
    )


def default_target_domain(g: FrameGeometry = DEFAULT_GEOMETRY) -> DomainConfig:
    """Wide fan probe slid along the body with tilt wobble."""
    return DomainConfig(
        profile=TransducerProfile(
            "abdominal-wide", g, mask_kind="fan", fan_width_deg=90.0, depth_gain=0.04, gamma=0.6, noise=0.05
        ),
        kind="linear_sweep",
        total_range=(10.0, 30.0),
        secondary_range=(10.0, 40.0),
        jitter_std=(0.0, 0.0, 0.02, 0.05, 0.0, 0.0),
        jitter_corr=0.9,
        speed_var=0.6,
    )


@dataclass
class SimConfig:
    seed: int = 0
    n_frames: int = 60
    n_source: int = 50
    n_target_train: int = 9
    n_target_test: int = 3
    phantom_dims: tuple = (48, 36, 64)
    voxel_mm: float = 1.0
    speckle: float = 0.9
    n_ellipsoids: tuple = (4, 8)
    source: DomainConfig = field(default_factory=default_source_domain)
    target: DomainConfig = field(default_factory=default_target_domain)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "seed": self.seed,
            "n_frames": self.n_frames,
            "n_source": self.n_source,
            "n_target_train": self.n_target_train,
            "n_target_test": self.n_target_test,
            "phantom_dims": list(self.phantom_dims),
            "voxel_mm": self.voxel_mm,
            "speckle": self.speckle,
            "n_ellipsoids": list(self.n_ellipsoids),
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        cfg = cls()
        for key in ("seed", "n_frames", "n_source", "n_target_train", "n_target_test", "voxel_mm", "speckle"):
            if key in d:
                setattr(cfg, key, type(getattr(cfg, key))(d[key]))
        if "phantom_dims" in d:
            cfg.phantom_dims = tuple(int(x) for x in d["phantom_dims"])
        if "n_ellipsoids" in d:
            cfg.n_ellipsoids = tuple(int(x) for x in d["n_ellipsoids"])
        if "frame" in d:
            g = FrameGeometry.from_dict(d["frame"])
            cfg.source = default_source_domain(g)
            cfg.target = default_target_domain(g)
        if "source" in d:
            cfg.source = DomainConfig.from_dict(d["source"])
        if "target" in d:
            cfg.target = DomainConfig.from_dict(d["target"])
        return cfg


def random_phantom_spec(cfg: SimConfig, rng: np.random.Generator) -> PhantomSpec:
    nx, ny, nz = cfg.phantom_dims
    v = cfg.voxel_mm
    half_x, depth, half_z = (nx - 1) * v / 2, (ny - 5) * v, (nz - 1) * v / 2
    ells = [
        # a large gland-like body around mid-depth
        Ellipsoid(
            (float(rng.uniform(-3, 3)), float(rng.uniform(0.4, 0.6) * depth), float(rng.uniform(-3, 3))),
            (float(rng.uniform(0.3, 0.45) * half_x), float(rng.uniform(0.25, 0.4) * depth),
             float(rng.uniform(0.4, 0.6) * half_z)),
            float(rng.uniform(0.55, 0.8)),
        )
    ]
    for _ in range(int(rng.integers(cfg.n_ellipsoids[0], cfg.n_ellipsoids[1] + 1))):
        ells.append(
            Ellipsoid(
                (float(rng.uniform(-0.6, 0.6) * half_x), float(rng.uniform(0.1, 0.9) * depth),
                 float(rng.uniform(-0.6, 0.6) * half_z)),
                tuple(float(x) for x in rng.uniform(1.5, 6.0, size=3)),
                float(rng.uniform(0.05, 0.95)),
            )
        )
    return PhantomSpec(
        dims=tuple(cfg.phantom_dims),
        voxel_mm=v,
        background=float(rng.uniform(0.3, 0.45)),
        ellipsoids=tuple(ells),
        speckle=cfg.speckle,
        seed=int(rng.integers(2**31)),
    )


def make_sweep(cfg: SimConfig, dom: DomainConfig, domain: str, sweep_id: str, seed_seq) -> Sweep:
    rng = np.random.default_rng(seed_seq)
    spec = random_phantom_spec(cfg, rng)
    traj = TrajectoryModel(
        kind=dom.kind,
        total=float(rng.uniform(*dom.total_range)),
        n_frames=cfg.n_frames,
        direction=tuple(dom.direction),
        secondary=float(rng.uniform(*dom.secondary_range)),
        drift=tuple(float(x) for x in rng.uniform(-1.0, 1.0, 6) * np.asarray(dom.drift_range)),
        speed_var=dom.speed_var,
        jitter_std=tuple(dom.jitter_std),
        jitter_corr=dom.jitter_corr,
        seed=int(rng.integers(2**31)),
    )
    render_seed = int(rng.integers(2**31))
    sweep = generate_sweep(build_phantom(spec), traj, dom.profile, render_seed, sweep_id, domain)
    sweep.meta["phantom"] = spec.to_dict()
    return sweep


def make_sweep_sets(cfg: SimConfig) -> dict[str, list[Sweep]]:
    """Generate the ``source``, ``target_train`` and ``target_test`` splits."""
    root = np.random.SeedSequence(cfg.seed)
    src_seq, tgt_seq = root.spawn(2)
    n_tgt = cfg.n_target_train + cfg.n_target_test
    source = [
        make_sweep(cfg, cfg.source, "source", f"src_{i:03d}", s)
        for i, s in enumerate(src_seq.spawn(cfg.n_source))
    ]
    target = [
        make_sweep(cfg, cfg.target, "target", f"tgt_{i:03d}", s)
        for i, s in enumerate(tgt_seq.spawn(n_tgt))
    ]
    return {
        "source": source,
        "target_train": target[: cfg.n_target_train],
        "target_test": target[cfg.n_target_train:],
    }


def intensity_histogram(sweeps: Sequence[Sweep], bins: int = 32) -> np.ndarray:
    """Normalised histogram of all pixel intensities across ``sweeps``."""
    counts = np.zeros(bins)
    for s in sweeps:
        counts += np.histogram(s.frames, bins=bins, range=(0.0, 1.0))[0]
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# on-disk format


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_sweep(sweep: Sweep, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T, H, W = sweep.frames.shape
    meta = {
        "format_version": SWEEP_FORMAT_VERSION,
        "sweep_id": sweep.sweep_id,
        "domain": sweep.domain,
        "profile": sweep.profile.to_dict(),
        "geometry": sweep.geometry.to_dict(),
        "n_frames": T,
        "origin_pose": geo.pose_to_list(sweep.origin_pose),
        **{k: v for k, v in sweep.meta.items()},
    }
    _atomic_write_bytes(d / "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
    _atomic_write_bytes(d / "frames.f32", np.ascontiguousarray(sweep.frames, dtype="<f4").tobytes())
    poses = [geo.pose_to_list(p) for p in sweep.gt_poses]
    _atomic_write_bytes(d / "poses.json", json.dumps(poses).encode())
    return d


def load_sweep(directory) -> Sweep:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    g = FrameGeometry.from_dict(meta["geometry"])
    T = int(meta["n_frames"])
    frames = np.fromfile(d / "frames.f32", dtype="<f4").astype(np.float32)
    frames = frames.reshape(T, g.height_px, g.width_px)
    poses = np.array([geo.pose_from_list(p) for p in json.loads((d / "poses.json").read_text())])
    if poses.shape[0] != T:
        raise InvalidArgument(f"{d}: {poses.shape[0]} poses for {T} frames")
    extra = {
        k: v
        for k, v in meta.items()
        if k not in ("format_version", "sweep_id", "domain", "profile", "geometry", "n_frames", "origin_pose")
    }
    return Sweep(
        sweep_id=meta["sweep_id"],
        domain=meta["domain"],
        profile=TransducerProfile.from_dict(meta["profile"]),
        frames=frames,
        gt_poses=poses,
        origin_pose=geo.pose_from_list(meta["origin_pose"]),
        meta=extra,
    )


SPLITS = ("source", "target_train", "target_test")


def save_sweep_sets(sets: dict[str, list[Sweep]], root) -> dict[str, list[Path]]:
    """One sub-directory per split, one per sweep inside it."""
    root = Path(root)
    return {split: [save_sweep(s, root / split / s.sweep_id) for s in sweeps] for split, sweeps in sets.items()}


def load_split(root, split: str) -> list[Sweep]:
    d = Path(root) / split
    if not d.is_dir():
        raise InvalidArgument(f"no {split!r} split under {root}")
    return [load_sweep(p) for p in sorted(d.iterdir()) if (p / "meta.json").exists()]

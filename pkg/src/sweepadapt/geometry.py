"""Rigid-transform algebra and the 6-DOF motion codec.

Poses are plain ``(4, 4)`` float64 arrays (rotation block top-left,
translation in mm in the last column). DOF vectors are ``(6,)`` arrays
ordered ``(tx, ty, tz, ax, ay, az)`` with translations in mm and rotations
in degrees. The rotation part of a DOF vector is ``Rz(az) @ Ry(ay) @ Rx(ax)``.

Most functions accept stacked inputs (``(..., 6)`` or ``(..., 4, 4)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateRotation, InvalidArgument

# |sin(pitch)| at or above this is treated as gimbal lock
GIMBAL_LIMIT = 1.0 - 1e-9

DOF_NAMES = ("tx", "ty", "tz", "ax", "ay", "az")


@dataclass(frozen=True)
class FrameGeometry:
    """Pixel grid of a 2D frame with isotropic pixel spacing in mm."""

    width_px: int
    height_px: int
    spacing_mm: float

    def __post_init__(self):
        if int(self.width_px) < 2 or int(self.height_px) < 2:
            raise InvalidArgument("frame must be at least 2x2 pixels")
        if not self.spacing_mm > 0:
            raise InvalidArgument("spacing_mm must be positive")

    def to_dict(self) -> dict:
        return {
            "width_px": int(self.width_px),
            "height_px": int(self.height_px),
            "spacing_mm": float(self.spacing_mm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameGeometry":
        return cls(int(d["width_px"]), int(d["height_px"]), float(d["spacing_mm"]))


def identity() -> np.ndarray:
    return np.eye(4)


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([o, z, z, z, c, -s, z, s, c], axis=-1).reshape(a.shape + (3, 3))


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([c, z, s, z, o, z, -s, z, c], axis=-1).reshape(a.shape + (3, 3))


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([c, -s, z, s, c, z, z, z, o], axis=-1).reshape(a.shape + (3, 3))


def dof_to_pose(d) -> np.ndarray:
    """Encode DOF vector(s) as rigid transform(s)."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1:] != (6,):
        raise InvalidArgument(f"DOF vector must have 6 components, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidArgument("DOF vector has non-finite components")
    ax, ay, az = np.deg2rad(d[..., 3]), np.deg2rad(d[..., 4]), np.deg2rad(d[..., 5])
    pose = np.zeros(d.shape[:-1] + (4, 4))
    pose[..., :3, :3] = _rot_z(az) @ _rot_y(ay) @ _rot_x(ax)
    pose[..., :3, 3] = d[..., :3]
    pose[..., 3, 3] = 1.0
    return pose


def pose_to_dof(p) -> np.ndarray:
    """Decode rigid transform(s) into DOF vector(s).

    Raises DegenerateRotation when the pitch term is within the gimbal guard.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-2:] != (4, 4):
        raise InvalidArgument(f"pose must be 4x4, got shape {p.shape}")
    r = p[..., :3, :3]
    sin_pitch = -r[..., 2, 0]
    if np.any(np.abs(sin_pitch) >= GIMBAL_LIMIT):
        raise DegenerateRotation("rotation is at gimbal lock (|pitch| ~ 90 deg)")
    ay = np.arctan2(sin_pitch, np.hypot(r[..., 0, 0], r[..., 1, 0]))
    ax = np.arctan2(r[..., 2, 1], r[..., 2, 2])
    az = np.arctan2(r[..., 1, 0], r[..., 0, 0])
    out = np.empty(p.shape[:-2] + (6,))
    out[..., :3] = p[..., :3, 3]
    out[..., 3] = np.rad2deg(ax)
    out[..., 4] = np.rad2deg(ay)
    out[..., 5] = np.rad2deg(az)
    return out


def invert(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r = np.swapaxes(p[..., :3, :3], -1, -2)
    out = np.zeros_like(p)
    out[..., :3, :3] = r
    out[..., :3, 3] = -(r @ p[..., :3, 3, None])[..., 0]
    out[..., 3, 3] = 1.0
    return out


def compose(a, b) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def relative_pose(a, b) -> np.ndarray:
    """Return ``inverse(a) @ b``: pose ``b`` expressed in the frame of ``a``."""
    return invert(a) @ np.asarray(b, dtype=np.float64)


def scale_dof(d, s: float) -> np.ndarray:
    if not np.isfinite(s):
        raise InvalidArgument("scale must be finite")
    return np.asarray(d, dtype=np.float64) * float(s)


def transform_points(p, pts) -> np.ndarray:
    """Apply pose ``p`` to points of shape ``(..., 3)``."""
    p = np.asarray(p, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ p[:3, :3].T + p[:3, 3]


def pixel_local_points(g: FrameGeometry) -> np.ndarray:
    """Frame-local coordinates (mm) of every pixel, shape ``(H, W, 3)``.

    The transducer head sits at the top-edge centre; depth runs along +y and
    the frame lies in the local z = 0 plane.
    """
    u = (np.arange(g.width_px) - (g.width_px - 1) / 2.0) * g.spacing_mm
    v = np.arange(g.height_px) * g.spacing_mm
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return np.stack([uu, vv, np.zeros_like(uu)], axis=-1)


def local_corners(g: FrameGeometry) -> np.ndarray:
    half = (g.width_px - 1) / 2.0 * g.spacing_mm
    depth = (g.height_px - 1) * g.spacing_mm
    return np.array(
        [[-half, 0.0, 0.0], [half, 0.0, 0.0], [-half, depth, 0.0], [half, depth, 0.0]]
    )


def frame_corners(g: FrameGeometry, p) -> np.ndarray:
    """World positions (mm) of the four frame corners, shape ``(4, 3)``.

    Order: (0, 0), (W-1, 0), (0, H-1), (W-1, H-1) in pixel (u, v).
    """
    return transform_points(p, local_corners(g))


def align_trajectory(poses: Sequence) -> np.ndarray:
    """Re-express a trajectory so that its first frame is the identity.

    Relative transforms between any two frames are unchanged.
    """
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[0] == 0:
        raise InvalidArgument("align_trajectory needs a non-empty list of poses")
    out = invert(poses[0]) @ poses
    out[0] = np.eye(4)
    return out


def is_valid_pose(p, tol: float = 1e-8) -> bool:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (4, 4) or not np.all(np.isfinite(p)):
        return False
    r = p[:3, :3]
    return (
        np.allclose(r.T @ r, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
        and np.array_equal(p[3], [0.0, 0.0, 0.0, 1.0])
    )


def pose_to_list(p) -> list[float]:
    return [float(x) for x in np.asarray(p, dtype=np.float64).reshape(16)]


def pose_from_list(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != 16:
        raise InvalidArgument("serialized pose needs 16 values")
    return arr.reshape(4, 4)

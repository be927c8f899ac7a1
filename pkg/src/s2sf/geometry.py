"""Camera poses, quaternion interpolation, and pose embeddings.

Conventions (fixed once, used everywhere):
  - quaternions are scalar-first (w, x, y, z) unit vectors;
  - rotations are world-to-camera; the camera center in world coords is
    o = -R^T t;
  - camera frame is OpenCV-style: x right, y down, z forward;
  - pixel (row i, col j) has image-plane coordinates (u, v) = (j + 0.5, i + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidRotationError, ModeError

UNIT_TOL = 1e-6
NLERP_DOT_THRESHOLD = 1.0 - 1e-7

EMBED_MODES = ("global", "ray", "plucker")
RAY_NUM_FREQS = 15  # 15 freqs x (sin, cos) x 6 components = 180 dims


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > UNIT_TOL:
            raise InvalidRotationError(f"quaternion norm {n} is not 1 within {UNIT_TOL}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def dot(self, other: "Quaternion") -> float:
        return float(self.as_array() @ other.as_array())

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(q: np.ndarray) -> "Quaternion":
        q = np.asarray(q, dtype=np.float64)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > UNIT_TOL:
            raise InvalidRotationError(f"quaternion norm {n} is not 1 within {UNIT_TOL}")
        q = q / n
        return Quaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Quaternion":
        """Unit quaternion from a rotation matrix, canonicalized to w >= 0."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidRotationError(f"expected 3x3 matrix, got {m.shape}")
        if abs(np.linalg.det(m) - 1.0) > 1e-5 or np.abs(m @ m.T - np.eye(3)).max() > 1e-5:
            raise InvalidRotationError("matrix is not a rotation")
        # Shepperd's method: pick the largest diagonal combination for stability.
        tr = np.trace(m)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
            )
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
        if q[0] < 0:
            q = -q
        q = q / np.linalg.norm(q)
        return Quaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


@dataclass(frozen=True)
class CameraPose:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: Quaternion  # world-to-camera
    translation: np.ndarray  # (3,) world units

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def camera_center(self) -> np.ndarray:
        r = self.rotation.to_matrix()
        return -r.T @ self.translation

    def extrinsic_4x4(self) -> np.ndarray:
        m = np.eye(4, dtype=np.float64)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m


def slerp(q0: Quaternion, q1: Quaternion, tau: float) -> Quaternion:
    """Shortest-geodesic spherical interpolation between unit quaternions.

    Negates q1 when the dot product is negative (q and -q are the same
    rotation) and falls back to normalized linear interpolation when the
    endpoints are nearly identical.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    a0 = q0.as_array()
    a1 = q1.as_array()
    dot = float(a0 @ a1)
    if dot < 0:
        a1 = -a1
        dot = -dot
    if dot > NLERP_DOT_THRESHOLD:
        out = (1.0 - tau) * a0 + tau * a1
        out = out / np.linalg.norm(out)
        return Quaternion(*out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    out = (np.sin((1.0 - tau) * theta) / s) * a0 + (np.sin(tau * theta) / s) * a1
    out = out / np.linalg.norm(out)
    return Quaternion(*out)


def lerp_translation(t0: np.ndarray, t1: np.ndarray, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    return (1.0 - tau) * t0 + tau * t1


def interpolate_pose_track(p_exo_last: CameraPose, p_ego_first: CameraPose, T: int) -> list[CameraPose]:
    """Pose track bridging two boundary poses at normalized times (j-1)/(T-1).

    All intrinsics are copied from the exo-side pose; the first and last
    rotations/translations are the boundary values exactly.
    """
    if T < 2:
        raise ValueError(f"track length must be >= 2, got {T}")
    track = []
    for j in range(T):
        if j == 0:
            rot, trans = p_exo_last.rotation, p_exo_last.translation
        elif j == T - 1:
            rot, trans = p_ego_first.rotation, p_ego_first.translation
        else:
            tau = j / (T - 1)
            rot = slerp(p_exo_last.rotation, p_ego_first.rotation, tau)
            trans = lerp_translation(p_exo_last.translation, p_ego_first.translation, tau)
        track.append(replace(p_exo_last, rotation=rot, translation=trans.copy()))
    return track


@dataclass(frozen=True)
class PoseEmbedding:
    mode: str
    data: np.ndarray  # global: (16,); ray: (H, W, 180); plucker: (H, W, 6)


def _pixel_rays(pose: CameraPose, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """World-frame camera center o (3,) and unit ray directions d (H, W, 3)."""
    r = pose.rotation.to_matrix()
    o = pose.camera_center()
    jj, ii = np.meshgrid(np.arange(W), np.arange(H))
    u = jj + 0.5
    v = ii + 0.5
    d_cam = np.stack(
        [(u - pose.cx) / pose.fx, (v - pose.cy) / pose.fy, np.ones_like(u, dtype=np.float64)],
        axis=-1,
    )
    d_world = d_cam @ r  # R^T applied to each row vector
    d_world = d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)
    return o, d_world


def pose_embedding(
    pose: CameraPose, mode: str, H: int, W: int, scene_radius: float = 1.0
) -> PoseEmbedding:
    """One frame's camera-pose embedding.

    global:  flattened 4x4 world-to-camera homogeneous extrinsic matrix.
    plucker: per-pixel (d, m) with unit ray direction d and moment m = o x d.
    ray:     per-pixel sinusoidal harmonics (15 frequencies x sin/cos) of the
             6-vector (o / scene_radius, d).
    """
    if H < 1 or W < 1:
        raise ValueError(f"H, W must be >= 1, got {H}x{W}")
    if mode == "global":
        return PoseEmbedding("global", pose.extrinsic_4x4().reshape(16))
    if mode == "plucker":
        o, d = _pixel_rays(pose, H, W)
        m = np.cross(np.broadcast_to(o, d.shape), d)
        return PoseEmbedding("plucker", np.concatenate([d, m], axis=-1))
    if mode == "ray":
        o, d = _pixel_rays(pose, H, W)
        o_n = np.broadcast_to(o / scene_radius, d.shape)
        v6 = np.concatenate([o_n, d], axis=-1)  # (H, W, 6)
        freqs = 2.0 ** np.arange(RAY_NUM_FREQS)
        phases = v6[..., None, :] * freqs[:, None]  # (H, W, F, 6)
        enc = np.concatenate([np.sin(phases), np.cos(phases)], axis=-1)  # (H, W, F, 12)
        return PoseEmbedding("ray", enc.reshape(H, W, RAY_NUM_FREQS * 12))
    raise ModeError(f"unknown embedding mode '{mode}'")


def zero_embedding(mode: str, H: int, W: int) -> PoseEmbedding:
    """All-zero embedding of the mode's shape (pose-masking ablations)."""
    if mode == "global":
        return PoseEmbedding("global", np.zeros(16))
    if mode == "plucker":
        return PoseEmbedding("plucker", np.zeros((H, W, 6)))
    if mode == "ray":
        return PoseEmbedding("ray", np.zeros((H, W, RAY_NUM_FREQS * 12)))
    raise ModeError(f"unknown embedding mode '{mode}'")


def embedding_channels(mode: str) -> int:
    """Per-pixel channel count contributed by an embedding mode (0 = not per-pixel)."""
    if mode == "global":
        return 0
    if mode == "plucker":
        return 6
    if mode == "ray":
        return RAY_NUM_FREQS * 12
    raise ModeError(f"unknown embedding mode '{mode}'")

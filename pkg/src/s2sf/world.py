"""Procedural synthetic world: ray-cast renderer and paired exo/ego episodes.

The scene is static (z-up, ground plane at z = 0), so a rendered frame is a
pure function of (scene, pose). The transition segment of an episode is
rendered exactly along the interpolated pose track, which makes it a
verifiable ground-truth interpolation rather than a pseudo-label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RenderError
from .geometry import CameraPose, Quaternion, interpolate_pose_track, _pixel_rays

SCENE_RADIUS = 4.0
BACKGROUND = np.array([0.55, 0.65, 0.80])
AMBIENT = 0.15


@dataclass(frozen=True)
class SceneObject:
    shape: str  # "sphere" | "box"
    center: np.ndarray  # (3,)
    size: float  # sphere radius / box half-edge
    color: np.ndarray  # (3,) RGB in [0, 1]

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown shape '{self.shape}'")
        if self.size <= 0:
            raise ValueError(f"size must be > 0, got {self.size}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    objects: tuple[SceneObject, ...]
    ground_color: np.ndarray
    light_dir: np.ndarray  # unit vector
    radius: float = SCENE_RADIUS

    def __post_init__(self):
        if len(self.objects) < 1:
            raise ValueError("scene needs at least one object")
        object.__setattr__(self, "ground_color", np.asarray(self.ground_color, dtype=np.float64).reshape(3))
        ld = np.asarray(self.light_dir, dtype=np.float64).reshape(3)
        object.__setattr__(self, "light_dir", ld / np.linalg.norm(ld))


@dataclass
class EpisodeRecord:
    scene: SceneSpec
    x: np.ndarray  # (T, 3, H, W) exo frames, float32 in [0, 1]
    i: np.ndarray  # (T, 3, H, W) oracle transition frames
    g: np.ndarray  # (T, 3, H, W) ego frames
    poses_x: list[CameraPose]
    poses_i: list[CameraPose]
    poses_g: list[CameraPose]

    @property
    def T(self) -> int:
        return self.x.shape[0]


def look_at(eye: np.ndarray, target: np.ndarray, fx: float, fy: float, cx: float, cy: float) -> CameraPose:
    """World-to-camera pose for a camera at `eye` looking at `target` (z-up world)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        raise RenderError("camera eye coincides with look-at target")
    z = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])  # rows: camera axes in world coords
    q = Quaternion.from_matrix(r)
    t = -r @ eye
    return CameraPose(fx=fx, fy=fy, cx=cx, cy=cy, rotation=q, translation=t)


def _intersect_sphere(o, d, center, radius):
    oc = center - o  # (3,)
    b = d @ oc  # (N,)
    disc = b * b - (oc @ oc - radius * radius)
    hit = disc > 0
    t = np.where(hit, b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
    t = np.where(t > 1e-6, t, np.inf)
    return t


def _intersect_box(o, d, center, half):
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d  # (N, 3)
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    hit = (tmax >= tmin) & (tmax > 1e-6)
    t = np.where(tmin > 1e-6, tmin, tmax)
    return np.where(hit, t, np.inf)


def _box_normal(p, center, half):
    rel = (p - center) / half
    ax = np.abs(rel).argmax(axis=1)
    n = np.zeros_like(p)
    n[np.arange(p.shape[0]), ax] = np.sign(rel[np.arange(p.shape[0]), ax])
    return n


def render(scene: SceneSpec, pose: CameraPose, H: int, W: int) -> np.ndarray:
    """Deterministic ray-cast frame (3, H, W), float32 in [0, 1].

    Nearest hit shaded as color * (AMBIENT + (1-AMBIENT) * max(0, n.l));
    ground plane gets a checker pattern, misses get the background color.
    """
    o, dirs = _pixel_rays(pose, H, W)
    d = dirs.reshape(-1, 3)
    if not np.isfinite(d).all():
        raise RenderError("degenerate camera rays")
    for obj in scene.objects:
        if obj.shape == "sphere" and np.linalg.norm(o - obj.center) <= obj.size:
            raise RenderError("camera is inside an object")
        if obj.shape == "box" and np.abs(o - obj.center).max() <= obj.size:
            raise RenderError("camera is inside an object")

    n_rays = d.shape[0]
    best_t = np.full(n_rays, np.inf)
    color = np.tile(BACKGROUND, (n_rays, 1))
    normal = np.zeros((n_rays, 3))
    obj_color = np.zeros((n_rays, 3))

    for obj in scene.objects:
        if obj.shape == "sphere":
            t = _intersect_sphere(o, d, obj.center, obj.size)
        else:
            t = _intersect_box(o, d, obj.center, obj.size)
        closer = t < best_t
        if closer.any():
            p = o + t[closer, None] * d[closer]
            if obj.shape == "sphere":
                n = (p - obj.center) / obj.size
            else:
                n = _box_normal(p, obj.center, obj.size)
            best_t[closer] = t[closer]
            normal[closer] = n
            obj_color[closer] = obj.color

    # Ground plane z = 0, only where it is closer than any object hit.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = -o[2] / d[:, 2]
    ground_hit = (t_ground > 1e-6) & (t_ground < best_t)
    if ground_hit.any():
        p = o + t_ground[ground_hit, None] * d[ground_hit]
        checker = (np.floor(p[:, 0]) + np.floor(p[:, 1])) % 2
        gcol = scene.ground_color[None, :] * np.where(checker[:, None] > 0.5, 1.0, 0.55)
        best_t[ground_hit] = t_ground[ground_hit]
        normal[ground_hit] = np.array([0.0, 0.0, 1.0])
        obj_color[ground_hit] = gcol

    hit = np.isfinite(best_t)
    lam = np.maximum(0.0, normal @ scene.light_dir)
    shade = obj_color * (AMBIENT + (1.0 - AMBIENT) * lam[:, None])
    color[hit] = shade[hit]
    frame = color.reshape(H, W, 3).transpose(2, 0, 1)
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


def _sample_scene(rng: np.random.Generator, seed: int) -> SceneSpec:
    n_obj = int(rng.integers(2, 5))
    objects = []
    for _ in range(n_obj):
        shape = "sphere" if rng.random() < 0.5 else "box"
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.3, 2.2)
        size = rng.uniform(0.35, 0.8)
        center = np.array([rad * np.cos(ang), rad * np.sin(ang), size + rng.uniform(0.0, 0.6)])
        color = rng.uniform(0.25, 1.0, size=3)
        objects.append(SceneObject(shape=shape, center=center, size=size, color=color))
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 1.0
    return SceneSpec(
        seed=seed,
        objects=tuple(objects),
        ground_color=rng.uniform(0.3, 0.7, size=3),
        light_dir=light,
    )


def _ego_trajectory(rng: np.random.Generator, scene: SceneSpec, T: int, intr: tuple) -> list[CameraPose] | None:
    """Smooth first-person track: small per-frame heading/pitch and position steps."""
    fx, fy, cx, cy = intr
    max_step = 0.05 * scene.radius
    ang = rng.uniform(0, 2 * np.pi)
    pos = np.array([1.3 * np.cos(ang), 1.3 * np.sin(ang), rng.uniform(1.2, 1.6)])
    # heading: look toward scene center with some offset, tilted down at the objects
    aim = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.3, 0.8)])
    poses = []
    for _ in range(T):
        if np.linalg.norm(pos[:2]) > scene.radius or pos[2] < 0.4 or pos[2] > 0.8 * scene.radius:
            return None
        for obj in scene.objects:
            lim = obj.size + 0.05
            inside = (np.linalg.norm(pos - obj.center) <= lim) if obj.shape == "sphere" else (np.abs(pos - obj.center).max() <= lim)
            if inside:
                return None
        poses.append(look_at(pos, aim, fx, fy, cx, cy))
        step = rng.normal(size=3)
        step = step / np.linalg.norm(step) * rng.uniform(0.0, max_step)
        pos = pos + step
        # <= ~10 degree repointing per frame, implemented as a bounded drift of the aim point
        aim = aim + rng.normal(size=3) * 0.12
        aim[2] = np.clip(aim[2], 0.2, 1.2)
    return poses


def generate_episode(seed: int, T: int, H: int, W: int) -> EpisodeRecord:
    """Deterministic paired episode: static exo clip, ego clip, oracle transition.

    Retries with sub-seeds (up to 10) when the sampled ego trajectory leaves
    the scene bounds or enters an object.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    fx = fy = 0.9 * W
    cx, cy = W / 2.0, H / 2.0
    intr = (fx, fy, cx, cy)
    for attempt in range(10):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        scene = _sample_scene(rng, seed)
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.8, 0.95) * scene.radius
        eye = np.array([dist * np.cos(ang), dist * np.sin(ang), rng.uniform(1.8, 3.0)])
        exo_pose = look_at(eye, np.array([0.0, 0.0, 0.6]), *intr)
        ego_track = _ego_trajectory(rng, scene, T, intr)
        if ego_track is None:
            continue
        poses_x = [exo_pose] * T
        poses_g = ego_track
        poses_i = interpolate_pose_track(poses_x[-1], poses_g[0], T)
        try:
            # The interpolated track is not covered by the trajectory checks
            # and may still clip an object; count that as a failed attempt.
            exo_frame = render(scene, exo_pose, H, W)
            x = np.stack([exo_frame] * T)
            g = np.stack([render(scene, p, H, W) for p in poses_g])
            i = np.stack([render(scene, p, H, W) for p in poses_i])
        except RenderError:
            continue
        return EpisodeRecord(scene=scene, x=x, i=i, g=g, poses_x=poses_x, poses_i=poses_i, poses_g=poses_g)
    raise RenderError(f"no valid ego trajectory for seed {seed} after 10 attempts")


def temporal_subsample(frames: np.ndarray, step: int, count: int | None = None, enforce_4n1: bool = False) -> np.ndarray:
    """Every step-th frame; with `count`, exactly that many output frames."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    n = frames.shape[0]
    if count is None:
        count = 1 + (n - 1) // step
    if enforce_4n1 and (count - 1) % 4 != 0:
        raise ValueError(f"output length {count} does not satisfy 4n+1")
    needed = 1 + (count - 1) * step
    if needed > n:
        raise ValueError(f"need {needed} source frames for {count} outputs at step {step}, have {n}")
    return frames[: needed : step]

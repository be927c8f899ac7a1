"""Bit-exact persistence: tensor blobs, episodes, manifests, run configs.

Binary layout of a tensor blob:
    magic "S2SF" | version u32 | ndim u32 | dims u32 x ndim | payload f32 LE
All integers little-endian. Everything else is JSON with full-precision
floats (Python's repr round-trips float64 exactly). Writes go to a temp file
followed by an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .geometry import CameraPose, Quaternion
from .sequence import ABLATIONS
from .world import EpisodeRecord, SceneObject, SceneSpec, SCENE_RADIUS

BLOB_MAGIC = b"S2SF"
BLOB_VERSION = 1
MANIFEST_VERSION = 1


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path: Path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    header = BLOB_MAGIC + struct.pack("<II", BLOB_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    _atomic_write(Path(path), header + arr.astype("<f4").tobytes())


def read_tensor(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != BLOB_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {BLOB_MAGIC!r}", offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", offset=len(data))
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"unsupported blob version {version}", offset=4)
    if ndim > 16:
        raise FormatError(f"implausible ndim {ndim}", offset=8)
    dims_end = 12 + 4 * ndim
    if len(data) < dims_end:
        raise FormatError("truncated dims", offset=len(data))
    dims = struct.unpack_from(f"<{ndim}I", data, 12)
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(data) - dims_end != expected:
        raise FormatError(
            f"payload is {len(data) - dims_end} bytes, dims {dims} require {expected}",
            offset=dims_end,
        )
    return np.frombuffer(data[dims_end:], dtype="<f4").reshape(dims).copy()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def write_json(path: Path, obj):
    _atomic_write(Path(path), _json_bytes(obj))


def read_json(path: Path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- poses

def pose_to_dict(p: CameraPose) -> dict:
    q = p.rotation
    return {
        "fx": p.fx,
        "fy": p.fy,
        "cx": p.cx,
        "cy": p.cy,
        "quat": [q.w, q.x, q.y, q.z],
        "trans": [float(v) for v in p.translation],
    }


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(
        fx=d["fx"],
        fy=d["fy"],
        cx=d["cx"],
        cy=d["cy"],
        rotation=Quaternion(*d["quat"]),
        translation=np.array(d["trans"], dtype=np.float64),
    )


def scene_to_dict(s: SceneSpec) -> dict:
    return {
        "seed": s.seed,
        "radius": s.radius,
        "ground_color": [float(v) for v in s.ground_color],
        "light_dir": [float(v) for v in s.light_dir],
        "objects": [
            {
                "shape": o.shape,
                "center": [float(v) for v in o.center],
                "size": o.size,
                "color": [float(v) for v in o.color],
            }
            for o in s.objects
        ],
    }


def scene_from_dict(d: dict) -> SceneSpec:
    return SceneSpec(
        seed=d["seed"],
        radius=d["radius"],
        ground_color=np.array(d["ground_color"]),
        light_dir=np.array(d["light_dir"]),
        objects=tuple(
            SceneObject(shape=o["shape"], center=np.array(o["center"]), size=o["size"], color=np.array(o["color"]))
            for o in d["objects"]
        ),
    )


# ---------------------------------------------------------------- episodes

def write_episode(record: EpisodeRecord, ep_dir: Path) -> dict:
    """Persist one episode; returns the relative path map for the manifest."""
    ep_dir = Path(ep_dir)
    ep_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(ep_dir / "x.bin", record.x)
    write_tensor(ep_dir / "i.bin", record.i)
    write_tensor(ep_dir / "g.bin", record.g)
    write_json(
        ep_dir / "poses.json",
        {
            "exo": [pose_to_dict(p) for p in record.poses_x],
            "interp": [pose_to_dict(p) for p in record.poses_i],
            "ego": [pose_to_dict(p) for p in record.poses_g],
        },
    )
    write_json(ep_dir / "scene.json", scene_to_dict(record.scene))
    return {"x": "x.bin", "i": "i.bin", "g": "g.bin", "poses": "poses.json", "scene": "scene.json"}


def read_episode(ep_dir: Path) -> EpisodeRecord:
    ep_dir = Path(ep_dir)
    poses = read_json(ep_dir / "poses.json")
    return EpisodeRecord(
        scene=scene_from_dict(read_json(ep_dir / "scene.json")),
        x=read_tensor(ep_dir / "x.bin"),
        i=read_tensor(ep_dir / "i.bin"),
        g=read_tensor(ep_dir / "g.bin"),
        poses_x=[pose_from_dict(p) for p in poses["exo"]],
        poses_i=[pose_from_dict(p) for p in poses["interp"]],
        poses_g=[pose_from_dict(p) for p in poses["ego"]],
    )


def write_manifest(path: Path, T: int, H: int, W: int, episodes: list[dict]):
    ids = [e["id"] for e in episodes]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate episode ids in manifest")
    write_json(path, {"version": MANIFEST_VERSION, "T": T, "H": H, "W": W, "C": 3, "episodes": episodes})


def read_manifest(path: Path) -> dict:
    m = read_json(path)
    if m.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {m.get('version')}")
    ids = set()
    for e in m["episodes"]:
        if e["id"] in ids:
            raise FormatError(f"duplicate episode id {e['id']}")
        ids.add(e["id"])
        if e["split"] not in ("train", "test"):
            raise FormatError(f"bad split '{e['split']}' for episode {e['id']}")
    return m


def load_manifest_episode(manifest_path: Path, manifest: dict, ep_id: str) -> EpisodeRecord:
    root = Path(manifest_path).parent
    for e in manifest["episodes"]:
        if e["id"] == ep_id:
            rec = read_episode(root / e["dir"])
            if rec.T != manifest["T"] or rec.x.shape[2:] != (manifest["H"], manifest["W"]):
                raise FormatError(f"episode {ep_id} disagrees with manifest T/H/W")
            return rec
    raise KeyError(f"unknown episode id '{ep_id}'")


# ---------------------------------------------------------------- run config

_CONFIG_SCHEMA = {
    "model": {
        "H": 32, "W": 32, "C": 3, "max_frames": 27, "patch": 4,
        "width": 64, "depth_conv": 1, "depth_attn": 2, "heads": 4, "cond_dim": 128,
    },
    "schedule": {"K": 8},
    "guidance": {"mode": "hg_f", "weight": 3.0, "frac_level": None, "steps": 8},
    "training": {"lr": 2e-3, "batch_size": 2, "steps": 1000, "ckpt_every": 500, "scene_radius": SCENE_RADIUS},
    "ablation": "FPI",
    "embed_mode": "plucker",
}


def default_run_config() -> dict:
    return json.loads(json.dumps(_CONFIG_SCHEMA))


def validate_run_config(cfg: dict) -> dict:
    """Fill defaults and reject unknown / malformed keys.

    The returned dict is fully explicit, so a saved config re-loads
    identically.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be an object")
    out = default_run_config()
    for key in cfg:
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(key, "unknown key")
    for section in ("model", "schedule", "guidance", "training"):
        if section not in cfg:
            raise ConfigError(section, "missing section")
        if not isinstance(cfg[section], dict):
            raise ConfigError(section, "must be an object")
        for k, v in cfg[section].items():
            if k not in _CONFIG_SCHEMA[section]:
                raise ConfigError(f"{section}.{k}", "unknown key")
            out[section][k] = v
    for key in ("ablation", "embed_mode"):
        if key not in cfg:
            raise ConfigError(key, "missing key")
        out[key] = cfg[key]

    if out["ablation"] not in ABLATIONS:
        raise ConfigError("ablation", f"must be one of {ABLATIONS} (case-sensitive), got '{out['ablation']}'")
    if out["embed_mode"] not in ("global", "ray", "plucker"):
        raise ConfigError("embed_mode", f"unknown mode '{out['embed_mode']}'")
    if out["guidance"]["mode"] not in ("none", "hg_v", "hg_f"):
        raise ConfigError("guidance.mode", f"unknown mode '{out['guidance']['mode']}'")
    if out["guidance"]["weight"] < 0:
        raise ConfigError("guidance.weight", "must be >= 0")
    K = out["schedule"]["K"]
    if not isinstance(K, int) or K < 2:
        raise ConfigError("schedule.K", "must be an integer >= 2")
    if out["guidance"]["frac_level"] is None:
        out["guidance"]["frac_level"] = K // 2
    if not 0 < out["guidance"]["frac_level"] < K:
        raise ConfigError("guidance.frac_level", f"must lie strictly between 0 and K={K}")
    if out["guidance"]["steps"] < 1 or out["guidance"]["steps"] > K:
        raise ConfigError("guidance.steps", f"must lie in [1, K={K}]")
    for k in ("H", "W", "C", "max_frames", "patch", "width", "depth_conv", "depth_attn", "heads", "cond_dim"):
        v = out["model"][k]
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"model.{k}", "must be a positive integer")
    if out["model"]["H"] % out["model"]["patch"] or out["model"]["W"] % out["model"]["patch"]:
        raise ConfigError("model.patch", "H and W must be divisible by patch")
    if out["model"]["width"] % out["model"]["heads"]:
        raise ConfigError("model.heads", "width must be divisible by heads")
    tr = out["training"]
    if tr["lr"] <= 0:
        raise ConfigError("training.lr", "must be > 0")
    if tr["batch_size"] < 1 or tr["steps"] < 1:
        raise ConfigError("training.batch_size", "batch_size and steps must be >= 1")
    return out


def load_run_config(path: Path) -> dict:
    return validate_run_config(read_json(path))


def save_run_config(cfg: dict, path: Path):
    write_json(path, validate_run_config(cfg))

"""Unified exo/transition/ego stream assembly and training sub-task sampling."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ModeError, ShapeError
from .geometry import CameraPose, PoseEmbedding, pose_embedding, zero_embedding
from .world import EpisodeRecord

SEGMENT_EXO = "exo"
SEGMENT_INTERP = "interp"
SEGMENT_EGO = "ego"

ABLATIONS = ("FPI", "FI", "Direct")


@dataclass
class UnifiedSequence:
    frames: np.ndarray  # (3T, C, H, W)
    poses: list[CameraPose]  # length 3T
    segment_labels: list[str]  # per-frame: exo | interp | ego

    @property
    def T(self) -> int:
        return self.frames.shape[0] // 3


@dataclass
class SubTaskPair:
    frames: np.ndarray  # (2T, C, H, W)
    poses: list[CameraPose]
    segment_labels: list[str]
    kind: str  # exo_to_interp | interp_to_ego | exo_to_ego_direct
    pose_zeroed: np.ndarray  # (2T,) bool; True -> use zero pose embedding


def assemble_interp_segment(x_last: np.ndarray, g_first: np.ndarray, interior: np.ndarray) -> np.ndarray:
    """Transition clip [x_last, interior..., g_first]; interior must be T-2 frames."""
    T = interior.shape[0] + 2
    if x_last.shape != g_first.shape or (interior.size and interior.shape[1:] != x_last.shape):
        raise ShapeError("boundary/interior frame shapes disagree")
    return np.concatenate([x_last[None], interior.reshape((T - 2,) + x_last.shape), g_first[None]])


def build_unified(episode: EpisodeRecord) -> UnifiedSequence:
    T = episode.T
    if not (episode.x.shape == episode.i.shape == episode.g.shape):
        raise ShapeError("episode segments have mismatched shapes")
    if not (len(episode.poses_x) == len(episode.poses_i) == len(episode.poses_g) == T):
        raise ShapeError("pose tracks do not match the frame count")
    frames = np.concatenate([episode.x, episode.i, episode.g])
    poses = list(episode.poses_x) + list(episode.poses_i) + list(episode.poses_g)
    labels = [SEGMENT_EXO] * T + [SEGMENT_INTERP] * T + [SEGMENT_EGO] * T
    return UnifiedSequence(frames=frames, poses=poses, segment_labels=labels)


def sample_subtask(seq: UnifiedSequence, rng: np.random.Generator, mode: str) -> SubTaskPair:
    """Draw one 2T training pair.

    finetune: fair coin between (exo, interp) and (interp, ego);
    direct:   always the (exo, ego) pair with no transition segment.
    """
    T = seq.T
    if mode == "direct":
        sel = list(range(T)) + list(range(2 * T, 3 * T))
        kind = "exo_to_ego_direct"
    elif mode == "finetune":
        if rng.random() < 0.5:
            sel = list(range(0, 2 * T))
            kind = "exo_to_interp"
        else:
            sel = list(range(T, 3 * T))
            kind = "interp_to_ego"
    else:
        raise ModeError(f"unknown training mode '{mode}'")
    return SubTaskPair(
        frames=seq.frames[sel],
        poses=[seq.poses[k] for k in sel],
        segment_labels=[seq.segment_labels[k] for k in sel],
        kind=kind,
        pose_zeroed=np.zeros(2 * T, dtype=bool),
    )


def apply_fi_pose_masking(pair: SubTaskPair, ablation: str) -> SubTaskPair:
    """Mark which frames get zeroed pose embeddings for a given ablation.

    FPI keeps every pose; FI keeps only ego poses; Direct keeps ego poses and
    zeroes the exo ones (FI semantics carried over to the direct pair).
    """
    if ablation not in ABLATIONS:
        raise ModeError(f"unknown ablation '{ablation}'")
    if ablation == "FPI":
        mask = np.zeros(len(pair.segment_labels), dtype=bool)
    else:
        mask = np.array([lbl != SEGMENT_EGO for lbl in pair.segment_labels])
    return replace(pair, pose_zeroed=mask)


def embed_pose_track(
    poses: list[CameraPose],
    mode: str,
    H: int,
    W: int,
    scene_radius: float,
    zero_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Stacked per-frame embeddings, honoring a zero mask.

    Returns (N, 16) for global mode, (N, H, W, E) for per-pixel modes.
    """
    out = []
    for k, pose in enumerate(poses):
        if zero_mask is not None and zero_mask[k]:
            emb = zero_embedding(mode, H, W)
        else:
            emb = pose_embedding(pose, mode, H, W, scene_radius=scene_radius)
        out.append(emb.data)
    return np.stack(out)

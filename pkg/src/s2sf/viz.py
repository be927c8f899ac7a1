"""Qualitative exports: PNG contact sheets and GIF animations."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _to_uint8(frame: np.ndarray) -> np.ndarray:
    """(C, H, W) float [0,1] -> (H, W, C) uint8."""
    return (np.clip(frame, 0.0, 1.0).transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def contact_sheet(rows: list[np.ndarray], path: Path, pad: int = 2):
    """One labeled row per clip: rows are (T, C, H, W) arrays stacked vertically."""
    T = max(r.shape[0] for r in rows)
    H, W = rows[0].shape[2], rows[0].shape[3]
    sheet = np.full(((H + pad) * len(rows) + pad, (W + pad) * T + pad, 3), 30, dtype=np.uint8)
    for ri, clip in enumerate(rows):
        for ti in range(clip.shape[0]):
            y = pad + ri * (H + pad)
            x = pad + ti * (W + pad)
            sheet[y : y + H, x : x + W] = _to_uint8(clip[ti])
    Image.fromarray(sheet).save(path)


def animation(clip: np.ndarray, path: Path, fps: int = 4):
    """(T, C, H, W) float clip -> looping GIF."""
    frames = [Image.fromarray(_to_uint8(f)) for f in clip]
    frames[0].save(path, save_all=True, append_images=frames[1:], duration=int(1000 / fps), loop=0)

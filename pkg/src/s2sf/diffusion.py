"""Per-frame noise schedule, corruption, training loss, and history-guided
deterministic sampling.

Noise levels are discrete k in {0..K}: level 0 is clean context, level K is
pure noise (a fully-masked frame). The schedule endpoints are snapped exactly
so both facts are bit-true, which is what makes noise level double as a
conditioning mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ModeError, ShapeError

GUIDANCE_MODES = ("none", "hg_v", "hg_f")


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    alpha_bar: np.ndarray  # (K+1,), alpha_bar[0] = 1, alpha_bar[K] = 0

    def sqrt_ab(self, levels: torch.Tensor) -> torch.Tensor:
        ab = torch.from_numpy(self.alpha_bar).to(levels.device)[levels]
        return ab.sqrt()

    def sqrt_one_minus_ab(self, levels: torch.Tensor) -> torch.Tensor:
        ab = torch.from_numpy(self.alpha_bar).to(levels.device)[levels]
        return (1.0 - ab).sqrt()


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "hg_f"
    weight: float = 3.0
    frac_level: int | None = None  # hg_f only; default K // 2

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ModeError(f"unknown guidance mode '{self.mode}'")
        if self.weight < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.weight}")


def make_schedule(K: int) -> NoiseSchedule:
    """Cosine alpha_bar over K+1 levels with exact endpoints 1 and 0."""
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    k = np.arange(K + 1, dtype=np.float64)
    ab = np.cos((k / K) * np.pi / 2.0) ** 2
    ab[0] = 1.0
    ab[K] = 0.0
    return NoiseSchedule(K=K, alpha_bar=ab)


def corrupt(frames: torch.Tensor, levels: torch.Tensor, schedule: NoiseSchedule, eps: torch.Tensor) -> torch.Tensor:
    """Per-frame forward noising: sqrt(ab[k]) * x + sqrt(1 - ab[k]) * eps.

    At level 0 the output is the input bit-exactly; at level K it is eps.
    frames: (..., N, C, H, W) with levels (..., N).
    """
    if eps.shape != frames.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != frames shape {tuple(frames.shape)}")
    if levels.shape != frames.shape[:-3]:
        raise ShapeError(f"levels shape {tuple(levels.shape)} does not index frames {tuple(frames.shape)}")
    if levels.min() < 0 or levels.max() > schedule.K:
        raise ValueError("noise level out of range")
    a = schedule.sqrt_ab(levels)[..., None, None, None].to(frames.dtype)
    b = schedule.sqrt_one_minus_ab(levels)[..., None, None, None].to(frames.dtype)
    out = a * frames + b * eps
    # snap the exact endpoints so "clean" and "masked" are bitwise true
    lv = levels[..., None, None, None]
    out = torch.where(lv == 0, frames, out)
    out = torch.where(lv == schedule.K, eps, out)
    return out


def training_loss(
    model,
    frames: torch.Tensor,  # (B, N, C, H, W) clean, model-space values
    pose: torch.Tensor,
    schedule: NoiseSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """One diffusion-forcing loss: i.i.d. per-frame levels in {1..K}, eps-MSE."""
    B, N = frames.shape[:2]
    levels = torch.randint(1, schedule.K + 1, (B, N), generator=rng)
    eps = torch.randn(frames.shape, generator=rng, dtype=frames.dtype)
    noisy = corrupt(frames, levels, schedule, eps)
    pred = model(noisy, levels, pose)
    loss = (pred - eps).pow(2).mean()
    if not torch.isfinite(loss):
        raise ArithmeticError("non-finite training loss")
    return loss


def training_step(model, pair, pose: torch.Tensor, schedule: NoiseSchedule, rng: torch.Generator) -> torch.Tensor:
    """Loss for a single SubTaskPair (frames mapped [0,1] -> [-1,1])."""
    frames = torch.from_numpy(pair.frames).float()[None] * 2.0 - 1.0
    return training_loss(model, frames, pose[None] if pose.dim() in (2, 4) else pose, schedule, rng)


def combine_guidance(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, w: float) -> torch.Tensor:
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError("guidance branches have different shapes")
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def _level_path(K: int, steps: int) -> list[int]:
    """Strictly decreasing level sequence K -> 0 with `steps` transitions."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps > K:
        raise ValueError(f"steps={steps} exceeds schedule K={K}")
    ks = np.unique(np.round(np.linspace(0, K, steps + 1)).astype(int))[::-1]
    return [int(k) for k in ks]


def sample(
    model,
    context: torch.Tensor,  # (Tc, C, H, W) clean frames in model space, or (N, C, H, W) with cond_mask
    poses: torch.Tensor,  # pose embedding tensor for the full N-frame sequence
    cfg: GuidanceConfig,
    steps: int,
    rng: torch.Generator,
    schedule: NoiseSchedule,
    cond_mask: np.ndarray | None = None,  # (N,) bool, True = clean conditioning frame
    total_frames: int | None = None,
) -> torch.Tensor:
    """Deterministic DDIM-style descent over a sequence with clean context.

    By default the context occupies a clean prefix and the remaining
    `total_frames - Tc` frames start as pure noise at level K. `cond_mask`
    generalizes to an arbitrary clean set; then `context` must supply values
    for the full sequence (non-clean positions are ignored).

    Guidance branches per step: the conditional branch sees context at level 0
    (hg_v) or corrupted to frac_level (hg_f); the unconditional branch sees
    context replaced by pure noise at level K.
    """
    K = schedule.K
    N = poses.shape[0]
    if cond_mask is None:
        Tc = context.shape[0]
        if total_frames is not None and total_frames != N:
            raise ShapeError("total_frames disagrees with pose track length")
        cond_mask = np.zeros(N, dtype=bool)
        cond_mask[:Tc] = True
        full = torch.zeros((N,) + tuple(context.shape[1:]), dtype=context.dtype)
        full[:Tc] = context
    else:
        cond_mask = np.asarray(cond_mask, dtype=bool)
        if cond_mask.shape != (N,) or context.shape[0] != N:
            raise ShapeError("cond_mask and context must cover the full sequence")
        full = context.clone()
    if cond_mask.all():
        raise ValueError("cond_mask marks every frame clean; nothing to generate")

    gen = torch.from_numpy(~cond_mask)
    clean = torch.from_numpy(cond_mask)
    x = full.clone()
    x[gen] = torch.randn((int(gen.sum()),) + tuple(full.shape[1:]), generator=rng, dtype=full.dtype)

    frac = cfg.frac_level if cfg.frac_level is not None else K // 2
    if cfg.mode == "hg_f" and not 0 < frac < K:
        raise ValueError(f"frac_level must be in (0, K), got {frac}")
    # fixed draws for the whole run: uncond masking noise + fractional history noise
    uncond_noise = torch.randn(full.shape, generator=rng, dtype=full.dtype)
    frac_eps = torch.randn(full.shape, generator=rng, dtype=full.dtype)

    if cfg.mode == "hg_f":
        ctx_levels = torch.full((N,), frac, dtype=torch.long)
        lv = torch.where(clean, ctx_levels, torch.zeros(N, dtype=torch.long))
        ctx_frames = corrupt(full, lv, schedule, frac_eps)
    else:
        ctx_frames = full

    path = _level_path(K, steps)
    ab = schedule.alpha_bar
    for k, k_next in zip(path[:-1], path[1:]):
        levels_gen = torch.full((N,), k, dtype=torch.long)
        # conditional branch
        lv_c = torch.where(clean, torch.full((N,), frac if cfg.mode == "hg_f" else 0, dtype=torch.long), levels_gen)
        xin_c = torch.where(clean[:, None, None, None], ctx_frames, x)
        eps_c = model(xin_c[None], lv_c[None], poses[None])[0]
        if cfg.mode == "none":
            eps_hat = eps_c
        else:
            lv_u = torch.where(clean, torch.full((N,), K, dtype=torch.long), levels_gen)
            xin_u = torch.where(clean[:, None, None, None], uncond_noise, x)
            eps_u = model(xin_u[None], lv_u[None], poses[None])[0]
            eps_hat = combine_guidance(eps_c, eps_u, cfg.weight)
        if ab[k] <= 0.0:
            # pure-noise level: x carries no signal, so there is no x0
            # estimate to extract; only the predicted noise direction remains
            x0_hat = torch.zeros_like(x)
        else:
            x0_hat = (x - float(np.sqrt(1.0 - ab[k])) * eps_hat) / float(np.sqrt(ab[k]))
            x0_hat = x0_hat.clamp(-1.0, 1.0)
        x_next = float(np.sqrt(ab[k_next])) * x0_hat + float(np.sqrt(1.0 - ab[k_next])) * eps_hat
        x = torch.where(clean[:, None, None, None], x, x_next)

    x = torch.where(clean[:, None, None, None], full, x)
    return x

"""Run-level glue: dataset loading, the training loop, checkpointing, and
episode-level sampling / evaluation used by the CLI."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import data_io, diffusion, metrics
from .model import DenoiserConfig, SeqDenoiser
from .sequence import apply_fi_pose_masking, build_unified, embed_pose_track, sample_subtask
from .world import EpisodeRecord


def build_model(cfg: dict) -> SeqDenoiser:
    m = cfg["model"]
    return SeqDenoiser(DenoiserConfig(
        H=m["H"], W=m["W"], C=m["C"], max_frames=m["max_frames"], patch=m["patch"],
        width=m["width"], depth_conv=m["depth_conv"], depth_attn=m["depth_attn"],
        heads=m["heads"], cond_dim=m["cond_dim"], embed_mode=cfg["embed_mode"],
    ))


def pose_tensor(poses, mode: str, H: int, W: int, scene_radius: float, zero_mask=None) -> torch.Tensor:
    """(N, 16) or (N, E, H, W) float32 embedding tensor for a pose track."""
    emb = embed_pose_track(poses, mode, H, W, scene_radius, zero_mask=zero_mask)
    if mode != "global":
        emb = emb.transpose(0, 3, 1, 2)  # (N, H, W, E) -> (N, E, H, W)
    return torch.from_numpy(np.ascontiguousarray(emb, dtype=np.float32))


@dataclass
class LoadedDataset:
    manifest: dict
    ids: list[str]
    episodes: dict  # id -> EpisodeRecord

    @property
    def T(self):
        return self.manifest["T"]


def load_dataset(manifest_path: Path, split: str | None = None) -> LoadedDataset:
    manifest = data_io.read_manifest(manifest_path)
    root = Path(manifest_path).parent
    ids, eps = [], {}
    for e in manifest["episodes"]:
        if split is not None and e["split"] != split:
            continue
        ids.append(e["id"])
        eps[e["id"]] = data_io.read_episode(root / e["dir"])
    return LoadedDataset(manifest=manifest, ids=ids, episodes=eps)


def save_checkpoint(out_dir: Path, model: SeqDenoiser, cfg: dict, step: int, seed: int, loss: float):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / "ckpt.pt")
    data_io.write_json(out_dir / "ckpt.json", {
        "config": cfg,
        "step": step,
        "seed": seed,
        "schedule_K": cfg["schedule"]["K"],
        "loss": loss,
        "format_version": 1,
    })


def load_checkpoint(ckpt_dir: Path) -> tuple[SeqDenoiser, dict, dict]:
    ckpt_dir = Path(ckpt_dir)
    sidecar = data_io.read_json(ckpt_dir / "ckpt.json")
    cfg = data_io.validate_run_config(sidecar["config"])
    model = build_model(cfg)
    model.load_state_dict(torch.load(ckpt_dir / "ckpt.pt", weights_only=True))
    model.eval()
    return model, cfg, sidecar


def train(
    manifest_path: Path,
    cfg: dict,
    out_dir: Path,
    steps: int,
    seed: int,
    init_from: Path | None = None,
    log_every: int = 50,
) -> list[tuple[int, float]]:
    """Deterministic training run; returns the (step, loss) log."""
    ds = load_dataset(manifest_path, split="train")
    m = cfg["model"]
    frames_needed = ds.manifest["T"] * (2 if cfg["ablation"] == "Direct" else 3)
    if frames_needed > m["max_frames"] or ds.manifest["H"] != m["H"] or ds.manifest["W"] != m["W"]:
        raise data_io.ConfigError("model", "config and manifest disagree on T/H/W")
    T = ds.T
    H, W = m["H"], m["W"]
    mode = cfg["embed_mode"]
    ablation = cfg["ablation"]
    radius = cfg["training"]["scene_radius"]
    schedule = diffusion.make_schedule(cfg["schedule"]["K"])

    model = build_model(cfg)
    if init_from is not None:
        init_model, init_cfg, _ = load_checkpoint(init_from)
        if init_cfg["model"] != cfg["model"] or init_cfg["embed_mode"] != cfg["embed_mode"]:
            raise data_io.ConfigError("model", "--init-from checkpoint architecture disagrees with config")
        model.load_state_dict(init_model.state_dict())
    model.train()
    peak_lr = cfg["training"]["lr"]
    opt = torch.optim.AdamW(model.parameters(), lr=peak_lr)
    warmup = min(100, max(1, steps // 10))

    def lr_at(step: int) -> float:
        if step <= warmup:
            return peak_lr * step / warmup
        frac = (step - warmup) / max(1, steps - warmup)
        return peak_lr * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * frac)))

    # unified sequences + raw pose embeddings, computed once per episode
    seqs = {eid: build_unified(ds.episodes[eid]) for eid in ds.ids}
    embeds = {
        eid: pose_tensor(seqs[eid].poses, mode, H, W, radius)
        for eid in ds.ids
    }

    np_rng = np.random.default_rng(seed)
    torch_rng = torch.Generator().manual_seed(seed)
    subtask_mode = "direct" if ablation == "Direct" else "finetune"
    batch = cfg["training"]["batch_size"]
    ckpt_every = cfg["training"]["ckpt_every"]
    log: list[tuple[int, float]] = []
    window: list[float] = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for step in range(1, steps + 1):
        for group in opt.param_groups:
            group["lr"] = lr_at(step)
        frame_list, pose_list = [], []
        for _ in range(batch):
            eid = ds.ids[int(np_rng.integers(len(ds.ids)))]
            seq = seqs[eid]
            pair = sample_subtask(seq, np_rng, subtask_mode)
            pair = apply_fi_pose_masking(pair, ablation)
            idx = _pair_indices(pair.kind, T)
            emb = embeds[eid][idx].clone()
            emb[torch.from_numpy(pair.pose_zeroed)] = 0.0
            frame_list.append(torch.from_numpy(pair.frames).float() * 2.0 - 1.0)
            pose_list.append(emb)
        frames = torch.stack(frame_list)
        poses = torch.stack(pose_list)
        try:
            loss = diffusion.training_loss(model, frames, poses, schedule, torch_rng)
        except ArithmeticError as exc:
            raise ArithmeticError(f"{exc} at step {step}") from exc
        opt.zero_grad()
        loss.backward()
        opt.step()
        window.append(float(loss.item()))
        if step % log_every == 0 or step == steps:
            log.append((step, float(np.mean(window))))
            window.clear()
        if step % ckpt_every == 0 or step == steps:
            save_checkpoint(out_dir, model, cfg, step, seed, log[-1][1] if log else float(loss.item()))

    lines = ["step loss"] + [f"{s} {repr(l)}" for s, l in log]
    data_io._atomic_write(out_dir / "loss_log.txt", ("\n".join(lines) + "\n").encode())
    return log


def _pair_indices(kind: str, T: int) -> list[int]:
    if kind == "exo_to_interp":
        return list(range(0, 2 * T))
    if kind == "interp_to_ego":
        return list(range(T, 3 * T))
    return list(range(T)) + list(range(2 * T, 3 * T))


def _inference_zero_mask(ablation: str, labels: list[str]) -> np.ndarray | None:
    if ablation == "FPI":
        return None
    return np.array([lbl != "ego" for lbl in labels])


def sample_episode(
    model: SeqDenoiser,
    cfg: dict,
    episode: EpisodeRecord,
    guidance: diffusion.GuidanceConfig,
    steps: int,
    seed: int,
    native_interp: bool = False,
) -> dict:
    """Generate the transition / ego segments for one episode.

    Returns {"i_hat": (T,C,H,W) or None, "g_hat": (T,C,H,W) or None} in
    storage range [0, 1]. `native_interp` instead inpaints the transition
    interior between the clean boundary frames x_T and g_1.
    """
    T = episode.T
    H, W = episode.x.shape[2:]
    mode = cfg["embed_mode"]
    radius = cfg["training"]["scene_radius"]
    schedule = diffusion.make_schedule(cfg["schedule"]["K"])
    ablation = cfg["ablation"]
    rng = torch.Generator().manual_seed(seed)

    if native_interp:
        # T-frame window [x_T, ?, ..., ?, g_1]: generate only the interior
        poses = episode.poses_i
        labels = ["exo"] + ["interp"] * (T - 2) + ["ego"]
        ptens = pose_tensor(poses, mode, H, W, radius, zero_mask=_inference_zero_mask(ablation, labels))
        window = np.zeros_like(episode.i)
        window[0] = episode.x[-1]
        window[-1] = episode.g[0]
        ctx = torch.from_numpy(window).float() * 2.0 - 1.0
        mask = np.zeros(T, dtype=bool)
        mask[0] = mask[-1] = True
        with torch.no_grad():
            out = diffusion.sample(model, ctx, ptens, guidance, steps, rng, schedule, cond_mask=mask)
        i_hat = ((out.numpy() + 1.0) / 2.0).clip(0.0, 1.0).astype(np.float32)
        # the boundary frames are conditioning, not predictions; emit only
        # the generated interior so metrics aren't inflated by exact copies
        return {"i_hat": i_hat[1:-1], "g_hat": None}

    if ablation == "Direct":
        poses = list(episode.poses_x) + list(episode.poses_g)
        labels = ["exo"] * T + ["ego"] * T
    else:
        poses = list(episode.poses_x) + list(episode.poses_i) + list(episode.poses_g)
        labels = ["exo"] * T + ["interp"] * T + ["ego"] * T
    ptens = pose_tensor(poses, mode, H, W, radius, zero_mask=_inference_zero_mask(ablation, labels))
    ctx = torch.from_numpy(episode.x).float() * 2.0 - 1.0
    with torch.no_grad():
        out = diffusion.sample(model, ctx, ptens, guidance, steps, rng, schedule)
    out = ((out.numpy() + 1.0) / 2.0).clip(0.0, 1.0).astype(np.float32)
    if ablation == "Direct":
        return {"i_hat": None, "g_hat": out[T:]}
    return {"i_hat": out[T : 2 * T], "g_hat": out[2 * T :]}


def evaluate_predictions(pred_dir: Path, manifest_path: Path, episode_ids: list[str] | None = None) -> dict:
    """Aggregate per-segment metrics over the test episodes in the manifest.

    `episode_ids` restricts evaluation to a subset of test episodes.
    """
    manifest = data_io.read_manifest(manifest_path)
    root = Path(manifest_path).parent
    test_eps = [e for e in manifest["episodes"] if e["split"] == "test"]
    if episode_ids is not None:
        known = {e["id"] for e in test_eps}
        unknown = sorted(set(episode_ids) - known)
        if unknown:
            raise KeyError(f"not test episodes in manifest: {', '.join(unknown)}")
        test_eps = [e for e in test_eps if e["id"] in set(episode_ids)]
    missing = []
    rows = []
    for e in test_eps:
        ep_pred = Path(pred_dir) / e["id"]
        has_i = (ep_pred / "i_hat.bin").exists()
        has_g = (ep_pred / "g_hat.bin").exists()
        if not has_i and not has_g:
            missing.append(e["id"])
            continue
        rec = data_io.read_episode(root / e["dir"])
        row = {"id": e["id"]}
        if has_i:
            pred_i = data_io.read_tensor(ep_pred / "i_hat.bin")
            gt_i = rec.i
            if pred_i.shape[0] == gt_i.shape[0] - 2:
                gt_i = gt_i[1:-1]  # interior-only prediction (native interpolation)
            row["interp"] = {
                "psnr": float(np.mean([metrics.psnr(a, b) for a, b in zip(pred_i, gt_i)])),
                "ssim": float(np.mean([metrics.ssim(a, b) for a, b in zip(pred_i, gt_i)])),
                "frames": int(pred_i.shape[0]),
            }
        if has_g:
            pred_g = data_io.read_tensor(ep_pred / "g_hat.bin")
            row["ego"] = {
                "psnr": float(np.mean([metrics.psnr(a, b) for a, b in zip(pred_g, rec.g)])),
                "ssim": float(np.mean([metrics.ssim(a, b) for a, b in zip(pred_g, rec.g)])),
                "frames": int(pred_g.shape[0]),
            }
        rows.append(row)
    if missing:
        raise FileNotFoundError(f"missing predictions for episodes: {', '.join(sorted(missing))}")

    report = {"episodes": rows, "per_segment": {}}
    for seg in ("interp", "ego"):
        seg_rows = [r[seg] for r in rows if seg in r]
        if seg_rows:
            n = sum(r["frames"] for r in seg_rows)
            report["per_segment"][seg] = {
                "psnr": float(np.mean([r["psnr"] for r in seg_rows])),
                "ssim": float(np.mean([r["ssim"] for r in seg_rows])),
                "frames": n,
            }
    segs = report["per_segment"]
    if segs:
        n_total = sum(s["frames"] for s in segs.values())
        report["per_segment"]["both"] = {
            "psnr": float(sum(s["psnr"] * s["frames"] for s in segs.values()) / n_total),
            "ssim": float(sum(s["ssim"] * s["frames"] for s in segs.values()) / n_total),
            "frames": n_total,
        }
        report["psnr_mean"] = report["per_segment"]["both"]["psnr"]
        report["ssim_mean"] = report["per_segment"]["both"]["ssim"]
    return report

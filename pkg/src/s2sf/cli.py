"""Operator entry points: gen-data, train, sample, eval.

Exit codes: 0 success, 1 validation error, 2 runtime error. Every command is
a pure function of its flags, input files, and seed; outputs are written via
atomic renames so a failing command never leaves a partial manifest.
"""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import data_io, diffusion, pipeline, viz, world
from .errors import ConfigError, FormatError, ModeError, RenderError, ShapeError


def _apply_thread_cap():
    cap = os.environ.get("S2SF_THREADS")
    if cap:
        torch.set_num_threads(int(cap))


def _command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        _apply_thread_cap()
        try:
            fn(*args, **kwargs)
        except (ConfigError, FormatError, ModeError, ShapeError, ValueError, KeyError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (RenderError, ArithmeticError, OSError) as exc:
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def main():
    """Exo-to-ego sequence diffusion on a procedural synthetic world."""


@main.command("gen-data")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--episodes", "n_episodes", type=int, default=100, show_default=True)
@click.option("--T", "t_frames", type=int, default=9, show_default=True)
@click.option("--H", "height", type=int, default=32, show_default=True)
@click.option("--W", "width", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split-frac", type=float, default=0.9, show_default=True, help="train fraction")
@_command
def gen_data(out_dir, n_episodes, t_frames, height, width, seed, split_frac):
    """Generate a dataset of paired exo/ego episodes with oracle transitions."""
    if t_frames < 2:
        raise ValueError(f"--T must be >= 2, got {t_frames}")
    if not 0.0 < split_frac <= 1.0:
        raise ValueError(f"--split-frac must lie in (0, 1], got {split_frac}")
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = int(round(n_episodes * split_frac))
    entries = []
    for k in range(n_episodes):
        ep_seed = seed * 1_000_003 + k
        record = world.generate_episode(ep_seed, t_frames, height, width)
        ep_id = f"ep{k:05d}"
        data_io.write_episode(record, out_dir / ep_id)
        entries.append({
            "id": ep_id,
            "seed": ep_seed,
            "dir": ep_id,
            "split": "train" if k < n_train else "test",
        })
    data_io.write_manifest(out_dir / "dataset.json", t_frames, height, width, entries)
    click.echo(f"wrote {n_episodes} episodes to {out_dir} ({n_train} train / {n_episodes - n_train} test)")


@main.command()
@click.option("--data", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--steps", type=int, default=None, help="override training.steps from the config")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--init-from", "init_from", type=click.Path(exists=True, path_type=Path), default=None,
              help="checkpoint dir to fine-tune from")
@_command
def train(manifest_path, config_path, out_dir, steps, seed, init_from):
    """Train a denoiser per the run config's ablation and embedding mode."""
    cfg = data_io.load_run_config(config_path)
    n_steps = steps if steps is not None else cfg["training"]["steps"]
    torch.manual_seed(seed)
    log = pipeline.train(manifest_path, cfg, out_dir, n_steps, seed, init_from=init_from)
    data_io.save_run_config(cfg, Path(out_dir) / "run_config.json")
    click.echo(f"trained {n_steps} steps, final loss {log[-1][1]:.6f}, checkpoint in {out_dir}")


@main.command()
@click.option("--ckpt", "ckpt_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--data", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--episode", "episode_ids", multiple=True, help="episode id; repeatable. Default: all test episodes")
@click.option("--guidance", type=click.Choice(["none", "hg_v", "hg_f"]), default=None,
              help="override guidance mode from the checkpoint config")
@click.option("--w", "weight", type=float, default=None, help="guidance weight [default from config: 3.0]")
@click.option("--steps", type=int, default=None, help="sampling steps [default from config: 50]")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--native-interp", is_flag=True, help="inpaint the transition interior between x_T and g_1")
@_command
def sample(ckpt_dir, manifest_path, episode_ids, guidance, weight, steps, seed, out_dir, native_interp):
    """Sample transitions / ego segments for episodes and export visuals."""
    model, cfg, _ = pipeline.load_checkpoint(ckpt_dir)
    manifest = data_io.read_manifest(manifest_path)
    g = cfg["guidance"]
    gcfg = diffusion.GuidanceConfig(
        mode=guidance if guidance is not None else g["mode"],
        weight=weight if weight is not None else g["weight"],
        frac_level=g["frac_level"],
    )
    n_steps = steps if steps is not None else g["steps"]
    ids = list(episode_ids) or [e["id"] for e in manifest["episodes"] if e["split"] == "test"]
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, ep_id in enumerate(ids):
        record = data_io.load_manifest_episode(manifest_path, manifest, ep_id)
        result = pipeline.sample_episode(
            model, cfg, record, gcfg, n_steps, seed=np.random.SeedSequence([seed, k]).generate_state(1)[0].item(),
            native_interp=native_interp,
        )
        ep_out = out_dir / ep_id
        ep_out.mkdir(parents=True, exist_ok=True)
        rows = [record.x]
        clips = [record.x]
        for key in ("i_hat", "g_hat"):
            if result[key] is not None:
                data_io.write_tensor(ep_out / f"{key}.bin", result[key])
                rows.append(result[key])
                clips.append(result[key])
        viz.contact_sheet(rows, ep_out / "grid.png")
        viz.animation(np.concatenate(clips), ep_out / "anim.gif")
    click.echo(f"sampled {len(ids)} episodes into {out_dir}")


@main.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--data", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "report_path", type=click.Path(path_type=Path), required=True)
@click.option("--episode", "episode_ids", multiple=True, help="restrict to these test episode ids")
@_command
def eval_cmd(pred_dir, manifest_path, report_path, episode_ids):
    """Per-segment PSNR/SSIM report over the manifest's test split."""
    report = pipeline.evaluate_predictions(pred_dir, manifest_path, list(episode_ids) or None)
    data_io.write_json(report_path, report)
    segs = report["per_segment"]
    line = " ".join(f"{k}: psnr={v['psnr']:.3f} ssim={v['ssim']:.4f}" for k, v in sorted(segs.items()))
    click.echo(line)


if __name__ == "__main__":
    main()

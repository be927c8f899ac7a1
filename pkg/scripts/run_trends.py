"""Run the ablation / pose-embedding trend experiments and summarize them.

Trains Direct, FI, FPI (Plucker) and FPI (Global) for an equal step budget
with several seeds each, samples a fixed subset of test episodes, and writes
a single summary JSON consumed by the acceptance suite:

    python3 scripts/run_trends.py --data DATA/dataset.json --out results/

The summary records per-run segment PSNRs plus seed-mean aggregates for the
three orderings of interest (ablation ego PSNR, Plucker vs Global, oracle
transition vs native interpolation).
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from s2sf import data_io  # noqa: E402

VARIANTS = {
    "direct": {"ablation": "Direct", "embed_mode": "plucker", "max_frames_mult": 2},
    "fi": {"ablation": "FI", "embed_mode": "plucker", "max_frames_mult": 3},
    "fpi": {"ablation": "FPI", "embed_mode": "plucker", "max_frames_mult": 3},
    "fpi_global": {"ablation": "FPI", "embed_mode": "global", "max_frames_mult": 3},
}


def cli(*args):
    cmd = [sys.executable, "-m", "s2sf.cli", *map(str, args)]
    t0 = time.time()
    subprocess.run(cmd, check=True)
    return time.time() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", type=Path, required=True, help="dataset manifest path")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--steps", type=int, default=3000, help="training budget per run")
    ap.add_argument("--lr", type=float, default=None, help="override training lr")
    ap.add_argument("--batch-size", type=int, default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--eval-episodes", type=int, default=16, help="test episodes sampled per run")
    ap.add_argument("--eval-steps", type=int, default=25, help="denoising steps at sampling time")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = ap.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = data_io.read_manifest(args.data)
    test_ids = [e["id"] for e in manifest["episodes"] if e["split"] == "test"][: args.eval_episodes]
    ep_flags = [x for i in test_ids for x in ("--episode", i)]
    T = manifest["T"]

    runs = {}
    for name in args.variants:
        spec = VARIANTS[name]
        cfg = data_io.default_run_config()
        cfg["ablation"] = spec["ablation"]
        cfg["embed_mode"] = spec["embed_mode"]
        cfg["model"]["max_frames"] = T * spec["max_frames_mult"]
        cfg["model"]["H"] = manifest["H"]
        cfg["model"]["W"] = manifest["W"]
        if args.lr is not None:
            cfg["training"]["lr"] = args.lr
        if args.batch_size is not None:
            cfg["training"]["batch_size"] = args.batch_size
        cfg_path = out / f"{name}.config.json"
        data_io.save_run_config(cfg, cfg_path)

        runs[name] = {}
        for seed in args.seeds:
            tag = f"{name}_s{seed}"
            ckpt = out / tag / "ckpt"
            pred = out / tag / "pred"
            report = out / tag / "report.json"
            t_train = cli("train", "--data", args.data, "--config", cfg_path,
                          "--out", ckpt, "--steps", args.steps, "--seed", seed)
            t_sample = cli("sample", "--ckpt", ckpt, "--data", args.data,
                           "--out", pred, "--seed", 1000 + seed,
                           "--steps", args.eval_steps, *ep_flags)
            cli("eval", "--pred", pred, "--data", args.data, "--out", report, *ep_flags)
            rep = data_io.read_json(report)
            entry = {
                "segments": rep["per_segment"],
                "train_seconds": round(t_train, 1),
                "sample_seconds": round(t_sample, 1),
            }
            if name == "direct":
                # native-interpolation baseline: same checkpoint asked to
                # inpaint the transition window between its boundary frames
                ni_pred = out / tag / "pred_native_interp"
                ni_report = out / tag / "report_native_interp.json"
                cli("sample", "--ckpt", ckpt, "--data", args.data,
                    "--out", ni_pred, "--seed", 1000 + seed,
                    "--steps", args.eval_steps, "--native-interp", *ep_flags)
                cli("eval", "--pred", ni_pred, "--data", args.data, "--out", ni_report, *ep_flags)
                entry["native_interp_segments"] = data_io.read_json(ni_report)["per_segment"]
            runs[name][str(seed)] = entry
            print(f"[{tag}] done: train {t_train:.0f}s sample {t_sample:.0f}s", flush=True)

    def seed_mean(name, key, segment):
        vals = [r[key][segment]["psnr"] for r in runs[name].values() if segment in r[key]]
        return float(sum(vals) / len(vals))

    aggregate = {}
    for name in args.variants:
        aggregate[name] = {seg: seed_mean(name, "segments", seg)
                           for seg in ("interp", "ego", "both")
                           if all(seg in r["segments"] for r in runs[name].values())}
    if "direct" in runs:
        aggregate["direct_native_interp"] = {
            "interp": seed_mean("direct", "native_interp_segments", "interp")}

    summary = {
        "budget_steps": args.steps,
        "seeds": args.seeds,
        "eval_episodes": test_ids,
        "eval_steps": args.eval_steps,
        "runs": runs,
        "aggregate_psnr": aggregate,
    }
    data_io.write_json(out / "trends.json", summary)
    print(json.dumps(aggregate, indent=1))


if __name__ == "__main__":
    main()

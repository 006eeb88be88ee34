"""Threshold sweep with accuracy, offload fraction and edge energy for 10000 instances.

Runs the full pipeline into ``--out-dir``, then rescales the measured
per-instance energies to a 10000-instance workload under two payload
profiles: 32x32x3 images on a small GPU and 224x224x3 images on a larger one.

    python3 scripts/threshold_energy.py --out-dir runs/energy
"""

import argparse
from pathlib import Path

from meanet import cli, cost
from meanet.router import write_report_csv
from meanet.config import ExperimentConfig, load_splits
from meanet.router import CloudMode

PROFILES = {
    "small-images": cost.EnergyParams(gpu_power=56.0, t_cp=0.056, image_bytes=32 * 32 * 3),
    "large-images": cost.EnergyParams(gpu_power=75.0, t_cp=0.203, image_bytes=224 * 224 * 3),
}
N = 10_000


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/energy")
    args = ap.parse_args()
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg = ExperimentConfig.from_dict({**base.to_dict(), "seed": args.seed})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = load_splits(cfg)
    cli.cmd_train_main(cfg, out, splits)
    cli.cmd_train_cloud(cfg, out, splits=splits)
    cli.cmd_analyze_classes(cfg, out, splits=splits)
    cli.cmd_train_mea(cfg, out, splits)
    rows = []
    for name, energy in PROFILES.items():
        cfg_p = ExperimentConfig.from_dict({**cfg.to_dict(), "cost": {"energy": energy.to_dict()}})
        sweep = cli.cmd_sweep_threshold(cfg_p, out, CloudMode.RAW_MODEL, splits=splits)
        all_cloud = N * energy.upload_energy(energy.image_bytes) / 1e3
        for r in sweep:
            scale = N / len(splits.test)
            edge_j = r["total_J"] * scale
            rows.append({
                "profile": name,
                "threshold": r["threshold"],
                "beta": r["beta"],
                "accuracy": r["accuracy"],
                "edge_energy_J": edge_j,
                "all_offload_J": all_cloud,
                "ratio": edge_j / all_cloud,
            })
            print(f"{name:12s} t={r['threshold']:<5} beta={r['beta']:.3f} acc={r['accuracy']:.4f} "
                  f"edge={edge_j:8.2f} J  vs all-offload {all_cloud:8.2f} J")
    write_report_csv(rows, out / "energy_profiles.csv")


if __name__ == "__main__":
    main()

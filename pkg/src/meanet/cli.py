"""Staged command-line harness.

    meanet train-main        main block + exit 1            -> main.ckpt.json
    meanet train-cloud       cloud model (and feature tail)  -> cloud.ckpt.json
    meanet analyze-classes   validation stats, hard classes  -> class_stats.csv, partition.json
    meanet train-mea         frozen-main edge training       -> mea.ckpt.json, params_report.csv
    meanet eval              routed inference                -> eval_report.csv, records.jsonl, cost_report.csv
    meanet sweep-threshold   threshold grid                  -> sweep.csv
    meanet run-all           all of the above in order
    meanet gen-data          write the synthetic benchmark as CSV + manifest
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import arch, cost, data, trainer
from .complexity import ClassPartition, random_partition, select_hard_classes
from .config import ExperimentConfig, Splits, describe_defaults, load_splits
from .errors import ConfigError, ContractError, MeaNetError
from .router import (
    Cloud,
    CloudMode,
    Exit,
    calibrate_threshold,
    run_inference,
    write_records,
    write_report_csv,
)

log = logging.getLogger("meanet")

MAIN_CKPT = "main.ckpt.json"
CLOUD_CKPT = "cloud.ckpt.json"
TAIL_CKPT = "feature_tail.ckpt.json"
PARTITION = "partition.json"
MEA_CKPT = "mea.ckpt.json"


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(d)
    return cfg


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ContractError(f"missing {what}: {path} (run the earlier stage first)")
    return path


def _header(cfg: ExperimentConfig, **extra) -> str:
    lines = [describe_defaults(cfg)]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return "\n".join(lines)


# --- stages -----------------------------------------------------------------

def cmd_train_main(cfg: ExperimentConfig, out: Path, splits: Splits | None = None) -> Path:
    splits = splits or load_splits(cfg)
    mea_cfg = cfg.mea_config(splits.train.dim, splits.train.num_classes)
    net = arch.build(mea_cfg, cfg.seed)
    curve = trainer.train_main(net, splits.train, cfg.sgd_config("main"), cfg.sgd.main_epochs, splits.val)
    arch.save_meanet(net, out / MAIN_CKPT)
    trainer.write_curve(curve, out / "main_curve.csv")
    log.info("main block: final train accuracy %.4f", curve[-2].accuracy if len(curve) > 1 else float("nan"))
    return out / MAIN_CKPT


def cmd_train_cloud(cfg: ExperimentConfig, out: Path, feature_tail: bool = False,
                    splits: Splits | None = None) -> Path:
    splits = splits or load_splits(cfg)
    layers, curve = trainer.train_cloud(
        cfg.model.cloud_widths, splits.train, cfg.sgd_config("cloud", 1), cfg.sgd.cloud_epochs,
        arch.BlockSpec(tuple(cfg.model.stack)), splits.val, cfg.seed + 1,
    )
    arch.save_classifier(layers, out / CLOUD_CKPT, {"widths": list(cfg.model.cloud_widths)})
    trainer.write_curve(curve, out / "cloud_curve.csv")
    if feature_tail:
        net = arch.load_meanet(_require(out / MAIN_CKPT, "main checkpoint"))
        tail = trainer.train_feature_tail(net, splits.train, cfg.model.feature_tail_widths,
                                          cfg.sgd_config("cloud", 2), cfg.sgd.cloud_epochs, cfg.seed + 2)
        arch.save_classifier(tail, out / TAIL_CKPT, {"widths": list(cfg.model.feature_tail_widths)})
    return out / CLOUD_CKPT


def cmd_analyze_classes(cfg: ExperimentConfig, out: Path, n_hard: int | None = None,
                        random_classes: bool = False, splits: Splits | None = None) -> ClassPartition:
    splits = splits or load_splits(cfg)
    net = arch.load_meanet(_require(out / MAIN_CKPT, "main checkpoint"))
    if net.config.num_classes != splits.val.num_classes:
        raise ConfigError(
            f"checkpoint has {net.config.num_classes} classes, dataset has {splits.val.num_classes}"
        )
    stats = trainer.main_block_stats(net, splits.val)
    k = stats.num_classes
    if n_hard is None:
        n_hard = cfg.model.num_hard if cfg.model.num_hard is not None else k // 2
    if random_classes or cfg.training.selection == "random":
        partition = random_partition(k, n_hard, cfg.seed)
    else:
        partition = select_hard_classes(stats, n_hard)
    partition.save(out / PARTITION)
    rows = [
        {
            "class": c,
            "support": int(stats.support[c]),
            "precision": float(stats.precision[c]),
            "fdr": float(stats.fdr[c]),
            "recall": float(stats.recall[c]),
            "hard": int(partition.is_hard_class(c)),
        }
        for c in range(k)
    ]
    write_report_csv(rows, out / "class_stats.csv")
    log.info("hard classes: %s", list(partition.hard_set))
    return partition


def cmd_train_mea(cfg: ExperimentConfig, out: Path, splits: Splits | None = None) -> Path:
    splits = splits or load_splits(cfg)
    src = arch.load_meanet(_require(out / MAIN_CKPT, "main checkpoint"))
    partition = ClassPartition.load(_require(out / PARTITION, "partition file"))
    if partition.num_classes != src.config.num_classes:
        raise ContractError("partition and model disagree on the number of classes")
    main_digest = arch.parameter_digest(src.main_layers)
    # edge blocks are (re)built for the partition's hard-class count
    mea_cfg = cfg.mea_config(src.config.input_dim, src.config.num_classes, partition.num_hard)
    net = arch.build(mea_cfg, cfg.seed + 3)
    net.main, net.exit1 = src.main, src.exit1
    net.freeze_main()
    x_hard, y_hard, _ = trainer.filter_hard_subset(splits.train.features, splits.train.labels, partition)
    log.info("hard subset size: %d of %d", len(y_hard), len(splits.train))
    curve = trainer.train_extension_adaptive(net, x_hard, y_hard, cfg.sgd_config("edge", 3),
                                             cfg.sgd.edge_epochs)
    if arch.parameter_digest(net.main_layers) != main_digest:
        raise ContractError("main block changed during extension training")
    arch.save_meanet(net, out / MEA_CKPT)
    trainer.write_curve(curve, out / "extension_curve.csv")
    write_params_report(net, out / "params_report.csv", hard_subset_size=len(y_hard),
                        train_size=len(splits.train))
    return out / MEA_CKPT


def write_params_report(net: arch.MEANet, path: Path, **extra) -> None:
    blocks = {
        "main": net.main_layers,
        "adaptive": net.adaptive,
        "extension": net.extension_path,
    }
    rows = []
    for name, layers in blocks.items():
        rows.append({
            "block": name,
            "params": sum(l.n_params for l in layers),
            "macs": sum(l.n_macs for l in layers),
            "frozen": int(all(l.frozen for l in layers)),
        })
    fixed_p, trained_p = net.count_params()
    fixed_m, trained_m = net.count_macs()
    rows.append({"block": "fixed", "params": fixed_p, "macs": fixed_m, "frozen": 1})
    rows.append({"block": "trained", "params": trained_p, "macs": trained_m, "frozen": 0})
    rows.append({"block": "total", "params": fixed_p + trained_p, "macs": fixed_m + trained_m, "frozen": -1})
    write_report_csv(rows, path, "\n".join(f"{k}={v}" for k, v in extra.items()) or None)


def _cloud_for(cfg: ExperimentConfig, out: Path, mode: CloudMode) -> Cloud | None:
    if mode is CloudMode.OFF:
        return None
    if mode is CloudMode.RAW_MODEL:
        layers, _ = arch.load_classifier(_require(out / CLOUD_CKPT, "cloud checkpoint"))
        return Cloud(mode, layers, cfg.router.failure_rate, cfg.seed)
    if mode is CloudMode.FEATURE_TAIL:
        layers, _ = arch.load_classifier(_require(out / TAIL_CKPT, "feature-tail checkpoint"))
        return Cloud(mode, layers, cfg.router.failure_rate, cfg.seed)
    return Cloud(mode, None, cfg.router.failure_rate, cfg.seed)


def _eval_set(splits: Splits, partition: ClassPartition, hard_only: bool) -> data.Dataset:
    if not hard_only:
        return splits.test
    return splits.test.subset(np.flatnonzero(partition.hard_mask(splits.test.labels)))


def _extension_mac_ratio(net: arch.MEANet) -> float:
    m = net.block_macs()
    return (m["adaptive"] + m["extension"]) / m["main"]


def cost_rows(cfg: ExperimentConfig, net: arch.MEANet, records, threshold: float,
              mode: CloudMode) -> list[dict]:
    """Measured edge-cloud energy next to the edge-only and cloud-only baselines (in J)."""
    energy = cfg.energy()
    payload = "Features" if mode is CloudMode.FEATURE_TAIL else "RawData"
    measured = cost.measured_cost_report(
        [r.decision.value for r in records], [r.conf_ext is not None for r in records],
        energy, _extension_mac_ratio(net), payload, net.config.feature_dim,
    )
    n = measured.n
    # without a cloud every instance predicted hard runs the extension
    hard_frac = sum(r.is_hard for r in records) / n
    x_edge_only = energy.main_energy * (1.0 + _extension_mac_ratio(net) * hard_frac)
    params = cost.CostParams(n=n, x=x_edge_only, x_cl=energy.cloud_energy,
                             x_cu=measured.upload_per_instance)
    strategy = cost.Strategy.EDGE_CLOUD_FEATURES if payload == "Features" else cost.Strategy.EDGE_CLOUD_RAW
    rows = []
    for name, breakdown, beta in (
        ("EdgeOnly", cost.strategy_cost("EdgeOnly", params), 0.0),
        ("CloudOnly", cost.strategy_cost("CloudOnly", cost.CostParams(
            n=n, x=0.0, x_cl=energy.cloud_energy, x_cu=energy.upload_energy(energy.image_bytes))), 1.0),
        (f"{strategy.value}(measured)", measured.breakdown, measured.beta),
    ):
        rows.append(_cost_row(name, threshold, beta, breakdown))
    return rows


def _cost_row(strategy: str, threshold: float, beta: float, b: cost.CostBreakdown) -> dict:
    return {
        "strategy": strategy,
        "threshold": float(threshold),
        "beta": float(beta),
        "edge_compute_J": b.edge_compute / 1e3,
        "cloud_compute_J": b.cloud_compute / 1e3,
        "comm_J": b.communication / 1e3,
        "total_J": b.total / 1e3,
    }


def cmd_eval(cfg: ExperimentConfig, out: Path, threshold: float | None, mode: CloudMode,
             hard_only: bool = False, splits: Splits | None = None) -> dict:
    splits = splits or load_splits(cfg)
    net = arch.load_meanet(_require(out / MEA_CKPT, "MEANet checkpoint"))
    partition = ClassPartition.load(_require(out / PARTITION, "partition file"))
    cloud = _cloud_for(cfg, out, mode)
    rng = calibrate_threshold(net, splits.val.features, splits.val.labels)
    if threshold is None:
        threshold = cfg.router.threshold if cfg.router.threshold is not None else rng.midpoint
    ds = _eval_set(splits, partition, hard_only)
    records, report = run_inference(net, partition, ds.features, ds.labels, threshold, cloud,
                                    cloud_available=cloud is not None)
    row = report.row()
    row.update({"mu_c": rng.mu_c, "mu_w": rng.mu_w, "cloud_mode": mode.value, "hard_only": int(hard_only)})
    header = _header(cfg)
    write_report_csv([row], out / "eval_report.csv", header)
    write_records(records, out / "records.jsonl")
    write_report_csv(cost_rows(cfg, net, records, threshold, mode), out / "cost_report.csv", header)
    return row


def cmd_sweep_threshold(cfg: ExperimentConfig, out: Path, mode: CloudMode,
                        grid: Sequence[float] | None = None, hard_only: bool = False,
                        splits: Splits | None = None) -> list[dict]:
    splits = splits or load_splits(cfg)
    grid = sorted(float(t) for t in (grid if grid is not None else cfg.router.grid))
    if not grid or grid[0] < 0:
        raise ConfigError("threshold grid must be nonempty and nonnegative")
    net = arch.load_meanet(_require(out / MEA_CKPT, "MEANet checkpoint"))
    partition = ClassPartition.load(_require(out / PARTITION, "partition file"))
    cloud = _cloud_for(cfg, out, mode)
    rng = calibrate_threshold(net, splits.val.features, splits.val.labels)
    ds = _eval_set(splits, partition, hard_only)
    energy = cfg.energy()
    ratio = _extension_mac_ratio(net)
    payload = "Features" if mode is CloudMode.FEATURE_TAIL else "RawData"
    rows = []
    for t in grid:
        records, report = run_inference(net, partition, ds.features, ds.labels, t, cloud,
                                        cloud_available=cloud is not None)
        m = cost.measured_cost_report([r.decision.value for r in records],
                                      [r.conf_ext is not None for r in records],
                                      energy, ratio, payload, net.config.feature_dim)
        # the same totals through the closed-form rows, as a cross-check
        recomputed = cost.strategy_cost(cost.Strategy.EDGE_CLOUD_RAW, cost.CostParams(
            n=m.n, x=m.edge_per_instance, x_cl=energy.cloud_energy, x_cu=m.upload_per_instance,
            beta=m.beta))
        rows.append({
            "threshold": t,
            "beta": report.beta,
            "accuracy": report.accuracy,
            "hard_class_accuracy": report.hard_class_accuracy,
            "frac_main": report.frac_main,
            "frac_extension": report.frac_extension,
            "mu_c": rng.mu_c,
            "mu_w": rng.mu_w,
            "edge_compute_J": m.breakdown.edge_compute / 1e3,
            "cloud_compute_J": m.breakdown.cloud_compute / 1e3,
            "comm_J": m.breakdown.communication / 1e3,
            "total_J": m.breakdown.total / 1e3,
            "total_J_formula": recomputed.total / 1e3,
        })
    write_report_csv(rows, out / "sweep.csv", _header(cfg, mu_c=rng.mu_c, mu_w=rng.mu_w))
    return rows


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    spec = cfg.synthetic_spec()
    ds = data.gen_synthetic(spec)
    data.save_csv(ds, out / "synthetic.csv")
    data.write_manifest(ds, out / "manifest.json", ["synthetic.csv"])


# --- argument parsing -----------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default="runs/default", help="artifact directory")
    common.add_argument("-v", "--verbose", action="store_true")

    routing = argparse.ArgumentParser(add_help=False)
    routing.add_argument("--cloud-mode", choices=[m.value for m in CloudMode], default=None)
    routing.add_argument("--no-cloud", action="store_true", help="same as --cloud-mode off")
    routing.add_argument("--hard-only", action="store_true",
                         help="evaluate only test instances of hard classes")

    p = argparse.ArgumentParser(prog="meanet", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train-main", parents=[common])
    tc = sub.add_parser("train-cloud", parents=[common])
    tc.add_argument("--feature-tail", action="store_true",
                    help="also train a cloud tail on main-block features")
    ac = sub.add_parser("analyze-classes", parents=[common])
    ac.add_argument("--n-hard", type=int)
    ac.add_argument("--random-classes", action="store_true")
    sub.add_parser("train-mea", parents=[common])
    ev = sub.add_parser("eval", parents=[common, routing])
    ev.add_argument("--threshold", type=float)
    sw = sub.add_parser("sweep-threshold", parents=[common, routing])
    sw.add_argument("--grid", type=str, help="comma-separated thresholds")
    ra = sub.add_parser("run-all", parents=[common, routing])
    ra.add_argument("--threshold", type=float)
    ra.add_argument("--n-hard", type=int)
    ra.add_argument("--random-classes", action="store_true")
    sub.add_parser("gen-data", parents=[common])
    return p


def _mode(args, cfg: ExperimentConfig) -> CloudMode:
    if getattr(args, "no_cloud", False):
        return CloudMode.OFF
    return CloudMode(args.cloud_mode or cfg.router.cloud_mode)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.command == "gen-data":
            cmd_gen_data(cfg, _out(args))
            return 0
        splits = load_splits(cfg)
        out = _out(args)
        if args.command == "train-main":
            cmd_train_main(cfg, out, splits)
        elif args.command == "train-cloud":
            cmd_train_cloud(cfg, out, args.feature_tail, splits)
        elif args.command == "analyze-classes":
            cmd_analyze_classes(cfg, out, args.n_hard, args.random_classes, splits)
        elif args.command == "train-mea":
            cmd_train_mea(cfg, out, splits)
        elif args.command == "eval":
            row = cmd_eval(cfg, out, args.threshold, _mode(args, cfg), args.hard_only, splits)
            print(f"accuracy={row['accuracy']:.4f} hard_class_accuracy={row['hard_class_accuracy']:.4f} "
                  f"beta={row['beta']:.4f} threshold={row['threshold']:.4f}")
        elif args.command == "sweep-threshold":
            grid = [float(t) for t in args.grid.split(",")] if args.grid else None
            cmd_sweep_threshold(cfg, out, _mode(args, cfg), grid, args.hard_only, splits)
        elif args.command == "run-all":
            mode = _mode(args, cfg)
            cmd_train_main(cfg, out, splits)
            cmd_train_cloud(cfg, out, mode is CloudMode.FEATURE_TAIL, splits)
            cmd_analyze_classes(cfg, out, args.n_hard, args.random_classes, splits)
            cmd_train_mea(cfg, out, splits)
            row = cmd_eval(cfg, out, args.threshold, mode, args.hard_only, splits)
            cmd_sweep_threshold(cfg, out, mode, None, args.hard_only, splits)
            print(f"accuracy={row['accuracy']:.4f} hard_class_accuracy={row['hard_class_accuracy']:.4f} "
                  f"beta={row['beta']:.4f} threshold={row['threshold']:.4f}")
    except (MeaNetError, OSError) as exc:
        print(f"meanet: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

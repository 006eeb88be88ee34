"""Precision-ranked vs random hard-class selection.

For each seed the main block is trained once; the edge blocks are then
trained for the precision-ranked partition and for ``--random`` random
partitions of the same size. Reports hard-class accuracy (on each
partition's own hard classes), overall edge accuracy and detection accuracy.

    python3 scripts/selection_ablation.py --seeds 0 1 2 --random 3
"""

import argparse
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np

from meanet import arch, cli, router
from meanet.complexity import ClassPartition, random_partition
from meanet.config import ExperimentConfig, load_splits


def evaluate(cfg, splits, out: Path, part: ClassPartition, method: str, seed: int) -> dict:
    part.save(out / "partition.json")
    cli.cmd_train_mea(cfg, out, splits)
    net = arch.load_meanet(out / "mea.ckpt.json")
    test = splits.test
    _, rep = router.run_inference(net, part, test.features, test.labels, math.inf, None, False)
    return {
        "seed": seed,
        "method": method,
        "hard_classes": " ".join(map(str, part.hard_set)),
        "hard_class_acc": rep.hard_class_accuracy,
        "edge_acc": rep.accuracy,
        "main_acc": rep.main_accuracy,
        "detection_acc": rep.detection_accuracy,
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(3)))
    ap.add_argument("--random", type=int, default=3, help="random partitions per seed")
    ap.add_argument("--config")
    ap.add_argument("--out", default="results/selection_ablation.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        cfg = ExperimentConfig.from_dict({**base.to_dict(), "seed": seed})
        splits = load_splits(cfg)
        tmp = Path(tempfile.mkdtemp())
        try:
            cli.cmd_train_main(cfg, tmp, splits)
            ranked = cli.cmd_analyze_classes(cfg, tmp, splits=splits)
            rows.append(evaluate(cfg, splits, tmp, ranked, "precision", seed))
            for j in range(args.random):
                part = random_partition(ranked.num_classes, ranked.num_hard, 1000 * seed + j)
                rows.append(evaluate(cfg, splits, tmp, part, "random", seed))
        finally:
            shutil.rmtree(tmp)
    for method in ("precision", "random"):
        sel = [r for r in rows if r["method"] == method]
        print(f"{method:9s}  detection {np.mean([r['detection_acc'] for r in sel]):.4f}  "
              f"edge acc {np.mean([r['edge_acc'] for r in sel]):.4f}  "
              f"hard-class acc {np.mean([r['hard_class_acc'] for r in sel]):.4f}")
    router.write_report_csv(rows, Path(args.out))


if __name__ == "__main__":
    main()

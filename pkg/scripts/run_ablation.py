"""Train the four checkpoints needed by the ablation rows and print the AUC table.

    python scripts/run_ablation.py --epochs 60 --out results/ablation
"""
import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

from adsm.ablation import ablation_run, check_direction, format_table, write_table
from adsm.presets import TINY_DATA, TINY_SCORE, TINY_TRAIN
from adsm.synthetic import generate_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenes", type=int, default=3)
    ap.add_argument("--train-videos", type=int, default=4, help="per scene")
    ap.add_argument("--test-videos", type=int, default=8, help="per scene")
    ap.add_argument("--frames", type=int, default=96)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    data = replace(TINY_DATA, scenes=args.scenes, videos_per_scene=args.train_videos,
                   test_videos_per_scene=args.test_videos, frames=args.frames, seed=args.seed)
    train_cfg = replace(TINY_TRAIN, epochs=args.epochs, seed=args.seed,
                        model=replace(TINY_TRAIN.model, scene_classes=args.scenes))
    t0 = time.perf_counter()
    train_videos, test_videos, _ = generate_synthetic_dataset(data)
    rows = ablation_run(train_cfg, TINY_SCORE, test_videos, train_videos=train_videos)
    elapsed = time.perf_counter() - t0

    print(format_table(rows))
    verdict = check_direction(rows)
    print(f"full gain {verdict['full_gain']:+.4f} (ok={verdict['full_ok']}), singles ok={verdict['singles_ok']}, "
          f"{elapsed / 60:.1f} min")
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(rows, args.out / "ablation.csv")
    (args.out / "verdict.json").write_text(json.dumps({**verdict, "seconds": elapsed, "data": data.to_dict(),
                                                       "epochs": args.epochs}, indent=2))


if __name__ == "__main__":
    main()

"""Train a small NCST on N(mu, s^2 I) windows and report cosine to the analytic score per ladder step."""
import argparse
from dataclasses import replace

from adsm.recovery import RecoveryConfig, heldout_cosine, train_gaussian


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--s", type=float, default=RecoveryConfig.s)
    ap.add_argument("--epochs", type=int, default=RecoveryConfig.epochs)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = replace(RecoveryConfig(), s=args.s, epochs=args.epochs, seed=args.seed)
    model, meta = train_gaussian(cfg)
    hist = meta["loss_history"]
    print(f"trained {cfg.epochs} epochs in {meta['train_seconds']:.0f}s, loss {hist[0]:.3f} -> {hist[-1]:.3f}")
    print("step  sigma    cosine")
    for step in range(1, cfg.model.levels + 1):
        print(f"{step:4d}  {float(cfg.model.sigma_of(step)):.4f}  {heldout_cosine(model, cfg, step):.4f}")


if __name__ == "__main__":
    main()

"""Score field of a two-Gaussian mixture and the minor mode the score norm cannot see.

Thin wrapper over ``adsm demo-modes``; writes field.csv and field.svg under --out.
"""
import argparse
from pathlib import Path

from adsm.cli import main as adsm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/modes"))
    ap.add_argument("--mixture", default="0.95,0,0,1;0.05,4,0,1")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    raise SystemExit(adsm(["demo-modes", "--mixture", args.mixture, "--out", str(args.out / "field.csv")]))


if __name__ == "__main__":
    main()

"""Encrypted-simulation and plaintext training on iris; writes both metric
series (ready for loss/accuracy curves) and prints the final numbers."""
import argparse
from pathlib import Path

from hetrain import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--packing", default="diag")
    ap.add_argument("--epochs", type=int, default=400)
    ap.add_argument("--noise-std", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    out = Path(args.out)
    tag = f"{args.packing}_s{args.seed}"
    raise SystemExit(cli.main([
        "compare", "--packing", args.packing, "--epochs", str(args.epochs),
        "--noise-std", str(args.noise_std), "--seed", str(args.seed),
        "--metrics-out", str(out / f"{tag}.csv"),
        "--plain-metrics-out", str(out / f"{tag}.plain.csv"),
        "--checkpoint-out", str(out / f"{tag}.json"),
    ]))


if __name__ == "__main__":
    main()

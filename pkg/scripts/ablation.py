"""Pretrain + probe with one component removed at a time: no EMA, MSE loss, no predictor."""

import argparse
import csv
import logging
from pathlib import Path

from byb.experiments import ProbeSetup, probe_comparison

VARIANTS = {
    "full": {},
    "no_ema": dict(m_ema=0.0),
    "mse_loss": dict(loss="mse"),
    "no_predictor": dict(use_predictor=False),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pretrain-users", type=int, default=5000)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = ProbeSetup(pretrain_users=args.pretrain_users)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("variant", "probe_auroc", "random_init_auroc", "seconds"))
        for name, over in VARIANTS.items():
            res = probe_comparison(setup, args.seed, out_dir=out / name, **over)
            w.writerow((name, res.pretrained, res.random_init, round(res.seconds, 1)))
            print(f"{name:13s} {res.pretrained:.4f}")


if __name__ == "__main__":
    main()

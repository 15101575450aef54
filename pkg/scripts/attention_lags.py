"""Last-row attention by lag after pretraining on strongly weekly data."""

import argparse
import logging

from byb.experiments import OFF_LAGS, ON_LAGS, ProbeSetup, weekly_attention


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-users", type=int, default=5000)
    ap.add_argument("--out", default=None, help="directory for per-seed training metrics")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = ProbeSetup(
        pretrain_users=args.pretrain_users,
        finetune_users=0,
        test_users=0,
        periodicity_strength=1.0,
        drift_strength=0.0,
    )
    for seed in args.seeds:
        out = f"{args.out}/seed{seed}" if args.out else None
        r = weekly_attention(setup, seed, out_dir=out)
        profile = r.profiles[r.best_layer]
        print(f"seed {seed} layer {r.best_layer}: {ON_LAGS} {r.on_lag:.4f} vs {OFF_LAGS} {r.off_lag:.4f}")
        print("  " + " ".join(f"lag{lag}={w:.3f}" for lag, w in sorted(profile.items())))


if __name__ == "__main__":
    main()

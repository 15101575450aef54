"""Frozen linear probe: pretrained encoder vs. the same encoder at initialization.

    python3 scripts/probe_comparison.py --seeds 0 1 2 --out runs/probe
"""

import argparse
import json
import logging
from pathlib import Path

from byb.experiments import ProbeSetup, probe_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-users", type=int, default=20000)
    ap.add_argument("--method", default="byb", help="any pretraining method, e.g. nbp, mbm1, cts")
    ap.add_argument("--out", default="runs/probe")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = ProbeSetup(pretrain_users=args.pretrain_users)
    out = Path(args.out)
    rows = []
    for seed in args.seeds:
        res = probe_comparison(setup, seed, out_dir=out / f"seed{seed}", method=args.method)
        rows.append(dict(seed=seed, pretrained=res.pretrained, random_init=res.random_init, gain=res.gain, seconds=res.seconds))
        print(f"seed {seed}: pretrained {res.pretrained:.4f} random {res.random_init:.4f} gain {res.gain:+.4f}")
    (out / "summary.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()

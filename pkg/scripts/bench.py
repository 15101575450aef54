"""Pooled vs. per-event training throughput on 60 days of ~20 behaviors a day."""

import argparse
import json
import logging
from dataclasses import asdict

from byb.bench import bench
from byb.config import RunConfig
from byb.data import GeneratorConfig, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=80)
    ap.add_argument("--batch-size", type=int, nargs="+", default=[4, 8])
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--out", default=None, help="write all reports to this JSON file")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    data = generate_synthetic(GeneratorConfig(num_users=args.users, num_days=65, avg_events_per_day=20, seed=0))
    reports = []
    for bs in args.batch_size:
        cfg = RunConfig(
            observation_days=60, d_model=args.dim, ff_dim=args.dim, num_layers=args.layers,
            predictor_hidden=args.dim, batch_size=bs, warmup_steps=5, bench_steps=5,
        )
        if len(data) < bs * 10:
            print(f"batch {bs}: skipped, needs {bs * 10} users")
            continue
        r = bench(data, cfg)
        reports.append(asdict(r))
        print(
            f"batch {bs}: pooled {r.samples_per_second:.1f}/s, unpooled {r.unpooled_samples_per_second:.2f}/s, "
            f"speedup {r.pooled_vs_unpooled_speedup:.1f}x, peak {r.peak_resident_bytes / 2**20:.1f} MiB vs "
            f"{r.unpooled_peak_resident_bytes / 2**20:.1f} MiB"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(reports, fh, indent=2)


if __name__ == "__main__":
    main()

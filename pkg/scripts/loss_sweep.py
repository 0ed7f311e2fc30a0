"""Throughput under receiver-side packet loss, relative to a lossless run."""

import argparse
import csv
import sys

from shp.core import ChannelConfig
from shp.simulator import random_message, run_session
from shp.trace import ImpairmentConfig, generate_synthetic_trace


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--losses", default="0,0.01,0.02,0.05,0.1,0.2")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=200)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--bitlength", type=int, default=4)
    args = p.parse_args(argv)

    losses = [float(x) for x in args.losses.split(",")]
    if 0.0 not in losses:
        losses.insert(0, 0.0)
    cfg = ChannelConfig(bitlength=args.bitlength)
    total = dict.fromkeys(losses, 0.0)
    for i in range(args.seeds):
        seed = args.base_seed + i
        tr = generate_synthetic_trace(120, args.duration, seed=seed)
        msg = random_message(20_000, seed)
        for loss in losses:
            rx = ImpairmentConfig(loss=loss, seed=seed)
            total[loss] += run_session(cfg, tr, msg, receiver_impair=rx).bps
    w = csv.writer(sys.stdout)
    w.writerow(["loss", "mean_bps", "ratio"])
    for loss in losses:
        w.writerow([loss, total[loss] / args.seeds, total[loss] / total[0.0]])


if __name__ == "__main__":
    main()

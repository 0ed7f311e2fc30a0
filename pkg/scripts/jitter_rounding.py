"""Correct pointers per rounding level, with and without inter-observer jitter."""

import argparse
import csv
import sys

from shp.core import ChannelConfig
from shp.simulator import random_message, run_session
from shp.trace import ImpairmentConfig, generate_synthetic_trace


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--jitters", default="0,0.002,0.02", help="receiver jitter, seconds")
    p.add_argument("--epsilons", default="0,1,2,3,4,5,6")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=300)
    p.add_argument("--duration", type=float, default=120.0)
    p.add_argument("--source", default="ICD")
    args = p.parse_args(argv)

    w = csv.writer(sys.stdout)
    w.writerow(["jitter", "epsilon", "seed", "correct_pointers", "data_received", "phi"])
    for i in range(args.seeds):
        seed = args.base_seed + i
        tr = generate_synthetic_trace(120, args.duration, seed=seed)
        msg = random_message(20_000, seed)
        for jitter in (float(x) for x in args.jitters.split(",")):
            rx = ImpairmentConfig(jitter=jitter, seed=seed)
            for eps in (int(x) for x in args.epsilons.split(",")):
                cfg = ChannelConfig(inputsource=args.source, bitlength=4, epsilon=eps)
                rep = run_session(cfg, tr, msg, receiver_impair=rx)
                w.writerow([jitter, eps, seed, rep.correct_pointers, rep.data_received, rep.phi])


if __name__ == "__main__":
    main()

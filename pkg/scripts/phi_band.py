"""phi (measured / expected bits per attempt) across bitlengths and subchanneling."""

import argparse
import csv
import itertools
import sys

from shp.core import ChannelConfig
from shp.simulator import random_message, run_session
from shp.trace import ImpairmentConfig, generate_synthetic_trace


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--rate", type=float, default=120.0)
    p.add_argument("--jitter", type=float, default=0.00025, help="receiver jitter, seconds")
    p.add_argument("--processing-delay-us", type=int, default=500)
    args = p.parse_args(argv)

    w = csv.writer(sys.stdout)
    w.writerow(["bitlength", "subchannels", "seed", "attempts", "matches", "phi", "bps"])
    for n, bits in itertools.product((2, 3, 4), (0, 2)):
        cfg = ChannelConfig(inputsource="ISD", bitlength=n,
                            subchanneling_mode="iphash" if bits else "none",
                            subchanneling_bits=bits)
        for seed in range(args.seeds):
            tr = generate_synthetic_trace(args.rate, args.duration, seed=seed)
            rep = run_session(cfg, tr, random_message(20_000, seed),
                              receiver_impair=ImpairmentConfig(jitter=args.jitter, seed=seed),
                              processing_delay_us=args.processing_delay_us)
            w.writerow([n, 1 << bits, seed, rep.attempts, rep.matches, rep.phi, rep.bps])


if __name__ == "__main__":
    main()

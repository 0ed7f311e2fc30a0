"""Transmitted and delivered bits per ECC variant on one synthetic trace."""

import argparse
import csv
import sys

from shp.core import ChannelConfig
from shp.ecc import overhead_fraction
from shp.simulator import random_message, run_session
from shp.trace import generate_synthetic_trace


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--duration", type=float, default=90.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--bitlengths", default="2,4")
    args = p.parse_args(argv)

    tr = generate_synthetic_trace(120, args.duration, seed=args.seed)
    msg = random_message(20_000, args.seed)
    w = csv.writer(sys.stdout)
    w.writerow(["bitlength", "ecc", "overhead", "correct_pointers", "transmitted_bits",
                "payload_bits_received", "bps"])
    for n in (int(x) for x in args.bitlengths.split(",")):
        for variant in ("none", "hamming", "hamming+", "inline-hamming+"):
            rep = run_session(ChannelConfig(bitlength=n, ecc=variant), tr, msg)
            w.writerow([n, variant, overhead_fraction(n, variant) if variant != "none" else 0.0,
                        rep.correct_pointers,
                        rep.transmitted_bits, rep.payload_bits_received, rep.bps])


if __name__ == "__main__":
    main()

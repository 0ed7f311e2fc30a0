"""Entropy of every input source across rounding levels for synthetic and LAN traces."""

import argparse
import csv
import sys

from shp import analysis as A
from shp.trace import generate_lan_trace, generate_synthetic_trace


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    traces = {"synthetic": generate_synthetic_trace(120, args.duration, seed=args.seed),
              "lan": generate_lan_trace(args.duration, seed=args.seed)}
    w = csv.DictWriter(sys.stdout, ["trace", "source", "epsilon", "samples", "entropy_bits"])
    w.writeheader()
    for name, tr in traces.items():
        for row in A.entropy_table(tr):
            w.writerow({"trace": name, **row})


if __name__ == "__main__":
    main()

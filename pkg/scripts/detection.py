"""KS, compressibility and Markov-surrogate scores on clean versus covert LAN corpora."""

import argparse
import json

import numpy as np

from shp import analysis as A
from shp.core import ChannelConfig
from shp.corpus import clean_corpus, covert_corpus, fit_markov


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--rehash", default="0,2,4")
    p.add_argument("--window", type=int, default=250)
    args = p.parse_args(argv)

    bases = clean_corpus(range(100, 100 + args.count), args.duration)
    clean = clean_corpus(range(args.count), args.duration)
    model, th = fit_markov(clean_corpus(range(500, 505), args.duration), order=2)

    def windows(traces):
        return [s for t in traces
                for s in model.window_scores(A.gas_discretize(A.arp_ipds(t), th), args.window)]

    neg = windows(clean)
    out = {}
    for m in (int(x) for x in args.rehash.split(",")):
        covert, _ = covert_corpus(bases, ChannelConfig(bitlength=8, rehash_bits=m), seed=100)
        sets = A.ks_comparison([A.arp_ipds(t) for t in clean], [A.arp_ipds(t) for t in covert])
        kappas = [k for t in covert for k in A.compressibility_windows(A.arp_ipds(t))]
        out[f"m={m}"] = {
            "ks_mean": {k: float(np.mean(v)) for k, v in sets.items()},
            "ks_gap_sigmas": A.mean_gap_in_sigmas(sets),
            "kappa": A.violin_stats(kappas),
            "markov_auc": A.roc_auc(windows(covert), neg).auc,
        }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()

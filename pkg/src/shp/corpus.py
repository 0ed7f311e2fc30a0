"""Clean and covert trace corpora for detection experiments."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis as A
from .core import ChannelConfig
from .simulator import SENDER_IP, embed_signals, random_message, run_session_detailed
from .trace import Trace, generate_lan_trace, load_trace, save_trace

log = logging.getLogger(__name__)

METHODS = ("ks", "kappa", "frequency", "markov")
DEFAULT_WINDOW = 250  # symbols per Markov scoring window
MESSAGE_BITS = 60000


def clean_corpus(seeds: Sequence[int], duration: float = 600.0) -> list:
    return [generate_lan_trace(duration, seed) for seed in seeds]


def covert_corpus(bases: Sequence[Trace], cfg: ChannelConfig, seed: int = 0,
                  message_bits: int = MESSAGE_BITS) -> tuple:
    """Embed one session per base trace; returns (traces, reports)."""
    traces, reports = [], []
    for i, base in enumerate(bases):
        msg = random_message(message_bits, seed + i)
        result = run_session_detailed(cfg, base, msg)
        traces.append(embed_signals(base, result, cfg))
        reports.append(result.report)
    return traces, reports


def save_corpus(traces: Sequence[Trace], directory, fmt: str = "csv") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(traces):
        p = d / f"trace_{i:03d}.{fmt}"
        save_trace(tr, p, fmt)
        paths.append(p)
    return paths


def load_corpus(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"corpus directory {d} not found")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".csv", ".pcap", ".cap"))
    return [load_trace(p) for p in files]


def fit_markov(training: Sequence[Trace], order: int = 2):
    ipds = [A.arp_ipds(t) for t in training]
    ipds = [x for x in ipds if x.size >= 3]
    if not ipds:
        raise ValueError("training corpus has no usable ARP IPD stream")
    th = A.fit_gas_thresholds(np.concatenate(ipds))
    model = A.MarkovScorer(order=order).fit([A.gas_discretize(x, th) for x in ipds])
    return model, th


def _window_scores(traces, model, th, window):
    out = []
    for t in traces:
        x = A.arp_ipds(t)
        if x.size >= 3:
            out.extend(model.window_scores(A.gas_discretize(x, th), window))
    return out


def detect(clean: Sequence[Trace], suspect: Sequence[Trace], methods: Sequence[str] = METHODS,
           training: Optional[Sequence[Trace]] = None, window: int = DEFAULT_WINDOW,
           order: int = 2, same_corpus: bool = False) -> A.DetectionScorecard:
    """Run the selected warden methods over two corpora.

    Without an explicit training corpus the Markov model is fitted on the
    even-indexed clean traces and scored on the odd-indexed ones.
    """
    unknown = set(methods) - set(METHODS)
    if not methods or unknown:
        raise ValueError(f"methods must be a non-empty subset of {METHODS}")
    card = A.DetectionScorecard()
    if same_corpus:
        card.warnings.append("clean and suspect corpora are identical; SHP-non set is empty")
        log.warning(card.warnings[-1])
    if "ks" in methods:
        cl = [A.arp_ipds(t) for t in clean]
        su = [] if same_corpus else [A.arp_ipds(t) for t in suspect]
        sets = A.ks_comparison([x for x in cl if x.size], [x for x in su if x.size])
        card.ks = {k: {"values": v, "mean": float(np.mean(v)) if v else None,
                       "std": float(np.std(v, ddof=1)) if len(v) > 1 else None}
                   for k, v in sets.items()}
        card.ks_gap_sigmas = A.mean_gap_in_sigmas(sets)
    if "kappa" in methods:
        for name, corpus in (("clean", clean), ("suspect", suspect)):
            ks = [k for t in corpus for k in A.compressibility_windows(A.arp_ipds(t))]
            card.kappa_windows[name] = ks
            card.kappa_summary[name] = A.violin_stats(ks)
    if "frequency" in methods:
        card.request_frequency = {
            "clean": A.request_frequency(Trace([r for t in clean for r in t])),
            "suspect": A.request_frequency(Trace([r for t in suspect for r in t]),
                                           covert_sources=[SENDER_IP]),
        }
    if "markov" in methods:
        if training is None:
            training, negatives = list(clean[::2]), list(clean[1::2]) or list(clean)
        else:
            negatives = list(clean)
        model, th = fit_markov(training, order)
        pos = _window_scores(suspect, model, th, window)
        neg = _window_scores(negatives, model, th, window)
        if pos and neg:
            roc = A.roc_auc(pos, neg)
            card.markov_auc = roc.auc
            card.roc_points = roc.points
        else:
            card.warnings.append("too few ARP IPDs for one Markov window")
    return card

"""Warden-side detection suite and input-source characterisation."""

from __future__ import annotations

import gzip
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import kolmogorov

from .core import INPUT_SOURCES, ChannelConfig, HistoryState, classify_poi, input_value
from .protocol import is_signal_pdu

COMPRESSOR = {"name": "gzip", "level": 6}
KAPPA_WINDOW = 1000
GAS_CLIP = (0.005, 0.995)


class NotFittedError(RuntimeError):
    """Scoring requested from a model that has not been trained."""


# --- entropy ----------------------------------------------------------------


def shannon_entropy(samples: Iterable) -> float:
    """Plug-in entropy in bits of the empirical distribution."""
    counts = Counter(samples)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("entropy of an empty sample")
    h = 0.0
    for c in counts.values():
        p = c / total
        h -= p * math.log2(p)
    return h + 0.0  # avoid -0.0


def source_values(trace, cfg: ChannelConfig) -> list:
    """Rounded input values of every POI under ``cfg`` with no signalling.

    Relative sources are anchored at the first frame, so ISD equals ICD here.
    POIs with no predecessor have no IPD and are left out of that source.
    """
    state = HistoryState()
    records = trace.records if hasattr(trace, "records") else list(trace)
    if not records:
        return []
    state.start(records[0].ts_us)
    out = []
    for r in records:
        if is_signal_pdu(r) or not classify_poi(r, cfg.poi_filter, cfg.subnet):
            continue
        state.poi_count_since_start += 1
        state.poi_count_since_signal += 1
        iv = input_value(state, r, cfg)
        if cfg.inputsource == "IPD":
            if cfg.subchanneling_mode == "none":
                has_prev = state.last_poi_ts is not None
            else:
                has_prev = iv.subchannel in state.per_subchannel_last_ts
        state.observe_poi(r.ts_us, iv.subchannel)
        if cfg.inputsource != "IPD" or has_prev:
            out.append(iv.rounded)
    return out


def entropy_table(trace, sources: Sequence[str] = INPUT_SOURCES,
                  epsilons: Sequence[int] = (0, 1, 2, 3, 4, 5, 6),
                  base: Optional[ChannelConfig] = None) -> list:
    """Rows of (source, epsilon, samples, entropy bits)."""
    base = base or ChannelConfig()
    rows = []
    for src in sources:
        for eps in epsilons:
            cfg = base.replace(inputsource=src, epsilon=eps)
            if src == "ISPN":
                cfg = cfg.replace(ispn_divisor=max(1, eps))
            vals = source_values(trace, cfg)
            h = shannon_entropy(vals) if vals else 0.0
            rows.append({"source": src, "epsilon": eps, "samples": len(vals), "entropy_bits": h})
    return rows


# --- Kolmogorov-Smirnov -----------------------------------------------------


@dataclass(frozen=True)
class KsResult:
    D: float
    p: float


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """sup |F_a - G_b| evaluated at every pooled sample point."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KsResult:
    """Two-sample KS with the asymptotic p-value (effective-n corrected)."""
    d = ks_statistic(a, b)
    n, m = len(a), len(b)
    en = math.sqrt(n * m / (n + m))
    p = float(kolmogorov((en + 0.12 + 0.11 / en) * d))
    return KsResult(d, min(1.0, max(p, np.nextafter(0, 1))))


def ks_comparison(clean: Sequence[Sequence[float]], suspect: Sequence[Sequence[float]]) -> dict:
    """Pairwise D across the non-non, SHP-SHP and SHP-non comparison sets."""
    return {
        "non-non": [ks_statistic(x, y) for x, y in combinations(clean, 2)],
        "shp-shp": [ks_statistic(x, y) for x, y in combinations(suspect, 2)],
        "shp-non": [ks_statistic(x, y) for x in suspect for y in clean],
    }


def mean_gap_in_sigmas(sets: dict) -> Optional[float]:
    """|mean D(SHP-non) - mean D(non-non)| in units of their pooled std."""
    a, b = np.asarray(sets["shp-non"]), np.asarray(sets["non-non"])
    if a.size == 0 or b.size == 0:
        return None
    pooled = np.concatenate([a, b])
    sd = float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0
    gap = abs(float(a.mean()) - float(b.mean()))
    if sd == 0:
        return 0.0 if gap == 0 else math.inf
    return gap / sd


# --- compressibility --------------------------------------------------------


def serialize_ipds(ipds: Sequence[float]) -> bytes:
    return ",".join(f"{x:.6f}" for x in ipds).encode("ascii")


def kappa(data: bytes, level: int = COMPRESSOR["level"]) -> float:
    """1 - |compressed| / |original|."""
    if not data:
        raise ValueError("cannot score an empty string")
    return 1.0 - len(gzip.compress(data, compresslevel=level, mtime=0)) / len(data)


def compressibility_windows(ipds: Sequence[float], window: int = KAPPA_WINDOW,
                            level: int = COMPRESSOR["level"]) -> list:
    """κ per complete window of IPDs; a trailing partial window is dropped."""
    if window < 1:
        raise ValueError("window must be >= 1")
    ipds = list(ipds)
    return [kappa(serialize_ipds(ipds[i:i + window]), level)
            for i in range(0, len(ipds) - window + 1, window)]


def ipds_of(timestamps_us: Sequence[int]) -> np.ndarray:
    return np.diff(np.asarray(timestamps_us, dtype=np.int64)) / 1e6


def arp_ipds(trace) -> np.ndarray:
    """IPDs in seconds between consecutive ARP frames of a trace."""
    return ipds_of([r.ts_us for r in trace if r.ether_type == "arp"])


def violin_stats(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "min": float(v.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(v.max())}


# --- request frequency ------------------------------------------------------


def request_frequency(trace, protocol: str = "arp",
                      covert_sources: Optional[Iterable[str]] = None) -> dict:
    """Per-source request counts; sources in ``covert_sources`` are flagged."""
    counts = Counter(r.src_ip or r.src_mac for r in trace if r.ether_type == protocol)
    flagged = set(covert_sources or ())
    return {src: {"count": c, "covert": src in flagged} for src, c in sorted(counts.items())}


# --- ROC --------------------------------------------------------------------


@dataclass(frozen=True)
class RocResult:
    points: list  # (fpr, tpr, threshold)
    auc: float


def mann_whitney_auc(pos: Sequence[float], neg: Sequence[float]) -> float:
    """P(pos > neg) + 0.5 P(pos == neg)."""
    pos = np.asarray(pos, dtype=float)
    neg = np.sort(np.asarray(neg, dtype=float))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs scores for both classes")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (pos.size * neg.size))


def roc_auc(pos: Sequence[float], neg: Sequence[float]) -> RocResult:
    """Threshold sweep over pooled scores (score >= t flags a positive)."""
    auc = mann_whitney_auc(pos, neg)
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    points = [(0.0, 0.0, None)]  # threshold above every score
    for t in np.unique(np.concatenate([pos, neg]))[::-1]:
        points.append((float(np.mean(neg >= t)), float(np.mean(pos >= t)), float(t)))
    return RocResult(points, auc)


def trapezoid_auc(points: Sequence[tuple]) -> float:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return float(trapezoid(ys, xs))


# --- GAS-style discretisation ----------------------------------------------


@dataclass(frozen=True)
class GasThresholds:
    m_f: float
    m_b: float
    clip_lo: float
    clip_hi: float


@dataclass
class SymbolStream:
    symbols: np.ndarray
    thresholds: GasThresholds

    def __len__(self) -> int:
        return int(self.symbols.size)


def _derivatives(x: np.ndarray) -> tuple:
    f = x[2:] - x[1:-1]
    b = x[:-2] - x[1:-1]
    return f, b


def fit_gas_thresholds(ipds: Sequence[float]) -> GasThresholds:
    """Clip bounds and magnitude medians, fitted once on training data."""
    x = np.asarray(ipds, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 IPDs")
    lo, hi = np.quantile(x, GAS_CLIP, method="inverted_cdf")
    f, b = _derivatives(np.clip(x, lo, hi))
    return GasThresholds(float(np.median(np.abs(f))), float(np.median(np.abs(b))),
                         float(lo), float(hi))


def gas_discretize(ipds: Sequence[float], thresholds: Optional[GasThresholds] = None) -> SymbolStream:
    """16-state code per interior IPD: sign and magnitude of both derivatives."""
    x = np.asarray(ipds, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 IPDs")
    th = thresholds or fit_gas_thresholds(x)
    f, b = _derivatives(np.clip(x, th.clip_lo, th.clip_hi))
    sym = (8 * (f > 0) + 4 * (b > 0) + 2 * (np.abs(f) > th.m_f)
           + (np.abs(b) > th.m_b)).astype(np.int64)
    return SymbolStream(sym, th)


class MarkovScorer:
    """Order-k next-symbol model over a 16-letter alphabet with additive smoothing.

    Stands in for a learned sequence predictor: train on legitimate streams,
    score windows by mean surprisal in bits per symbol.
    """

    def __init__(self, order: int = 1, alpha: float = 1.0, alphabet: int = 16):
        if order < 0:
            raise ValueError("order must be >= 0")
        if alpha <= 0:
            raise ValueError("smoothing must be > 0")
        self.order = order
        self.alpha = alpha
        self.alphabet = alphabet
        self.counts: Optional[dict] = None

    def fit(self, streams: Iterable) -> "MarkovScorer":
        counts: dict = {}
        k = self.order
        for s in streams:
            seq = np.asarray(getattr(s, "symbols", s), dtype=np.int64)
            for i in range(k, seq.size):
                ctx = tuple(seq[i - k:i])
                row = counts.setdefault(ctx, np.zeros(self.alphabet))
                row[seq[i]] += 1
        self.counts = counts
        return self

    def _surprisals(self, seq: np.ndarray) -> np.ndarray:
        if self.counts is None:
            raise NotFittedError("MarkovScorer.fit must run before scoring")
        k, a, A = self.order, self.alpha, self.alphabet
        out = np.empty(max(seq.size - k, 0))
        empty = np.zeros(A)
        for j, i in enumerate(range(k, seq.size)):
            row = self.counts.get(tuple(seq[i - k:i]), empty)
            out[j] = -math.log2((row[seq[i]] + a) / (row.sum() + a * A))
        return out

    def score(self, stream) -> float:
        seq = np.asarray(getattr(stream, "symbols", stream), dtype=np.int64)
        s = self._surprisals(seq)
        if s.size == 0:
            raise ValueError(f"stream shorter than model order + 1 ({self.order + 1})")
        return float(s.mean())

    def window_scores(self, stream, length: int) -> list:
        """Mean surprisal of every complete window of ``length`` symbols."""
        seq = np.asarray(getattr(stream, "symbols", stream), dtype=np.int64)
        s = self._surprisals(seq)
        return [float(s[i:i + length].mean()) for i in range(0, s.size - length + 1, length)]


def markov_surprisal_score(stream, model: MarkovScorer, window: Optional[int] = None):
    """Mean surprisal of ``stream`` (or per window when ``window`` is given)."""
    if window is None:
        return model.score(stream)
    return model.window_scores(stream, window)


# --- scorecard --------------------------------------------------------------


@dataclass
class DetectionScorecard:
    ks: dict = field(default_factory=dict)
    ks_gap_sigmas: Optional[float] = None
    kappa_windows: dict = field(default_factory=dict)
    kappa_summary: dict = field(default_factory=dict)
    request_frequency: dict = field(default_factory=dict)
    markov_auc: Optional[float] = None
    roc_points: list = field(default_factory=list)
    compressor: dict = field(default_factory=lambda: dict(COMPRESSOR))
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.ks_gap_sigmas is not None and not math.isfinite(self.ks_gap_sigmas):
            d["ks_gap_sigmas"] = None  # zero spread; JSON has no infinity
        return d

import gzip
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp
from sklearn.metrics import roc_auc_score

from shp import analysis as A
from shp.core import ChannelConfig
from shp.simulator import SENDER_IP, embed_signals, random_message, run_session_detailed
from shp.trace import generate_lan_trace, generate_synthetic_trace

from .helpers import pdu

floats = st.floats(-1e3, 1e3, allow_nan=False)


# --- entropy ----------------------------------------------------------------


def test_entropy_examples():
    assert A.shannon_entropy([1, 2, 3, 4]) == 2.0
    assert A.shannon_entropy([7] * 10) == 0.0
    assert A.shannon_entropy(["a", "a", "b", "c"]) == 1.5
    with pytest.raises(ValueError):
        A.shannon_entropy([])


def test_entropy_table_orderings():
    tr = generate_synthetic_trace(120, 60, seed=3)
    rows = A.entropy_table(tr, ["timestamp", "IPD"], [3, 6])
    h = {(r["source"], r["epsilon"]): r["entropy_bits"] for r in rows}
    assert h["timestamp", 6] >= h["IPD", 6]
    assert h["timestamp", 3] >= h["IPD", 3]
    assert h["IPD", 6] >= h["IPD", 3]


def test_entropy_unrounded_row_matches_direct_computation():
    tr = generate_synthetic_trace(120, 20, seed=3)
    ts = [r.ts_us for r in tr]
    direct = A.shannon_entropy(list(np.diff(ts)))
    row = A.entropy_table(tr, ["IPD"], [6])[0]
    assert row["entropy_bits"] == pytest.approx(direct)


# --- KS ---------------------------------------------------------------------


def test_ks_examples():
    assert A.ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)
    assert A.ks_statistic([1, 2, 2, 5], [5, 2, 1, 2]) == 0
    assert A.ks_statistic([1, 2], [3, 4]) == 1
    with pytest.raises(ValueError):
        A.ks_two_sample([], [1])


@settings(max_examples=200)
@given(st.lists(floats, min_size=1, max_size=40), st.lists(floats, min_size=1, max_size=40))
def test_ks_matches_scipy_and_is_symmetric(a, b):
    d = A.ks_statistic(a, b)
    with np.errstate(divide="ignore"):  # scipy's asymptotic p-value at n=1
        ref = ks_2samp(a, b, method="asymp").statistic
    assert d == pytest.approx(ref)
    assert d == A.ks_statistic(b, a)
    assert A.ks_statistic(a, a) == 0
    assert 0 < A.ks_two_sample(a, b).p <= 1


def test_ks_p_value_behaviour():
    rng = np.random.default_rng(1)
    same = A.ks_two_sample(rng.normal(size=500), rng.normal(size=500))
    shifted = A.ks_two_sample(rng.normal(size=500), rng.normal(1, 1, size=500))
    assert same.p > 0.01 and shifted.p < 1e-6


def test_ks_comparison_sets_and_gap():
    sets = A.ks_comparison([[1, 2, 3], [1, 2, 4], [2, 3, 4]], [[5, 6], [6, 7]])
    assert len(sets["non-non"]) == 3 and len(sets["shp-shp"]) == 1 and len(sets["shp-non"]) == 6
    assert A.mean_gap_in_sigmas({"non-non": [0.1, 0.2], "shp-non": []}) is None


# --- compressibility --------------------------------------------------------


def test_kappa_formula():
    data = b"0.123456," * 200
    assert A.kappa(data) == 1 - len(gzip.compress(data, compresslevel=6, mtime=0)) / len(data)


def test_serialization_format():
    assert A.serialize_ipds([0.1, 1.25]) == b"0.100000,1.250000"


def test_constant_window_highly_compressible():
    assert A.compressibility_windows([0.01] * 1000) == [pytest.approx(0.9934, abs=1e-3)]
    assert A.compressibility_windows([0.01] * 1000)[0] > 0.9


def test_random_window_compressibility():
    # oracle run of gzip-6 on U[0,1) IPDs in the 6-decimal form gives 0.564..0.571
    rng = np.random.default_rng(0)
    ks = A.compressibility_windows(rng.uniform(0, 1, 10_000))
    assert len(ks) == 10
    assert all(0.55 < k < 0.6 for k in ks)


def test_partial_window_dropped():
    assert A.compressibility_windows([0.1] * 999) == []
    assert len(A.compressibility_windows([0.1] * 2500)) == 2


# --- request frequency ------------------------------------------------------


def test_request_frequency_counts():
    tr = [pdu(1, src_ip="A"), pdu(2, src_ip="A"), pdu(3, src_ip="B"), pdu(4, src_ip="A"),
          pdu(5, src_ip="C", ether_type="ipv4")]
    hist = A.request_frequency(tr, covert_sources=["B"])
    assert {k: v["count"] for k, v in hist.items()} == {"A": 3, "B": 1}
    assert hist["B"]["covert"] and not hist["A"]["covert"]
    assert A.request_frequency([]) == {}


def test_covert_request_share_bounded_by_session_report():
    cfg = ChannelConfig(bitlength=8)
    # LAN hosts never use the simulated sender's address, so its count is exact
    base = generate_lan_trace(300, seed=5)
    res = run_session_detailed(cfg, base, random_message(20_000, 1))
    rep = res.report
    hist = A.request_frequency(embed_signals(base, res, cfg), covert_sources=[SENDER_IP])
    covert = hist[SENDER_IP]["count"]
    total = sum(v["count"] for v in hist.values())
    control = sum(v for k, v in rep.signals_sent.items() if k != "DATA" and k != "RETRY")
    assert covert == rep.signals_sent["DATA"] + control
    # binomial match count with p = 2^-8, plus three-sigma slack
    expected = rep.attempts / 256
    bound = expected + 3 * np.sqrt(expected) + control
    assert covert / total <= bound / total


# --- ROC --------------------------------------------------------------------


def test_auc_examples():
    assert A.roc_auc([0.9, 0.4], [0.5, 0.1]).auc == 0.75
    assert A.roc_auc([5, 6, 7], [1, 2, 3]).auc == 1.0
    rng = np.random.default_rng(0)
    assert abs(A.roc_auc(rng.normal(size=4000), rng.normal(size=4000)).auc - 0.5) < 0.02
    with pytest.raises(ValueError):
        A.roc_auc([], [1.0])


@settings(max_examples=100)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=30),
       st.lists(st.integers(0, 20), min_size=1, max_size=30))
def test_auc_matches_sklearn_and_trapezoid(pos, neg):
    roc = A.roc_auc(pos, neg)
    y = [1] * len(pos) + [0] * len(neg)
    assert roc.auc == pytest.approx(roc_auc_score(y, pos + neg))
    assert A.trapezoid_auc(roc.points) == pytest.approx(roc.auc)
    assert roc.points[0][:2] == (0.0, 0.0) and roc.points[-1][:2] == (1.0, 1.0)


# --- GAS discretisation -----------------------------------------------------


def test_gas_example():
    s = A.gas_discretize([1.0, 3.0, 2.0, 2.5])
    assert s.thresholds.m_f == 0.75 and s.thresholds.m_b == 1.5
    assert s.symbols.tolist() == [3, 12]


def test_gas_constant_and_errors():
    assert A.gas_discretize([0.5] * 10).symbols.tolist() == [0] * 8
    with pytest.raises(ValueError):
        A.gas_discretize([1.0, 2.0])


def test_gas_frozen_thresholds_reused():
    rng = np.random.default_rng(2)
    train, val = rng.exponential(size=500), rng.exponential(size=300)
    th = A.fit_gas_thresholds(train)
    a = A.gas_discretize(val, th)
    b = A.gas_discretize(val, th)
    assert a.thresholds == th and np.array_equal(a.symbols, b.symbols)


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=3, max_size=200))
def test_gas_alphabet(ipds):
    s = A.gas_discretize(ipds)
    assert len(s) == len(ipds) - 2
    assert s.symbols.min() >= 0 and s.symbols.max() < 16


# --- Markov -----------------------------------------------------------------


def test_markov_requires_fit():
    with pytest.raises(A.NotFittedError):
        A.MarkovScorer().score([1, 2, 3])


def test_markov_deterministic_stream():
    seq = [0, 1, 2, 3] * 500
    model = A.MarkovScorer(order=1, alpha=1e-9).fit([seq])
    assert A.markov_surprisal_score(seq, model) < 1e-6


def test_markov_uniform_stream():
    rng = np.random.default_rng(4)
    seq = rng.integers(0, 16, 200_000)
    model = A.MarkovScorer(order=1).fit([seq])
    assert A.markov_surprisal_score(seq, model) == pytest.approx(4.0, abs=0.1)


def test_markov_training_stream_scores_lower_than_random():
    rng = np.random.default_rng(5)
    seq = np.repeat(rng.integers(0, 16, 1000), 3)
    model = A.MarkovScorer(order=2).fit([seq])
    assert model.score(seq) <= model.score(rng.integers(0, 16, 3000))
    wins = A.markov_surprisal_score(seq, model, window=250)
    assert len(wins) == (seq.size - 2) // 250


def test_scorecard_json_safe():
    card = A.DetectionScorecard(ks_gap_sigmas=float("inf"))
    card.roc_points = A.roc_auc([1.0], [0.0]).points
    json.dumps(card.to_dict(), allow_nan=False)

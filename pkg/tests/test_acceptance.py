"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The verdict lines are also collected and repeated in the pytest terminal
summary (see conftest.py), so they show up without ``-s``.
"""

import itertools
import time
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import binomtest

from shp import analysis as A
from shp.core import ChannelConfig, InputValue, deskew_bits, floor_us
from shp.corpus import clean_corpus, covert_corpus, fit_markov
from shp.ecc import (
    codeword_length,
    decode_fragment,
    encode_fragment,
    hamming_parity_count,
    overhead_fraction,
)
from shp.protocol import PointerSignal, pack_pointer, unpack_pointer
from shp.search import Evaluator, ParameterSpace, SessionTemplate, initial_population, sga_step
from shp.simulator import random_message, run_session, run_session_detailed
from shp.trace import (
    ImpairmentConfig,
    generate_lan_trace,
    generate_synthetic_trace,
    impair,
    load_trace,
    save_trace,
)

RESULTS = []
NS = (2, 3, 4, 8)


def verdict(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# --- 1: geometric matching law ----------------------------------------------


def _mean_attempts_per_match(n, pois, seed):
    """Sequential matching of deskewed uniform ICD samples against a message."""
    rng = np.random.default_rng(seed)
    gaps = rng.uniform(0.5, 1.5, pois) * 5000
    icd = np.cumsum(gaps).astype(np.int64)
    msg = random_message(pois, seed)
    key = ChannelConfig().shared_key
    pos, matches = 0, 0
    for raw in icd.tolist():
        bits = deskew_bits(InputValue(raw, floor_us(raw, 6)), key, n)
        if bits == msg[pos:pos + n]:
            matches += 1
            pos += n
    return pois / matches


def test_criterion_01_geometric_law():
    t0 = time.time()
    # 10^5 POIs for small n; n=8 needs ~4000 matches to bound its own noise at 5%
    pois = {2: 100_000, 3: 100_000, 4: 100_000, 8: 1_000_000}
    ratio = {n: _mean_attempts_per_match(n, pois[n], seed=n) / 2 ** n for n in NS}
    elapsed = time.time() - t0
    ok = all(abs(r - 1) < 0.05 for r in ratio.values()) and elapsed < 60
    verdict(1, ok, "mean/2^n " + " ".join(f"n={n}:{r:.3f}" for n, r in ratio.items())
            + f" in {elapsed:.1f}s")


# --- 2: phi band ------------------------------------------------------------


def test_criterion_02_phi_band():
    lan = ImpairmentConfig(jitter=0.00025, seed=0)
    phis = []
    for n, (mode, bits) in itertools.product((2, 3, 4), (("none", 0), ("iphash", 2))):
        cfg = ChannelConfig(inputsource="ISD", bitlength=n, subchanneling_mode=mode,
                            subchanneling_bits=bits)
        for seed in range(5):
            tr = generate_synthetic_trace(120, 60, seed=seed)
            rx = ImpairmentConfig(lan.delay, lan.jitter, lan.loss, seed)
            rep = run_session(cfg, tr, random_message(20_000, seed), receiver_impair=rx,
                              processing_delay_us=500)
            phis.append(rep.phi)
    ok = len(phis) == 30 and all(p is not None and 0.70 <= p <= 1.00 for p in phis)
    verdict(2, ok, f"phi range [{min(phis):.3f}, {max(phis):.3f}] over {len(phis)} sessions")


# --- 3: ECC exhaustiveness --------------------------------------------------


def _flip(word, positions):
    w = list(word)
    for p in positions:
        w[p] = "1" if w[p] == "0" else "0"
    return "".join(w)


def test_criterion_03_ecc_exhaustive():
    single = double = 0
    ok = True
    for n in NS:
        for data in ("".join(b) for b in itertools.product("01", repeat=n)):
            word = encode_fragment(data, "hamming+").bits
            for i in range(len(word)):
                out, st = decode_fragment(_flip(word, [i]), n, "hamming+")
                ok &= st.kind == "corrected" and out == data
                single += 1
            for pair in itertools.combinations(range(len(word)), 2):
                _, st = decode_fragment(_flip(word, pair), n, "hamming+")
                ok &= st.kind == "uncorrectable"
                double += 1
    parity = {n: hamming_parity_count(n) for n in NS}
    ok &= parity == {2: 3, 3: 3, 4: 3, 8: 4}
    expected = {2: (150, 200), 3: (100, 133.3), 4: (75, 100), 8: (50, 62.5)}
    for n, (h, hp) in expected.items():
        ok &= abs(100 * overhead_fraction(n, "hamming") - h) < 0.05
        ok &= abs(100 * overhead_fraction(n, "hamming+") - hp) < 0.05
        ok &= codeword_length(n, "hamming+") == n + parity[n] + 1
    verdict(3, ok, f"{single} single and {double} double error patterns, parity {parity}")


# --- 4: ECC throughput ordering ---------------------------------------------


def test_criterion_04_ecc_ordering():
    tr = generate_synthetic_trace(120, 90, seed=7)
    msg = random_message(20_000, 7)
    bits = {}
    for n in (2, 4):
        for variant in ("hamming", "hamming+", "inline-hamming+"):
            rep = run_session(ChannelConfig(bitlength=n, ecc=variant), tr, msg)
            bits[n, variant] = rep.transmitted_bits
    ok = all(bits[n, "inline-hamming+"] > bits[n, "hamming+"] > bits[n, "hamming"]
             for n in (2, 4))
    detail = "; ".join(f"n={n}: " + ">".join(str(bits[n, v]) for v in
                       ("inline-hamming+", "hamming+", "hamming")) for n in (2, 4))
    verdict(4, ok, "transmitted bits " + detail)


# --- 5: loss robustness -----------------------------------------------------


def test_criterion_05_loss():
    t0 = time.time()
    cfg = ChannelConfig()
    total = {0.0: 0.0, 0.02: 0.0, 0.10: 0.0}
    for i in range(20):
        seed = 200 + i
        tr = generate_synthetic_trace(120, 60, seed=seed)
        msg = random_message(20_000, seed)
        for loss in total:
            rx = ImpairmentConfig(loss=loss, seed=seed)
            total[loss] += run_session(cfg, tr, msg, receiver_impair=rx).bps
    r10, r02 = total[0.10] / total[0.0], total[0.02] / total[0.0]
    elapsed = time.time() - t0
    ok = 0.60 <= r10 <= 0.85 and r02 >= 0.90 and elapsed < 300
    verdict(5, ok, f"bps ratio loss 10%: {r10:.3f}, loss 2%: {r02:.3f} in {elapsed:.0f}s")


# --- 6: jitter / rounding crossover -----------------------------------------


def test_criterion_06_jitter_crossover():
    wins = {0.002: 0, 0.0: 0}
    for i in range(20):
        seed = 300 + i
        tr = generate_synthetic_trace(120, 120, seed=seed)
        msg = random_message(20_000, seed)
        for jitter in wins:
            rx = ImpairmentConfig(jitter=jitter, seed=seed)
            good = {eps: run_session(ChannelConfig(inputsource="ICD", bitlength=4, epsilon=eps),
                                     tr, msg, receiver_impair=rx).correct_pointers
                    for eps in (1, 6)}
            # with jitter coarse rounding should win; without it fine rounding should
            wins[jitter] += good[1] > good[6] if jitter else good[6] > good[1]
    p_jit = binomtest(wins[0.002], 20, alternative="greater").pvalue
    p_clean = binomtest(wins[0.0], 20, alternative="greater").pvalue
    ok = p_jit < 0.05 and p_clean < 0.05
    verdict(6, ok, f"2 ms jitter: eps=1 wins {wins[0.002]}/20 (p={p_jit:.2g}); "
                   f"no jitter: eps=6 wins {wins[0.0]}/20 (p={p_clean:.2g})")


# --- 7: delay invariance ----------------------------------------------------


def test_criterion_07_delay_invariance():
    tr = generate_synthetic_trace(120, 60, seed=17)
    msg = random_message(2_000, 17)
    ok = True
    checked = 0
    for src in ("ISD", "ICD"):
        cfg = ChannelConfig(inputsource=src, bitlength=4)
        values = A.source_values(tr, cfg)
        base = run_session_detailed(cfg, tr, msg)
        for delay in (0.0001, 0.0173, 0.1, 0.3):
            shifted = impair(tr, ImpairmentConfig(delay=delay))
            ok &= A.source_values(shifted, cfg) == values
            res = run_session_detailed(cfg, tr, msg, receiver_impair=ImpairmentConfig(delay=delay))
            ok &= res.received_bits == base.received_bits
            ok &= res.report.message_bits_delivered == base.report.message_bits_delivered
            checked += 1
    verdict(7, ok, f"{checked} delayed sessions, delivered bits "
                   f"{base.report.message_bits_delivered} unchanged up to 300 ms")


# --- 8 and 9: detection -----------------------------------------------------


@pytest.fixture(scope="module")
def detection_corpora():
    bases = clean_corpus(range(100, 110), 600)
    covert = {m: covert_corpus(bases, ChannelConfig(bitlength=8, rehash_bits=m), seed=100)[0]
              for m in (0, 2, 4)}
    clean = clean_corpus(range(10), 600)
    training = clean_corpus(range(500, 505), 600)
    return clean, covert, training


def test_criterion_08_ks_indistinguishable(detection_corpora):
    clean, covert, _ = detection_corpora
    sets = A.ks_comparison([A.arp_ipds(t) for t in clean], [A.arp_ipds(t) for t in covert[0]])
    gap = A.mean_gap_in_sigmas(sets)
    ok = gap is not None and gap < 1.0
    verdict(8, ok, f"mean D shp-non {np.mean(sets['shp-non']):.4f} vs non-non "
                   f"{np.mean(sets['non-non']):.4f}, gap {gap:.3f} sigma")


def test_criterion_09_compressibility_and_markov(detection_corpora):
    clean, covert, training = detection_corpora
    med = {m: float(np.median([k for t in covert[m]
                               for k in A.compressibility_windows(A.arp_ipds(t))]))
           for m in (0, 2, 4)}
    model, th = fit_markov(training, order=2)

    def windows(traces):
        return [s for t in traces
                for s in model.window_scores(A.gas_discretize(A.arp_ipds(t), th), 250)]

    auc = A.roc_auc(windows(covert[0]), windows(clean)).auc
    ok = med[0] >= med[2] >= med[4] and 0.4 <= auc <= 0.6
    verdict(9, ok, f"median kappa m=0 {med[0]:.4f} >= m=2 {med[2]:.4f} >= m=4 {med[4]:.4f}; "
                   f"Markov AUC {auc:.3f}")


# --- 10: determinism and round trips ----------------------------------------


def test_criterion_10_determinism_round_trips(tmp_path):
    ok = True
    tr = generate_synthetic_trace(120, 30, seed=23)
    imp = ImpairmentConfig(jitter=0.002, loss=0.05, seed=23)
    cfg = ChannelConfig(inputsource="ISD", bitlength=4, ecc="hamming+", oood_bits=2)
    reports = [run_session(cfg, tr, random_message(4_000, 23), imp, imp).to_json().encode()
               for _ in range(2)]
    ok &= reports[0] == reports[1]

    packed = 0
    for m in range(9):
        for s in range(9 - m):
            layout = SimpleNamespace(rehash_bits=m, oood_bits=s)
            rehash_range = range(1 << m) if s else range(256)
            for kind, r, o, wd in itertools.product(("RETRY", "DATA", "START", "STOP"),
                                                    rehash_range, range(1 << s), range(64)):
                sig = PointerSignal(kind, r, o, wd)
                ok &= unpack_pointer(*pack_pointer(sig, m, s), layout) == sig
                packed += 1

    lan = generate_lan_trace(60, seed=23)
    for name in ("t.pcap", "t.csv"):
        save_trace(lan, tmp_path / name)
        back = load_trace(tmp_path / name)
        ok &= back.records == lan.records
        save_trace(back, tmp_path / ("again_" + name))
        ok &= (tmp_path / name).read_bytes() == (tmp_path / ("again_" + name)).read_bytes()

    evaluator = Evaluator(SessionTemplate(duration=2.0, message_bits=1024))
    pop = initial_population(ParameterSpace(), 8, evaluator, seed=23)
    for _ in range(30):
        pop = sga_step(pop, evaluator)
    hist = pop.best_history
    ok &= len(hist) == 31 and all(b >= a for a, b in zip(hist, hist[1:]))
    verdict(10, ok, f"reports identical, {packed} pointers round-tripped, pcap/csv identity, "
                    f"best fitness {hist[0]:.3f} -> {hist[-1]:.3f} over 30 generations")

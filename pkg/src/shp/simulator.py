"""Deterministic trace-driven sessions between one covert sender and receiver.

Both agents watch the same capture through their own impairment model.  A
single event heap orders everything by (timestamp, class, insertion order)
with overt frames before timers before signals at equal timestamps.

RNG streams per session seed: 0 sender overt view, 1 receiver overt view,
2 signals towards the receiver, 3 signals towards the sender.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import ecc, metrics
from .core import US_PER_S, ChannelConfig, ProtocolStateError
from .protocol import (
    HEADER_BITS,
    START_COPIES,
    CovertReceiver,
    CovertSender,
    PointerSignal,
    signal_to_pdu,
)
from .trace import ImpairmentConfig, Impairer, Trace, impair, merge_records

log = logging.getLogger(__name__)

OVERT, TIMER, SIGNAL = 0, 1, 2
SENDER_MAC, SENDER_IP = "02:00:c0:a8:01:fa", "192.168.1.250"
RECEIVER_MAC, RECEIVER_IP = "02:00:c0:a8:01:fb", "192.168.1.251"


@dataclass
class SessionReport:
    bitlength: int
    ecc: str
    caf: float
    pois_observed: int
    pois_used: int
    attempts: int
    matches: int
    signals_sent: dict
    signals_lost: int
    data_received: int
    fragments_ok: int
    fragments_corrected: int
    fragments_failed: int
    retries: int
    duplicates: int
    orphan_signals: int
    correct_pointers: int
    mean_distance: Optional[float]
    duration: float
    stopped: bool
    message_bits: int
    message_bits_delivered: int
    message_complete: bool
    payload_bits_received: float
    transmitted_bits: int
    correct_data_bits: float
    bps: float
    overt_bits: int
    sbw: Optional[float]
    phi: Optional[float]
    n_ecc: int
    n_pr: int
    fitness: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class SessionResult:
    report: SessionReport
    sender_signals: list = field(default_factory=list)  # (emit ts, PointerSignal)
    receiver_signals: list = field(default_factory=list)
    received_bits: Optional[str] = None


def _data_bits_per_pointer(n: int, variant: str) -> float:
    if variant == "inline-hamming+":
        return n * n / ecc.codeword_length(n, "hamming+")
    return float(n)


def payload_bits_received(sender: CovertSender, receiver: CovertReceiver, message_len: int) -> float:
    """Payload bits carried by correctly stored fragments (header excluded)."""
    n = sender.n
    lo, hi = HEADER_BITS, HEADER_BITS + message_len
    total = 0
    for i, bits in receiver.fragments.items():
        if i < len(sender.fragments) and bits == sender.fragments[i]:
            total += max(0, min(hi, (i + 1) * n) - max(lo, i * n))
    if sender.cfg.ecc == "inline-hamming+":
        # fragments carry expanded stream bits; scale to the data share
        return total * n / ecc.codeword_length(n, "hamming+")
    return float(total)


def delivered_bits(sent: str, received: Optional[str]) -> int:
    """Positionally correct payload bits."""
    if not received:
        return 0
    return sum(a == b for a, b in zip(sent, received))


def run_session_detailed(config: ChannelConfig, trace: Trace, message: str,
                         sender_impair: Optional[ImpairmentConfig] = None,
                         receiver_impair: Optional[ImpairmentConfig] = None,
                         processing_delay_us: int = 0,
                         start_copies: int = START_COPIES) -> SessionResult:
    config.validate()
    sender_impair = sender_impair or ImpairmentConfig()
    receiver_impair = receiver_impair or ImpairmentConfig()
    sender_view = impair(trace, sender_impair, 0)
    receiver_view = impair(trace, receiver_impair, 1)
    to_receiver = Impairer(receiver_impair, 2)
    to_sender = Impairer(sender_impair, 3)

    sender = CovertSender(config, message, processing_delay_us, start_copies)
    receiver = CovertReceiver(config, processing_delay_us)
    heap: list = []
    counter = 0

    def push(ts, cls, kind, payload=None):
        nonlocal counter
        heapq.heappush(heap, (ts, cls, counter, kind, payload))
        counter += 1

    for r in sender_view.records:
        push(r.ts_us, OVERT, "s_pdu", r)
    for r in receiver_view.records:
        push(r.ts_us, OVERT, "r_pdu", r)

    sender_signals, receiver_signals = [], []
    lost = 0
    emissions_by_id = {}
    correct = 0

    def emit_from_sender(sig: PointerSignal):
        nonlocal lost
        sender_signals.append((sig.emit_ts, sig))
        if sig.msg_type == "DATA":
            emissions_by_id[len(sender_signals) - 1] = sender.emissions[-1]
        arrival = to_receiver.apply(sig.emit_ts)
        if arrival is None:
            lost += 1
            return
        push(arrival, SIGNAL, "r_sig", (sig, len(sender_signals) - 1))

    def emit_from_receiver(sig: PointerSignal):
        nonlocal lost
        receiver_signals.append((sig.emit_ts, sig))
        arrival = to_sender.apply(sig.emit_ts)
        if arrival is None:
            lost += 1
            return
        push(arrival, SIGNAL, "s_sig", sig)

    def sender_timer():
        d = sender.deadline()
        if d is not None:
            push(d, TIMER, "s_timer")

    def receiver_timer():
        d = receiver.silence.deadline()
        if d is not None:
            push(d, TIMER, "r_timer")

    end_ts = 0
    if sender_view.records:
        for sig in sender.start(sender_view.records[0].ts_us):
            emit_from_sender(sig)
        end_ts = sender_view.records[-1].ts_us
    else:
        log.warning("sender view is empty; no session started")

    while heap:
        ts, _, _, kind, payload = heapq.heappop(heap)
        if kind == "s_pdu":
            if sender.started:
                for sig in sender.step(payload):
                    emit_from_sender(sig)
                sender_timer()
        elif kind == "s_timer":
            for sig in sender.advance(ts):
                emit_from_sender(sig)
        elif kind == "s_sig":
            if payload.msg_type == "RETRY":
                sender.on_retry(payload)
        elif kind == "r_pdu":
            receiver.step(payload)
            receiver_timer()
        elif kind == "r_timer":
            receiver.advance(ts)
        elif kind == "r_sig":
            sig, sid = payload
            try:
                out = receiver.step(sig, now=ts)
            except ProtocolStateError:
                continue
            if sig.msg_type == "DATA":
                em = emissions_by_id[sid]
                if receiver.last_bits == em.matched_bits:
                    correct += 1
            if isinstance(out, PointerSignal):
                emit_from_receiver(out)

    if receiver.message is None:
        receiver.finalize()
    received = receiver.message.bits if receiver.message else None

    n = config.bitlength
    start_ts = sender.history.connection_start_ts
    stop_ts = sender.stop_ts if sender.stop_ts is not None else end_ts
    duration = (stop_ts - start_ts) / US_PER_S if start_ts is not None else 0.0
    overt_bits = sum(8 * r.length for r in sender_view.records
                     if start_ts is not None and start_ts < r.ts_us <= stop_ts)
    rs, ss = receiver.stats, sender.stats
    transmitted = n * correct
    correct_data = correct * _data_bits_per_pointer(n, config.ecc)
    bps = correct_data / duration if duration > 0 else 0.0
    mean_dist = metrics.mean_distance(ss.distances)
    caf_value = metrics.caf(n, config.rehash_bits, config.oood_bits)
    n_pr = rs.data_received
    n_ecc = rs.fragments_ok + rs.fragments_corrected
    delivered = delivered_bits(message, received)
    payload = payload_bits_received(sender, receiver, len(message))
    phi = None
    if ss.pois_observed:
        phi = metrics.phi_ratio(payload / ss.pois_observed, n)
    signals = dict(ss.signals_sent)
    signals["RETRY"] = rs.signals_sent["RETRY"]
    report = SessionReport(
        bitlength=n,
        ecc=config.ecc,
        caf=caf_value,
        pois_observed=ss.pois_observed,
        pois_used=ss.pois_used,
        attempts=ss.attempts,
        matches=ss.matches,
        signals_sent=signals,
        signals_lost=lost,
        data_received=n_pr,
        fragments_ok=rs.fragments_ok,
        fragments_corrected=rs.fragments_corrected,
        fragments_failed=rs.fragments_failed,
        retries=rs.retries,
        duplicates=rs.duplicates,
        orphan_signals=rs.orphan_signals,
        correct_pointers=correct,
        mean_distance=mean_dist,
        duration=duration,
        stopped=sender.stopped,
        message_bits=len(message),
        message_bits_delivered=delivered,
        message_complete=bool(receiver.message and receiver.message.complete
                              and delivered == len(message)),
        payload_bits_received=payload,
        transmitted_bits=transmitted,
        correct_data_bits=correct_data,
        bps=bps,
        overt_bits=overt_bits,
        sbw=metrics.sbw(overt_bits / duration, mean_dist) if duration > 0 else None,
        phi=phi,
        n_ecc=n_ecc,
        n_pr=n_pr,
        fitness=metrics.fitness(bps, n_ecc, n_pr, caf_value),
    )
    return SessionResult(report, sender_signals, receiver_signals, received)


def run_session(config: ChannelConfig, trace: Trace, message: str,
                sender_impair: Optional[ImpairmentConfig] = None,
                receiver_impair: Optional[ImpairmentConfig] = None,
                processing_delay_us: int = 0,
                start_copies: int = START_COPIES) -> SessionReport:
    """Run one covert session over ``trace`` and summarise it."""
    return run_session_detailed(config, trace, message, sender_impair, receiver_impair,
                                processing_delay_us, start_copies).report


def embed_signals(trace: Trace, result: SessionResult, config: ChannelConfig,
                  include_retries: bool = True) -> Trace:
    """The capture as a warden would see it: overt frames plus the pointer ARPs."""
    frames = [signal_to_pdu(sig, ts, SENDER_MAC, SENDER_IP, config)
              for ts, sig in result.sender_signals]
    if include_retries:
        frames += [signal_to_pdu(sig, ts, RECEIVER_MAC, RECEIVER_IP, config)
                   for ts, sig in result.receiver_signals]
    frames.sort(key=lambda r: r.ts_us)
    return Trace(merge_records(trace.records, frames), trace.source + "+shp", trace.epoch)


def random_message(bits: int, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    return "".join(map(str, rng.integers(0, 2, bits)))


__all__ = [
    "HEADER_BITS", "SessionReport", "SessionResult", "run_session", "run_session_detailed",
    "embed_signals", "random_message", "delivered_bits",
]

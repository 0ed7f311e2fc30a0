"""Covert sender/receiver state machines and the pointer signal channel.

Pointers travel as ARP requests for 127.55.<octet3>.<octet4>.  Octet 3
carries the rehash iteration (low ``m`` bits) and the out-of-order offset
(next ``s`` bits); octet 4 carries a 2-bit message type above a 6-bit
watchdog checksum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from . import ecc
from .core import (
    ChannelConfig,
    ConfigError,
    HistoryState,
    InputValue,
    PduRecord,
    ProtocolStateError,
    classify_poi,
    deskew_bits,
    digest,
    first_bits,
    input_value,
    subchannel_of,
)

log = logging.getLogger(__name__)

TYPE_CODES = {"RETRY": 0b00, "DATA": 0b01, "START": 0b10, "STOP": 0b11}
CODE_TYPES = {v: k for k, v in TYPE_CODES.items()}
SIGNAL_PREFIX = "127.55."
HEADER_BITS = 16  # payload bit-length preamble sent ahead of the message
START_COPIES = 3


def start_spacing_us(cfg: ChannelConfig) -> int:
    """Gap between redundant START copies; copy k carries k in octet 3."""
    return max(cfg.silence_us, 1000)


@dataclass(frozen=True)
class PointerSignal:
    msg_type: str
    rehash_count: int = 0
    oood_seq: int = 0
    watchdog: int = 0
    emit_ts: int = 0


def _octet_layout(rehash_bits: int, oood_bits: int) -> None:
    if rehash_bits < 0 or oood_bits < 0 or rehash_bits + oood_bits > 8:
        raise ConfigError(
            f"rehash_bits={rehash_bits} + oood_bits={oood_bits} exceed octet capacity"
        )


def pack_pointer(sig: PointerSignal, rehash_bits: int = 0, oood_bits: int = 0) -> tuple[int, int]:
    """Third and fourth octet of the ARP target address for ``sig``."""
    _octet_layout(rehash_bits, oood_bits)
    if sig.msg_type not in TYPE_CODES:
        raise ValueError(f"unknown signal type {sig.msg_type!r}")
    if not 0 <= sig.watchdog < 64:
        raise ValueError("watchdog must fit 6 bits")
    if oood_bits:
        if not 0 <= sig.rehash_count < (1 << rehash_bits):
            raise ValueError(f"rehash_count {sig.rehash_count} exceeds {rehash_bits} bits")
        if not 0 <= sig.oood_seq < (1 << oood_bits):
            raise ValueError(f"oood_seq {sig.oood_seq} exceeds {oood_bits} bits")
        octet3 = sig.rehash_count | (sig.oood_seq << rehash_bits)
    else:
        if not 0 <= sig.rehash_count < 256 or sig.oood_seq:
            raise ValueError("rehash_count must fit one octet and oood_seq must be 0")
        octet3 = sig.rehash_count
    return octet3, (TYPE_CODES[sig.msg_type] << 6) | sig.watchdog


def unpack_pointer(octet3: int, octet4: int, config: Optional[ChannelConfig] = None,
                   emit_ts: int = 0) -> PointerSignal:
    rehash_bits = config.rehash_bits if config else 0
    oood_bits = config.oood_bits if config else 0
    if oood_bits:
        rehash = octet3 & ((1 << rehash_bits) - 1)
        oood = (octet3 >> rehash_bits) & ((1 << oood_bits) - 1)
    else:
        rehash, oood = octet3, 0
    return PointerSignal(CODE_TYPES[(octet4 >> 6) & 0b11], rehash, oood, octet4 & 0x3F, emit_ts)


def signal_target_ip(sig: PointerSignal, config: Optional[ChannelConfig] = None) -> str:
    m = config.rehash_bits if config else 0
    s = config.oood_bits if config else 0
    o3, o4 = pack_pointer(sig, m, s)
    return f"{SIGNAL_PREFIX}{o3}.{o4}"


def is_signal_pdu(pdu: PduRecord) -> bool:
    return pdu.ether_type == "arp" and bool(pdu.dst_ip) and pdu.dst_ip.startswith(SIGNAL_PREFIX)


def signal_to_pdu(sig: PointerSignal, ts_us: int, src_mac: str, src_ip: str,
                  config: Optional[ChannelConfig] = None) -> PduRecord:
    return PduRecord(ts_us, src_mac, "ff:ff:ff:ff:ff:ff", "arp", 42, src_ip,
                     signal_target_ip(sig, config))


def pdu_to_signal(pdu: PduRecord, config: Optional[ChannelConfig] = None) -> PointerSignal:
    if not is_signal_pdu(pdu):
        raise ValueError("frame is not a covert signal")
    o3, o4 = (int(x) for x in pdu.dst_ip.split(".")[2:])
    return unpack_pointer(o3, o4, config, pdu.ts_us)


def watchdog_checksum(fragment: str, key: bytes) -> int:
    if not fragment:
        raise ValueError("watchdog needs a non-empty fragment")
    return first_bits(digest(key, b"wd", fragment.encode("ascii")), 6)


# --- silence interval -------------------------------------------------------


def _ts(item) -> int:
    return item if isinstance(item, int) else item.ts_us


def apply_silence_interval(pois: Sequence, phi_ms: float) -> list:
    """Keep only POIs with no other POI closer than ``phi_ms`` on either side.

    Items are PduRecords or bare microsecond timestamps.
    """
    times = [_ts(p) for p in pois]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("POI stream is not time-ordered")
    phi = int(round(phi_ms * 1000))
    if phi == 0:
        return list(pois)
    kept = []
    for i, p in enumerate(pois):
        t = times[i]
        if i > 0 and t - times[i - 1] < phi:
            continue
        if i + 1 < len(times) and times[i + 1] - t < phi:
            continue
        kept.append(p)
    return kept


class SilenceFilter:
    """Streaming form of :func:`apply_silence_interval`.

    A POI is held until ``phi`` has passed without another POI; it is then
    released.  Release times are therefore ``poi.ts + phi``.
    """

    def __init__(self, phi_us: int):
        self.phi = phi_us
        self.prev_ts: Optional[int] = None
        self.candidate: Optional[PduRecord] = None

    def push(self, poi: PduRecord) -> list[PduRecord]:
        released = self.release_due(poi.ts_us)
        if self.prev_ts is not None and poi.ts_us < self.prev_ts:
            raise ValueError("POI stream is not time-ordered")
        if self.candidate is not None:
            # a pending candidate still here has a neighbour closer than phi
            self.candidate = None
        isolated_before = self.prev_ts is None or poi.ts_us - self.prev_ts >= self.phi
        self.prev_ts = poi.ts_us
        if isolated_before:
            self.candidate = poi
        return released + self.release_due(poi.ts_us)

    def release_due(self, now: int) -> list[PduRecord]:
        c = self.candidate
        if c is not None and now - c.ts_us >= self.phi:
            # a POI at exactly ts+phi is pushed before this runs, so it has
            # already been seen
            self.candidate = None
            return [c]
        return []

    def deadline(self) -> Optional[int]:
        return None if self.candidate is None else self.candidate.ts_us + self.phi


# --- sender -----------------------------------------------------------------


@dataclass
class Emission:
    """Ground truth for one DATA pointer (never on the wire)."""

    signal: PointerSignal
    fragment_index: int
    fragment_bits: str
    matched_bits: str
    poi_ts: int


@dataclass
class SenderStats:
    pois_observed: int = 0
    pois_used: int = 0
    attempts: int = 0
    matches: int = 0
    retries_received: int = 0
    distances: list = field(default_factory=list)
    signals_sent: dict = field(default_factory=lambda: dict.fromkeys(TYPE_CODES, 0))


def build_stream(message_bits: str, variant: str, n: int) -> str:
    """Header + payload, inline-expanded when the variant asks for it."""
    if len(message_bits) >= 1 << HEADER_BITS:
        raise ValueError(f"message longer than {(1 << HEADER_BITS) - 1} bits")
    stream = format(len(message_bits), f"0{HEADER_BITS}b") + message_bits
    if variant == "inline-hamming+":
        stream = ecc.inline_expand(stream, n)
    return stream


class CovertSender:
    """Covert sender: matches POI input values against upcoming fragments."""

    def __init__(self, cfg: ChannelConfig, message_bits: str, processing_delay_us: int = 0,
                 start_copies: int = START_COPIES):
        if start_copies < 1:
            raise ValueError("start_copies must be >= 1")
        if not message_bits or message_bits.strip("01"):
            raise ValueError("message must be a non-empty bit string")
        self.cfg = cfg
        self.n = cfg.bitlength
        self.width = ecc.match_width(self.n, cfg.ecc)
        self.processing_delay_us = processing_delay_us
        self.start_copies = start_copies
        self.fragments = ecc.split_fragments(build_stream(message_bits, cfg.ecc, self.n), self.n)
        if cfg.ecc in ("hamming", "hamming+"):
            self.targets = [ecc.encode_fragment(f, cfg.ecc).bits for f in self.fragments]
        else:
            self.targets = list(self.fragments)
        self.watchdogs = [watchdog_checksum(f, cfg.shared_key) for f in self.fragments]
        self.sent = [False] * len(self.fragments)
        self.next_index = 0
        self.last_sent_index: Optional[int] = None
        self.history = HistoryState()
        self.silence = SilenceFilter(cfg.silence_us)
        self.stopped = False
        self.stop_ts: Optional[int] = None
        self.since_match = 0
        self.stats = SenderStats()
        self.emissions: list[Emission] = []

    @property
    def started(self) -> bool:
        return self.history.started

    @property
    def exhausted(self) -> bool:
        return self.next_index >= len(self.fragments)

    def start(self, ts_us: int) -> list[PointerSignal]:
        """Open the session at ``ts_us``; returns the START copies to emit."""
        self.history.start(ts_us)
        gap = start_spacing_us(self.cfg)
        self.stats.signals_sent["START"] += self.start_copies
        # copy numbers ride in the rehash field, which START leaves unused
        return [PointerSignal("START", k % 256, emit_ts=ts_us + k * gap)
                for k in range(self.start_copies)]

    def deadline(self) -> Optional[int]:
        return None if self.stopped else self.silence.deadline()

    def step(self, pdu: PduRecord) -> list[PointerSignal]:
        if not self.started:
            raise ProtocolStateError("sender must emit START before observing traffic")
        out = self.advance(pdu.ts_us)
        if self.stopped or pdu.ts_us <= self.history.connection_start_ts:
            return out
        if is_signal_pdu(pdu) or not classify_poi(pdu, self.cfg.poi_filter, self.cfg.subnet):
            return out
        self.stats.pois_observed += 1
        for poi in self.silence.push(pdu):
            out.extend(self._consider(poi))
        return out

    def advance(self, now: int) -> list[PointerSignal]:
        out = []
        if not self.stopped:
            for poi in self.silence.release_due(now):
                out.extend(self._consider(poi))
        return out

    def on_retry(self, sig: PointerSignal) -> None:
        """Queue the most recently sent fragment for retransmission."""
        if self.stopped or self.last_sent_index is None:
            return
        self.stats.retries_received += 1
        idx = self.last_sent_index
        self.sent[idx] = False
        self.next_index = min(self.next_index, idx)
        self.last_sent_index = None

    def _window(self) -> list[tuple[int, int]]:
        """(offset, fragment index) pairs open for matching."""
        size = 1 << self.cfg.oood_bits
        end = min(self.next_index + size, len(self.fragments))
        return [(w, i) for w, i in enumerate(range(self.next_index, end)) if not self.sent[i]]

    def _consider(self, poi: PduRecord) -> list[PointerSignal]:
        cfg, h = self.cfg, self.history
        emit_ts = poi.ts_us + self.silence.phi + self.processing_delay_us
        self.stats.pois_used += 1
        h.poi_count_since_start += 1
        h.poi_count_since_signal += 1
        sub = subchannel_of(poi, cfg.subchanneling_mode, cfg.subchanneling_bits,
                            cfg.shared_key, cfg.epsilon, h.last_poi_ts)
        if self.exhausted:
            h.observe_poi(poi.ts_us, sub)
            self.stopped = True
            self.stop_ts = emit_ts
            self.stats.signals_sent["STOP"] += 1
            return [PointerSignal("STOP", emit_ts=emit_ts)]
        iv = input_value(h, poi, cfg, subchannel=sub)
        h.observe_poi(poi.ts_us, sub)
        self.stats.attempts += 1
        self.since_match += 1
        hit = self._match(iv)
        if hit is None:
            return []
        offset, idx, iteration, bits = hit
        sig = PointerSignal("DATA", iteration, offset, self.watchdogs[idx], emit_ts)
        self.sent[idx] = True
        self.last_sent_index = idx
        while self.next_index < len(self.sent) and self.sent[self.next_index]:
            self.next_index += 1
        self.stats.matches += 1
        self.stats.distances.append(self.since_match)
        self.stats.signals_sent["DATA"] += 1
        self.since_match = 0
        h.mark_signal(poi.ts_us)
        self.emissions.append(Emission(sig, idx, self.fragments[idx], bits, poi.ts_us))
        return [sig]

    def _match(self, iv: InputValue):
        window = self._window()
        candidates = [deskew_bits(iv, self.cfg.shared_key, self.width, i)
                      for i in range(1 << self.cfg.rehash_bits)]
        for offset, idx in window:
            target = self.targets[idx]
            for iteration, bits in enumerate(candidates):
                if ecc.near_match(bits, target, self.cfg.ecc):
                    return offset, idx, iteration, bits
        return None


# --- receiver ---------------------------------------------------------------


@dataclass
class DecodedFragment:
    index: int
    bits: str
    status: ecc.DecodeStatus
    matched_bits: str


@dataclass
class ReceivedMessage:
    bits: Optional[str]
    expected_fragments: Optional[int]
    missing: list
    codewords_corrected: int = 0
    codewords_failed: int = 0

    @property
    def complete(self) -> bool:
        return self.bits is not None and not self.missing


@dataclass
class ReceiverStats:
    pois_observed: int = 0
    pois_used: int = 0
    data_received: int = 0
    fragments_ok: int = 0
    fragments_corrected: int = 0
    fragments_failed: int = 0
    retries: int = 0
    duplicates: int = 0
    orphan_signals: int = 0
    signals_sent: dict = field(default_factory=lambda: dict.fromkeys(TYPE_CODES, 0))


@dataclass(frozen=True)
class _PoiRef:
    """What the receiver remembers about the latest isolated POI."""

    pdu: PduRecord
    subchannel: int
    prev_global_ts: Optional[int]
    prev_sub_ts: Optional[int]
    count_since_start: int
    count_since_signal: int


class CovertReceiver:
    """Covert receiver: turns pointers back into message fragments."""

    def __init__(self, cfg: ChannelConfig, processing_delay_us: int = 0):
        self.cfg = cfg
        self.n = cfg.bitlength
        self.width = ecc.match_width(self.n, cfg.ecc)
        self.processing_delay_us = processing_delay_us
        self.history = HistoryState()
        self.silence = SilenceFilter(cfg.silence_us)
        self.ref: Optional[_PoiRef] = None
        self.fragments: dict[int, str] = {}
        self.base = 0
        self.stopped = False
        self.message: Optional[ReceivedMessage] = None
        self.last_bits: Optional[str] = None
        self.stats = ReceiverStats()

    @property
    def started(self) -> bool:
        return self.history.started

    def step(self, event: Union[PduRecord, PointerSignal], now: Optional[int] = None):
        """Feed one overt frame or one arriving signal.

        For signals ``now`` is the arrival time (defaults to ``emit_ts``).
        Returns a :class:`DecodedFragment`, a RETRY signal, or None.
        """
        if isinstance(event, PointerSignal):
            return self._on_signal(event, event.emit_ts if now is None else now)
        self._on_pdu(event)
        return None

    def advance(self, now: int) -> None:
        for poi in self.silence.release_due(now):
            self._release(poi)

    def _on_pdu(self, pdu: PduRecord) -> None:
        self.advance(pdu.ts_us)
        if not self.started or self.stopped or pdu.ts_us <= self.history.connection_start_ts:
            return
        if is_signal_pdu(pdu) or not classify_poi(pdu, self.cfg.poi_filter, self.cfg.subnet):
            return
        self.stats.pois_observed += 1
        for poi in self.silence.push(pdu):
            self._release(poi)

    def _release(self, poi: PduRecord) -> None:
        cfg, h = self.cfg, self.history
        h.poi_count_since_start += 1
        h.poi_count_since_signal += 1
        sub = subchannel_of(poi, cfg.subchanneling_mode, cfg.subchanneling_bits,
                            cfg.shared_key, cfg.epsilon, h.last_poi_ts)
        self.ref = _PoiRef(poi, sub, h.last_poi_ts, h.per_subchannel_last_ts.get(sub),
                           h.poi_count_since_start, h.poi_count_since_signal)
        h.observe_poi(poi.ts_us, sub)
        self.stats.pois_used += 1

    def _sample_value(self, sample_ts: int) -> InputValue:
        h, ref = self.history, self.ref
        state = HistoryState(h.connection_start_ts, h.last_signal_ts)
        if ref is None:
            pdu = PduRecord(sample_ts, "00:00:00:00:00:00", "ff:ff:ff:ff:ff:ff", "other", 1)
            return input_value(state, pdu, self.cfg, sample_ts=sample_ts, subchannel=0)
        state.poi_count_since_start = ref.count_since_start
        # anchors set after the referenced POI reset the count
        state.poi_count_since_signal = min(ref.count_since_signal, h.poi_count_since_signal)
        state.last_poi_ts = ref.prev_global_ts
        if ref.prev_sub_ts is not None:
            state.per_subchannel_last_ts[ref.subchannel] = ref.prev_sub_ts
        return input_value(state, ref.pdu, self.cfg, sample_ts=sample_ts,
                           subchannel=ref.subchannel)

    def _retry(self, now: int) -> PointerSignal:
        self.stats.signals_sent["RETRY"] += 1
        return PointerSignal("RETRY", emit_ts=now)

    def _on_signal(self, sig: PointerSignal, now: int):
        self.advance(now)
        if sig.msg_type == "START":
            if self.started:
                log.debug("duplicate START at %d ignored", now)
                return None
            self.history.start(now - sig.rehash_count * start_spacing_us(self.cfg))
            self.silence = SilenceFilter(self.cfg.silence_us)
            return None
        if sig.msg_type == "RETRY":
            return None
        if not self.started:
            self.stats.orphan_signals += 1
            raise ProtocolStateError(f"{sig.msg_type} received before START")
        if self.stopped:
            self.stats.orphan_signals += 1
            return None
        if sig.msg_type == "STOP":
            self.finalize()
            return None
        return self._on_data(sig, now)

    def _on_data(self, sig: PointerSignal, now: int):
        st = self.stats
        st.data_received += 1
        sample = now - self.silence.phi - self.processing_delay_us
        iv = self._sample_value(sample)
        bits = deskew_bits(iv, self.cfg.shared_key, self.width, sig.rehash_count)
        self.last_bits = bits
        self.history.mark_signal(sample)
        if self.cfg.ecc in ("hamming", "hamming+"):
            data, status = ecc.decode_fragment(bits, self.n, self.cfg.ecc)
        else:
            data, status = bits, ecc.OK
        if not status.accepted:
            st.fragments_failed += 1
            return self._retry(now)
        if watchdog_checksum(data, self.cfg.shared_key) != sig.watchdog:
            st.retries += 1
            return self._retry(now)
        if status.kind == "corrected":
            st.fragments_corrected += 1
        else:
            st.fragments_ok += 1
        idx = self.base + sig.oood_seq
        if idx in self.fragments:
            st.duplicates += 1
        else:
            self.fragments[idx] = data
            while self.base in self.fragments:
                self.base += 1
        return DecodedFragment(idx, data, status, bits)

    def finalize(self) -> ReceivedMessage:
        """Reassemble the message from the fragments received so far."""
        self.stopped = True
        n = self.n
        top = max(self.fragments, default=-1) + 1
        stream = "".join(self.fragments.get(i, "0" * n) for i in range(top))
        corrected = failed = 0
        if self.cfg.ecc == "inline-hamming+":
            width = ecc.codeword_length(n, "hamming+")
            usable = len(stream) - len(stream) % width
            stream, statuses = ecc.inline_decode(stream[:usable], n)
            corrected = sum(s.kind == "corrected" for s in statuses)
            failed = sum(not s.accepted for s in statuses)
        bits = expected = None
        if len(stream) >= HEADER_BITS:
            length = int(stream[:HEADER_BITS], 2)
            total = HEADER_BITS + length
            if self.cfg.ecc == "inline-hamming+":
                width = ecc.codeword_length(n, "hamming+")
                expanded = -(-total // n) * width
                expected = -(-expanded // n)
            else:
                expected = -(-total // n)
            bits = stream[HEADER_BITS:total]
        span = expected if expected is not None else top
        missing = [i for i in range(span) if i not in self.fragments]
        if bits is not None and len(bits) < int(stream[:HEADER_BITS], 2):
            bits = bits.ljust(int(stream[:HEADER_BITS], 2), "0")
        self.message = ReceivedMessage(bits, expected, missing, corrected, failed)
        return self.message


def bits_from_bytes(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


def bytes_from_bits(bits: str) -> bytes:
    usable = len(bits) - len(bits) % 8
    return bytes(int(bits[i:i + 8], 2) for i in range(0, usable, 8))


def iter_fragments(message_bits: str, cfg: ChannelConfig) -> Iterable[str]:
    """The n-bit fragments a sender would transmit for ``message_bits``."""
    return ecc.split_fragments(build_stream(message_bits, cfg.ecc, cfg.bitlength), cfg.bitlength)

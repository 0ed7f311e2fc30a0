"""Shared vocabulary of the Silent History Protocol.

Frames, channel configuration, packet-of-interest classification, timing
input sources, rounding, subchanneling and the deskew hash.  Timestamps are
integer microseconds throughout; fractional seconds only appear at I/O
boundaries.
"""

from __future__ import annotations

import dataclasses
import hashlib
import ipaddress
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

US_PER_S = 1_000_000

ETHER_TYPES = ("arp", "ipv4", "ipv6", "other")
POI_FILTERS = ("all", "broadcast_domain")
INPUT_SOURCES = ("IPD", "ISD", "ICD", "ISPN", "timestamp", "ICPN")
TIMING_SOURCES = ("IPD", "ISD", "ICD", "timestamp")
RELATIVE_SOURCES = ("ISD", "ICD", "ISPN", "ICPN")
SUBCHANNEL_MODES = ("none", "baseipd", "iphash", "clockhash")
SUBCHANNEL_BITS = (0, 2, 4, 8)
ECC_VARIANTS = ("none", "hamming", "hamming+", "inline-hamming+")
BITLENGTHS = (2, 3, 4, 8)
REHASH_BITS = (0, 2, 4, 7)
# decimal places of a second: 0 -> 1 s, 1 -> 100 ms, 3 -> 1 ms, 6 -> none
EPSILONS = (0, 1, 2, 3, 4, 5, 6)
POI_REFERENCES = ("direct",)

DIGEST_BITS = 256


class ConfigError(ValueError):
    """Raised for channel configurations that violate their invariants."""


class ProtocolStateError(RuntimeError):
    """Raised when an operation needs state that has not been established."""


@dataclass(frozen=True, slots=True)
class PduRecord:
    """One observed link-layer frame.

    For ARP frames ``src_ip``/``dst_ip`` hold the sender and target protocol
    addresses.
    """

    ts_us: int
    src_mac: str
    dst_mac: str
    ether_type: str
    length: int
    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    seq_index: int = 0

    @property
    def timestamp(self) -> float:
        return self.ts_us / US_PER_S

    def validate(self) -> None:
        if self.ts_us < 0:
            raise ValueError(f"negative timestamp {self.ts_us}")
        if self.length <= 0:
            raise ValueError(f"non-positive frame length {self.length}")
        if self.ether_type not in ETHER_TYPES:
            raise ValueError(f"unknown ether_type {self.ether_type!r}")


@dataclass(frozen=True)
class ChannelConfig:
    """Full parameter vector of one covert channel."""

    bitlength: int = 4
    epsilon: int = 3
    poi_filter: str = "broadcast_domain"
    inputsource: str = "ISD"
    subchanneling_mode: str = "none"
    subchanneling_bits: int = 0
    ecc: str = "none"
    rehash_bits: int = 0
    oood_bits: int = 0
    silence_ms: float = 2.0
    poi_reference: str = "direct"
    ispn_divisor: int = 1
    shared_key: bytes = b"shp-shared-key"
    subnet: str = "192.168.1.0/24"

    def __post_init__(self) -> None:
        if isinstance(self.shared_key, str):
            object.__setattr__(self, "shared_key", self.shared_key.encode())
        self.validate()

    def validate(self) -> None:
        checks = (
            ("bitlength", self.bitlength, BITLENGTHS),
            ("epsilon", self.epsilon, EPSILONS),
            ("poi_filter", self.poi_filter, POI_FILTERS),
            ("inputsource", self.inputsource, INPUT_SOURCES),
            ("subchanneling_mode", self.subchanneling_mode, SUBCHANNEL_MODES),
            ("subchanneling_bits", self.subchanneling_bits, SUBCHANNEL_BITS),
            ("ecc", self.ecc, ECC_VARIANTS),
            ("rehash_bits", self.rehash_bits, REHASH_BITS),
            ("poi_reference", self.poi_reference, POI_REFERENCES),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{name}={value!r} not in {allowed}")
        if (self.subchanneling_mode == "none") != (self.subchanneling_bits == 0):
            raise ConfigError(
                "subchanneling_mode 'none' requires subchanneling_bits=0 and vice versa"
            )
        if self.oood_bits < 0:
            raise ConfigError("oood_bits must be >= 0")
        if self.rehash_bits + self.oood_bits > 8:
            raise ConfigError("rehash_bits + oood_bits exceed the 8-bit pointer octet")
        if self.silence_ms < 0:
            raise ConfigError("silence_ms must be >= 0")
        if self.ispn_divisor < 1:
            raise ConfigError("ispn_divisor must be >= 1")
        try:
            ipaddress.ip_network(self.subnet, strict=False)
        except ValueError as exc:
            raise ConfigError(f"bad subnet {self.subnet!r}") from exc

    @property
    def silence_us(self) -> int:
        return int(round(self.silence_ms * 1000))

    def replace(self, **changes) -> "ChannelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shared_key"] = self.shared_key.decode("utf-8", errors="backslashreplace")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"schema_version"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k in known}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def sort_key(self) -> tuple:
        return tuple(str(v) for v in dataclasses.astuple(self))


@dataclass(frozen=True, slots=True)
class InputValue:
    """A timing or count sample after rounding, tagged with its subchannel.

    ``raw`` and ``rounded`` are microseconds for timing sources and plain
    counts for ICPN/ISPN.
    """

    raw: int
    rounded: int
    subchannel: int = 0


@dataclass
class HistoryState:
    """Anchors shared by sender and receiver for relative input sources."""

    connection_start_ts: Optional[int] = None
    last_signal_ts: Optional[int] = None
    poi_count_since_start: int = 0
    poi_count_since_signal: int = 0
    last_poi_ts: Optional[int] = None
    per_subchannel_last_ts: dict = field(default_factory=dict)

    @property
    def started(self) -> bool:
        return self.connection_start_ts is not None

    def start(self, ts_us: int) -> None:
        self.connection_start_ts = ts_us
        self.last_signal_ts = ts_us
        self.poi_count_since_start = 0
        self.poi_count_since_signal = 0

    def observe_poi(self, ts_us: int, subchannel: int) -> None:
        """Register a POI after its input value has been taken."""
        self.last_poi_ts = ts_us
        self.per_subchannel_last_ts[subchannel] = ts_us

    def mark_signal(self, ts_us: int) -> None:
        self.last_signal_ts = ts_us
        self.poi_count_since_signal = 0

    def copy(self) -> "HistoryState":
        return dataclasses.replace(
            self, per_subchannel_last_ts=dict(self.per_subchannel_last_ts)
        )


# --- POI classification -----------------------------------------------------

_LIMITED_BROADCAST = ipaddress.IPv4Address("255.255.255.255")
_V4_MULTICAST = ipaddress.ip_network("224.0.0.0/4")
_V6_MULTICAST = ipaddress.ip_network("ff00::/8")


@lru_cache(maxsize=65536)
def _parse_ip(text: str):
    return ipaddress.ip_address(text)


@lru_cache(maxsize=256)
def _directed_broadcast(subnet: str):
    return ipaddress.ip_network(subnet, strict=False).broadcast_address


def mac_is_group(mac: str) -> bool:
    return bool(int(mac[:2], 16) & 0x01)


def classify_poi(pdu: PduRecord, poi_filter: str, subnet: str) -> bool:
    """True when ``pdu`` counts as a packet of interest under ``poi_filter``."""
    if poi_filter == "all":
        return True
    if poi_filter != "broadcast_domain":
        raise ConfigError(f"unknown POI filter {poi_filter!r}")
    if pdu.ether_type == "arp":
        return True
    if mac_is_group(pdu.dst_mac):
        return True
    if pdu.dst_ip is None:
        return False
    dst = _parse_ip(pdu.dst_ip)
    if dst.version == 4:
        if dst == _LIMITED_BROADCAST or dst in _V4_MULTICAST:
            return True
        bcast = _directed_broadcast(subnet)
        return bcast.version == 4 and dst == bcast
    return dst in _V6_MULTICAST


# --- rounding ---------------------------------------------------------------


def floor_us(value_us: int, epsilon: int) -> int:
    """Truncate a non-negative microsecond value to ``epsilon`` decimal places."""
    if not 0 <= epsilon <= 6:
        raise ConfigError(f"epsilon must be within 0..6, got {epsilon}")
    step = 10 ** (6 - epsilon)
    return value_us - value_us % step


def round_epsilon(value: float, epsilon: int) -> float:
    """Floor ``value`` seconds to ``epsilon`` decimal places at µs resolution."""
    if value < 0:
        raise ValueError("round_epsilon expects a non-negative value")
    return floor_us(int(round(value * US_PER_S)), epsilon) / US_PER_S


def ispn_bucket(count: int, epsilon: int) -> int:
    if epsilon < 1:
        raise ValueError("ISPN bucket width must be >= 1")
    return count // epsilon


# --- hashing ----------------------------------------------------------------


def canonical_encode(*parts: bytes) -> bytes:
    """Length-prefixed concatenation (4-byte big-endian length per part)."""
    return b"".join(len(p).to_bytes(4, "big") + p for p in parts)


def digest(*parts: bytes) -> bytes:
    return hashlib.sha256(canonical_encode(*parts)).digest()


def first_bits(raw: bytes, n: int) -> int:
    """The first ``n`` bits of ``raw`` (big-endian) as an integer."""
    if not 0 <= n <= len(raw) * 8:
        raise ValueError(f"cannot take {n} bits from a {len(raw) * 8}-bit digest")
    nbytes = (n + 7) // 8
    return int.from_bytes(raw[:nbytes], "big") >> (nbytes * 8 - n)


def to_bitstring(value: int, n: int) -> str:
    return format(value, f"0{n}b") if n else ""


def deskew_bits(value: InputValue, key: bytes, n: int, iteration: int = 0) -> str:
    """Near-uniform ``n``-bit string derived from an input value.

    SHA-256 over (key, rounded value as signed 64-bit, subchannel as u32,
    iteration as u32), each part length-prefixed; the first ``n`` bits of the
    digest are returned as a '0'/'1' string.
    """
    if n < 1 or n > DIGEST_BITS:
        raise ValueError(f"bit count must be within 1..{DIGEST_BITS}, got {n}")
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    raw = digest(
        key,
        value.rounded.to_bytes(8, "big", signed=True),
        value.subchannel.to_bytes(4, "big"),
        iteration.to_bytes(4, "big"),
    )
    return to_bitstring(first_bits(raw, n), n)


# --- subchanneling ----------------------------------------------------------


def _subchannel_hash(key: bytes, payload: bytes, bits: int) -> int:
    return first_bits(digest(key, b"subchannel", payload), bits)


def _address_bytes(pdu: PduRecord) -> bytes:
    if pdu.src_ip is not None:
        return _parse_ip(pdu.src_ip).packed
    return bytes.fromhex(pdu.src_mac.replace(":", ""))


def subchannel_of(
    pdu: PduRecord,
    mode: str,
    bits: int,
    key: bytes,
    epsilon: int = 6,
    prev_poi_ts: Optional[int] = None,
) -> int:
    """Deterministic subchannel id of ``pdu``.

    ``baseipd`` needs the timestamp of the preceding POI (global stream); the
    first POI of a stream has a base IPD of zero.
    """
    if mode == "none" or bits == 0:
        return 0
    if mode == "iphash":
        payload = _address_bytes(pdu)
    elif mode == "clockhash":
        payload = floor_us(pdu.ts_us, epsilon).to_bytes(8, "big")
    elif mode == "baseipd":
        base = pdu.ts_us - prev_poi_ts if prev_poi_ts is not None else 0
        payload = floor_us(max(base, 0), epsilon).to_bytes(8, "big", signed=True)
    else:
        raise ConfigError(f"unknown subchanneling mode {mode!r}")
    return _subchannel_hash(key, payload, bits)


# --- input sources ----------------------------------------------------------


def input_value(
    state: HistoryState,
    pdu: PduRecord,
    cfg: ChannelConfig,
    sample_ts: Optional[int] = None,
    subchannel: Optional[int] = None,
) -> InputValue:
    """Input value of a POI under ``cfg.inputsource``.

    ``state`` must already count this POI (``poi_count_*`` include it) but not
    yet hold it as the last POI.  ``sample_ts`` overrides the PDU timestamp as
    the timing sample (the receiver uses the pointer arrival for this).
    """
    src = cfg.inputsource
    if src in RELATIVE_SOURCES and not state.started:
        raise ProtocolStateError(f"{src} requires an observed START signal")
    ts = pdu.ts_us if sample_ts is None else sample_ts
    if subchannel is None:
        subchannel = subchannel_of(
            pdu, cfg.subchanneling_mode, cfg.subchanneling_bits, cfg.shared_key,
            cfg.epsilon, state.last_poi_ts,
        )
    if src == "ICPN":
        raw = state.poi_count_since_start
        return InputValue(raw, raw, subchannel)
    if src == "ISPN":
        raw = state.poi_count_since_signal
        return InputValue(raw, ispn_bucket(raw, cfg.ispn_divisor), subchannel)
    if src == "timestamp":
        raw = ts
    elif src == "ICD":
        raw = ts - state.connection_start_ts
    elif src == "ISD":
        raw = ts - state.last_signal_ts
    elif src == "IPD":
        if cfg.subchanneling_mode == "none":
            prev = state.last_poi_ts
        else:
            prev = state.per_subchannel_last_ts.get(subchannel)
        raw = ts - prev if prev is not None else 0
    else:
        raise ConfigError(f"unknown input source {src!r}")
    # jitter can push a relative sample before its anchor; clamp at zero
    raw = max(raw, 0)
    return InputValue(raw, floor_us(raw, cfg.epsilon), subchannel)

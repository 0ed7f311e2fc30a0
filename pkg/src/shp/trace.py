"""Overt-traffic traces: containers, CSV/pcap I/O, synthetic generation, impairments."""

from __future__ import annotations

import csv
import dataclasses
import ipaddress
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import US_PER_S, PduRecord

CSV_FIELDS = ("ts_us", "src_mac", "dst_mac", "ether_type", "src_ip", "dst_ip", "length")

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
ETH_P = {"ipv4": 0x0800, "arp": 0x0806, "ipv6": 0x86DD, "other": 0x88B5}
ETH_TYPES = {v: k for k, v in ETH_P.items() if k != "other"}
VLAN_TPIDS = (0x8100, 0x88A8, 0x9100)


class TraceFormatError(OSError):
    """Malformed or truncated trace file; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(TraceFormatError):
    pass


@dataclass
class Trace:
    records: list
    source: str = "memory"
    epoch: int = 0  # capture epoch, whole seconds

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def duration_us(self) -> int:
        if not self.records:
            return 0
        return self.records[-1].ts_us - self.records[0].ts_us

    @property
    def duration(self) -> float:
        return self.duration_us / US_PER_S

    def timestamps(self) -> np.ndarray:
        return np.fromiter((r.ts_us for r in self.records), dtype=np.int64, count=len(self.records))

    def validate(self) -> None:
        prev = -1
        for i, r in enumerate(self.records):
            r.validate()
            if r.ts_us < prev:
                raise ValueError(f"record {i} goes back in time")
            prev = r.ts_us


def renumber(records: Iterable[PduRecord]) -> list:
    return [dataclasses.replace(r, seq_index=i) for i, r in enumerate(records)]


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Independent PCG64 stream ``stage`` of a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stage,))))


# --- CSV --------------------------------------------------------------------


def save_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in trace.records:
            w.writerow([r.ts_us, r.src_mac, r.dst_mac, r.ether_type,
                        r.src_ip or "", r.dst_ip or "", r.length])


def load_csv(path) -> Trace:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Trace([], str(path))
        if tuple(h.strip() for h in header) != CSV_FIELDS:
            raise TraceFormatError(f"unexpected CSV header {header}", 0)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_FIELDS):
                raise TraceFormatError(f"line {lineno}: expected {len(CSV_FIELDS)} fields")
            try:
                rec = PduRecord(int(row[0]), row[1], row[2], row[3], int(row[6]),
                                row[4] or None, row[5] or None, len(records))
                rec.validate()
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
            records.append(rec)
    return Trace(records, str(path))


# --- pcap -------------------------------------------------------------------


def _mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def _parse_frame(frame: bytes, orig_len: int, ts_us: int, idx: int, offset: int) -> PduRecord:
    if len(frame) < 14:
        raise TraceFormatError("frame shorter than an Ethernet header", offset)
    dst, src = _mac(frame[0:6]), _mac(frame[6:12])
    pos = 12
    etype = struct.unpack_from("!H", frame, pos)[0]
    while etype in VLAN_TPIDS and len(frame) >= pos + 6:
        pos += 4
        etype = struct.unpack_from("!H", frame, pos)[0]
    pos += 2
    kind = ETH_TYPES.get(etype, "other")
    src_ip = dst_ip = None
    body = frame[pos:]
    if kind == "arp" and len(body) >= 28:
        src_ip = str(ipaddress.IPv4Address(body[14:18]))
        dst_ip = str(ipaddress.IPv4Address(body[24:28]))
    elif kind == "ipv4" and len(body) >= 20:
        src_ip = str(ipaddress.IPv4Address(body[12:16]))
        dst_ip = str(ipaddress.IPv4Address(body[16:20]))
    elif kind == "ipv6" and len(body) >= 40:
        src_ip = str(ipaddress.IPv6Address(body[8:24]))
        dst_ip = str(ipaddress.IPv6Address(body[24:40]))
    return PduRecord(ts_us, src, dst, kind, max(orig_len, 1), src_ip, dst_ip, idx)


def load_pcap(path) -> Trace:
    data = Path(path).read_bytes()
    if not data:
        return Trace([], str(path))
    if len(data) < 24:
        raise TraceFormatError("truncated pcap global header", len(data))
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        endian, magic = "<", magic_le
    else:
        magic = struct.unpack_from(">I", data, 0)[0]
        if magic not in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            raise UnsupportedFormatError(f"not a classic pcap file (magic {magic_le:#x})", 0)
        endian = ">"
    linktype = struct.unpack_from(endian + "I", data, 20)[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedFormatError(f"unsupported link type {linktype}", 20)
    frac_div = 1000 if magic == PCAP_MAGIC_NS else 1
    rec_hdr = struct.Struct(endian + "IIII")
    records, offset, epoch = [], 24, None
    while offset < len(data):
        if offset + 16 > len(data):
            raise TraceFormatError("truncated record header", offset)
        sec, frac, incl, orig = rec_hdr.unpack_from(data, offset)
        if offset + 16 + incl > len(data):
            raise TraceFormatError(f"record claims {incl} bytes past end of file", offset)
        if epoch is None:
            epoch = sec
        ts_us = (sec - epoch) * US_PER_S + frac // frac_div
        if ts_us < 0:
            raise TraceFormatError("record timestamp precedes first record's second", offset)
        frame = data[offset + 16:offset + 16 + incl]
        records.append(_parse_frame(frame, orig, ts_us, len(records), offset))
        offset += 16 + incl
    return Trace(records, str(path), epoch or 0)


def _ip_bytes(text: Optional[str], version: int) -> bytes:
    if text is None:
        return bytes(4 if version == 4 else 16)
    return ipaddress.ip_address(text).packed


def build_frame(r: PduRecord) -> bytes:
    """Reconstruct a frame carrying the header fields of ``r``."""
    head = bytes.fromhex(r.dst_mac.replace(":", "")) + bytes.fromhex(r.src_mac.replace(":", ""))
    head += struct.pack("!H", ETH_P[r.ether_type])
    if r.ether_type == "arp":
        src_mac = bytes.fromhex(r.src_mac.replace(":", ""))
        body = struct.pack("!HHBBH", 1, 0x0800, 6, 4, 1) + src_mac + _ip_bytes(r.src_ip, 4)
        body += bytes(6) + _ip_bytes(r.dst_ip, 4)
    elif r.ether_type == "ipv4":
        total = max(r.length - 14, 20)
        body = struct.pack("!BBHHHBBH", 0x45, 0, min(total, 0xFFFF), 0, 0, 64, 17, 0)
        body += _ip_bytes(r.src_ip, 4) + _ip_bytes(r.dst_ip, 4)
    elif r.ether_type == "ipv6":
        body = struct.pack("!IHBB", 6 << 28, max(r.length - 54, 0), 17, 64)
        body += _ip_bytes(r.src_ip, 6) + _ip_bytes(r.dst_ip, 6)
    else:
        body = b""
    frame = head + body
    if r.length < len(frame):
        raise ValueError(f"length {r.length} too short for a {r.ether_type} frame")
    return frame.ljust(r.length, b"\x00")


def save_pcap(trace: Trace, path, nanosecond: bool = False) -> None:
    magic = PCAP_MAGIC_NS if nanosecond else PCAP_MAGIC_US
    out = [struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)]
    for r in trace.records:
        frame = build_frame(r)
        sec, us = divmod(r.ts_us, US_PER_S)
        frac = us * 1000 if nanosecond else us
        out.append(struct.pack("<IIII", trace.epoch + sec, frac, len(frame), r.length) + frame)
    Path(path).write_bytes(b"".join(out))


def _infer_format(path, fmt: Optional[str]) -> str:
    if fmt:
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".pcap", ".cap"):
        return "pcap"
    if suffix == ".csv":
        return "csv"
    raise UnsupportedFormatError(f"cannot infer trace format from {path}")


def load_trace(path, format: Optional[str] = None) -> Trace:
    fmt = _infer_format(path, format)
    if fmt == "pcap":
        return load_pcap(path)
    if fmt == "csv":
        return load_csv(path)
    raise UnsupportedFormatError(f"unknown trace format {fmt!r}")


def save_trace(trace: Trace, path, format: Optional[str] = None) -> None:
    fmt = _infer_format(path, format)
    if fmt == "pcap":
        save_pcap(trace, path)
    elif fmt == "csv":
        save_csv(trace, path)
    else:
        raise UnsupportedFormatError(f"unknown trace format {fmt!r}")


# --- synthetic traffic ------------------------------------------------------

MULTICAST_GROUPS = ("224.0.0.1", "224.0.0.251", "224.0.0.252", "239.255.255.250")


def host_mac(ip: str) -> str:
    """Locally administered unicast MAC derived from an address."""
    tail = ipaddress.ip_address(ip).packed[-4:]
    return "02:00:" + ":".join(f"{b:02x}" for b in tail)


def multicast_mac(ip: str) -> str:
    p = ipaddress.IPv4Address(ip).packed
    return f"01:00:5e:{p[1] & 0x7F:02x}:{p[2]:02x}:{p[3]:02x}"


def subnet_hosts(subnet: str, limit: int = 254) -> list:
    net = ipaddress.ip_network(subnet, strict=False)
    hosts = []
    for h in net.hosts():
        hosts.append(str(h))
        if len(hosts) >= limit:
            break
    return hosts


def broadcast_frame(kind: int, ts_us: int, src_ip: str, target_ip: str, subnet: str,
                    length: int, group: str = MULTICAST_GROUPS[0]) -> PduRecord:
    """One of the three broadcast-domain frame classes (0 ARP, 1 bcast UDP, 2 mcast UDP)."""
    mac = host_mac(src_ip)
    if kind == 0:
        return PduRecord(ts_us, mac, "ff:ff:ff:ff:ff:ff", "arp", 60, src_ip, target_ip)
    if kind == 1:
        bcast = str(ipaddress.ip_network(subnet, strict=False).broadcast_address)
        return PduRecord(ts_us, mac, "ff:ff:ff:ff:ff:ff", "ipv4", length, src_ip, bcast)
    return PduRecord(ts_us, mac, multicast_mac(group), "ipv4", length, src_ip, group)


def generate_synthetic_trace(rate: float, duration: float, jitter_factor=(0.5, 1.5),
                             subnet: str = "192.168.1.0/24", seed: int = 0) -> Trace:
    """Broadcast-domain traffic with gaps ``(1/rate) * U[jitter_factor]``.

    Frames are drawn uniformly from ARP requests, broadcast UDP and multicast
    UDP, with source addresses drawn from ``subnet``.
    """
    if rate <= 0:
        raise ValueError("rate must be > 0")
    if duration <= 0:
        return Trace([], "synthetic")
    lo, hi = jitter_factor
    rng = np.random.Generator(np.random.PCG64(seed))
    hosts = subnet_hosts(subnet)
    est = int(rate * duration * 1.2) + 16
    gaps_all = []
    total = 0.0
    while total <= duration:
        gaps = rng.uniform(lo, hi, est) / rate
        gaps_all.append(gaps)
        total += float(gaps.sum())
    gaps = np.concatenate(gaps_all)
    ts = np.floor(np.cumsum(gaps) * US_PER_S).astype(np.int64)
    ts = ts[ts <= int(duration * US_PER_S)]
    k = len(ts)
    kinds = rng.integers(0, 3, k)
    src = rng.integers(0, len(hosts), k)
    dst = rng.integers(0, len(hosts), k)
    groups = rng.integers(0, len(MULTICAST_GROUPS), k)
    lengths = rng.integers(60, 400, k)
    records = [
        broadcast_frame(int(kinds[i]), int(ts[i]), hosts[src[i]], hosts[dst[i]], subnet,
                        int(lengths[i]), MULTICAST_GROUPS[groups[i]])
        for i in range(k)
    ]
    return Trace(renumber(records), "synthetic")


# --- impairments ------------------------------------------------------------


@dataclass(frozen=True)
class ImpairmentConfig:
    """Path model between the capture point and one observer.

    ``delay`` and ``jitter`` are seconds; jitter is the half-width of a
    zero-mean uniform perturbation.
    """

    delay: float = 0.0
    jitter: float = 0.0
    loss: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must be within [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")

    @property
    def delay_us(self) -> int:
        return int(round(self.delay * US_PER_S))

    @property
    def jitter_us(self) -> float:
        return self.jitter * US_PER_S

    @property
    def is_identity(self) -> bool:
        return self.delay == 0 and self.jitter == 0 and self.loss == 0

    @classmethod
    def from_dict(cls, d: dict) -> "ImpairmentConfig":
        return cls(**{k: d[k] for k in ("delay", "jitter", "loss", "seed") if k in d})


class Impairer:
    """Per-item impairment drawing from one RNG stream (for signals)."""

    def __init__(self, cfg: ImpairmentConfig, stage: int):
        self.cfg = cfg
        self.rng = stage_rng(cfg.seed, stage)

    def apply(self, ts_us: int) -> Optional[int]:
        """Arrival time, or None when the item is lost."""
        cfg = self.cfg
        if cfg.is_identity:
            return ts_us
        lost = self.rng.random() < cfg.loss
        shift = self.rng.uniform(-1.0, 1.0) * cfg.jitter_us if cfg.jitter else 0.0
        if lost:
            return None
        return max(0, ts_us + cfg.delay_us + int(round(shift)))


def impair(trace: Trace, cfg: ImpairmentConfig, stage: int = 0) -> Trace:
    """Independent loss, then delay + uniform jitter, then a stable re-sort."""
    if cfg.is_identity:
        return Trace(list(trace.records), trace.source, trace.epoch)
    rng = stage_rng(cfg.seed, stage)
    n = len(trace.records)
    keep = rng.random(n) >= cfg.loss
    shifts = rng.uniform(-1.0, 1.0, n) * cfg.jitter_us if cfg.jitter else np.zeros(n)
    ts = trace.timestamps() + cfg.delay_us + np.rint(shifts).astype(np.int64)
    ts = np.maximum(ts, 0)
    idx = np.flatnonzero(keep)
    order = idx[np.argsort(ts[idx], kind="stable")]
    records = [dataclasses.replace(trace.records[i], ts_us=int(ts[i]), seq_index=j)
               for j, i in enumerate(order)]
    return Trace(records, trace.source, trace.epoch)


def merge_records(*streams: Sequence[PduRecord]) -> list:
    """Stable timestamp merge of already ordered streams."""
    merged = sorted((r for s in streams for r in s), key=lambda r: r.ts_us)
    return renumber(merged)


@dataclass(frozen=True)
class LanProfile:
    """Knobs of the LAN-like broadcast-domain model.

    ``busy`` scales host count and chatter (1 is peak hours, ~0.3 night).
    A gateway sweeps the subnet with ARP requests at a fixed spacing every
    ``sweep_period`` seconds; hosts refresh ARP entries at random times and
    retry once a second; UDP broadcast/multicast chatter is Poisson.
    """

    busy: float = 1.0
    sweep_spacing: float = 0.010
    sweep_period: float = 30.0
    sweep_clock_jitter: float = 20e-6
    refresh_mean: float = 30.0
    chatter_rate: float = 120.0

    @classmethod
    def random(cls, rng: np.random.Generator) -> "LanProfile":
        return cls(busy=float(rng.uniform(0.3, 1.0)),
                   sweep_spacing=float(rng.choice([0.005, 0.010, 0.020])),
                   sweep_period=float(rng.uniform(20.0, 40.0)))


def generate_lan_trace(duration: float, seed: int = 0, subnet: str = "192.168.1.0/24",
                       profile: Optional[LanProfile] = None) -> Trace:
    """LAN-like capture; without a profile one is drawn from the seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    prof = profile or LanProfile.random(rng)
    hosts = subnet_hosts(subnet)
    gw = hosts[0]
    n_hosts = min(int(10 + 20 * prof.busy), len(hosts) - 1)
    ev = []  # (seconds, kind, src, target, length, group)
    t = rng.uniform(0, prof.sweep_period)
    while t < duration:
        offs = t + np.arange(len(hosts) - 1) * prof.sweep_spacing
        offs = offs + rng.normal(0, prof.sweep_clock_jitter, offs.size)
        ev.extend((float(x), 0, gw, h, 60, None) for x, h in zip(offs, hosts[1:]) if x < duration)
        t += prof.sweep_period
    for h in range(n_hosts):
        src = hosts[1 + h]
        t = rng.uniform(0, prof.refresh_mean)
        while t < duration:
            tgt = hosts[rng.integers(len(hosts))]
            for k in range(int(rng.integers(1, 3))):
                ev.append((t + k * 1.0 + rng.normal(0, 50e-6), 0, src, tgt, 60, None))
            t += rng.exponential(prof.refresh_mean / prof.busy)
    n = rng.poisson(prof.chatter_rate * prof.busy * duration)
    when = rng.uniform(0, duration, n)
    kinds = rng.integers(1, 3, n)
    srcs = rng.integers(1, n_hosts + 1, n)
    lens = rng.integers(60, 400, n)
    groups = rng.integers(0, len(MULTICAST_GROUPS), n)
    ev.extend((float(when[i]), int(kinds[i]), hosts[srcs[i]], gw, int(lens[i]),
               MULTICAST_GROUPS[groups[i]]) for i in range(n))
    ev.sort(key=lambda e: e[0])
    records = []
    for x, kind, src, tgt, length, group in ev:
        ts = int(round(min(max(x, 0.0), duration) * US_PER_S))
        records.append(broadcast_frame(kind, ts, src, tgt, subnet, length,
                                       group or MULTICAST_GROUPS[0]))
    records.sort(key=lambda r: r.ts_us)
    return Trace(renumber(records), "lan")

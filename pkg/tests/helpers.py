import hashlib
import struct

from shp.core import PduRecord


def pdu(ts_us, dst_mac="ff:ff:ff:ff:ff:ff", ether_type="arp", src_ip="192.168.1.7",
        dst_ip="192.168.1.1", src_mac="02:00:c0:a8:01:07", length=60):
    return PduRecord(ts_us, src_mac, dst_mac, ether_type, length, src_ip, dst_ip)


def oracle_digest(*parts: bytes) -> bytes:
    """Reference SHA-256 over 4-byte big-endian length-prefixed parts."""
    return hashlib.sha256(b"".join(struct.pack(">I", len(p)) + p for p in parts)).digest()


def oracle_bits(raw: bytes, n: int) -> str:
    return "".join(f"{b:08b}" for b in raw)[:n]

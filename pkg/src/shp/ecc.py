"""Hamming codes for fragment protection and tolerant matching.

Even parity, parity bits at the power-of-two positions (1-indexed), data bits
in the remaining positions in order.  The ``+`` variants append one overall
parity bit, which turns single-error correction into SEC-DED.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

VARIANTS = ("none", "hamming", "hamming+", "inline-hamming+")
EXTENDED = ("hamming+", "inline-hamming+")


@dataclass(frozen=True)
class DecodeStatus:
    kind: str  # ok | corrected | uncorrectable
    position: Optional[int] = None  # 1-indexed codeword position of a fixed bit

    @property
    def accepted(self) -> bool:
        return self.kind != "uncorrectable"


OK = DecodeStatus("ok")
UNCORRECTABLE = DecodeStatus("uncorrectable")


@dataclass(frozen=True)
class EccCodeword:
    data_bits: str
    parity_bits: str
    variant: str
    bits: str


def _check_bits(bits: str) -> None:
    if bits.strip("01"):
        raise ValueError(f"not a bit string: {bits!r}")


def hamming_parity_count(n: int) -> int:
    """Smallest r with 2**r >= n + r + 1."""
    if n < 1:
        raise ValueError("data bit count must be >= 1")
    r = 0
    while (1 << r) < n + r + 1:
        r += 1
    return r


def codeword_length(n: int, variant: str) -> int:
    if variant == "none":
        return n
    if variant not in VARIANTS:
        raise ValueError(f"unknown ECC variant {variant!r}")
    r = hamming_parity_count(n)
    return n + r + (1 if variant in EXTENDED else 0)


def match_width(n: int, variant: str) -> int:
    """Bits compared per matching attempt; inline ECC lives in the message."""
    if variant in ("none", "inline-hamming+"):
        return n
    return codeword_length(n, variant)


def overhead_fraction(n: int, variant: str) -> float:
    if variant == "none":
        raise ValueError("variant 'none' has no overhead")
    r = hamming_parity_count(n)
    if variant == "hamming":
        return r / n
    if variant in EXTENDED:
        return (r + 1) / n
    raise ValueError(f"unknown ECC variant {variant!r}")


def _hamming_encode(data: str) -> list[int]:
    n = len(data)
    r = hamming_parity_count(n)
    total = n + r
    word = [0] * (total + 1)  # slot 0 unused
    it = iter(data)
    for pos in range(1, total + 1):
        if pos & (pos - 1):
            word[pos] = int(next(it))
    for k in range(r):
        p = 1 << k
        parity = 0
        for pos in range(p + 1, total + 1):
            if pos & p:
                parity ^= word[pos]
        word[p] = parity
    return word[1:]


def encode_fragment(data: str, variant: str) -> EccCodeword:
    if not data:
        raise ValueError("cannot encode an empty fragment")
    _check_bits(data)
    if variant == "none":
        return EccCodeword(data, "", variant, data)
    if variant not in VARIANTS:
        raise ValueError(f"unknown ECC variant {variant!r}")
    word = _hamming_encode(data)
    parity = [word[(1 << k) - 1] for k in range(hamming_parity_count(len(data)))]
    if variant in EXTENDED:
        word.append(sum(word) & 1)
        parity.append(word[-1])
    return EccCodeword(data, "".join(map(str, parity)), variant, "".join(map(str, word)))


def _syndrome(word: list[int]) -> int:
    s = 0
    for pos, bit in enumerate(word, start=1):
        if bit:
            s ^= pos
    return s


def _extract_data(word: list[int]) -> str:
    return "".join(str(b) for pos, b in enumerate(word, start=1) if pos & (pos - 1))


def decode_fragment(codeword: str, n: int, variant: str) -> tuple[str, DecodeStatus]:
    """Syndrome decoding; returns the data bits and what happened to them."""
    _check_bits(codeword)
    if len(codeword) != codeword_length(n, variant):
        raise ValueError(
            f"codeword length {len(codeword)} does not fit n={n}, variant={variant}"
        )
    if variant == "none":
        return codeword, OK
    bits = [int(c) for c in codeword]
    if variant == "hamming":
        s = _syndrome(bits)
        if s == 0:
            return _extract_data(bits), OK
        if s > len(bits):
            return _extract_data(bits), UNCORRECTABLE
        bits[s - 1] ^= 1
        return _extract_data(bits), DecodeStatus("corrected", s)
    word, overall = bits[:-1], bits[-1]
    s = _syndrome(word)
    parity_ok = (sum(word) & 1) == overall
    if s == 0 and parity_ok:
        return _extract_data(word), OK
    if s == 0:
        # the overall parity bit itself flipped
        return _extract_data(word), DecodeStatus("corrected", len(bits))
    if parity_ok or s > len(word):
        return _extract_data(word), UNCORRECTABLE
    word[s - 1] ^= 1
    return _extract_data(word), DecodeStatus("corrected", s)


def split_fragments(message: str, n: int) -> list[str]:
    """n-bit fragments, the last one zero-padded."""
    if n < 1:
        raise ValueError("fragment size must be >= 1")
    frags = [message[i:i + n] for i in range(0, len(message), n)]
    if frags and len(frags[-1]) < n:
        frags[-1] = frags[-1].ljust(n, "0")
    return frags


def inline_expand(message: str, n: int) -> str:
    """Replace every n-bit fragment of ``message`` by its hamming+ codeword."""
    _check_bits(message)
    return "".join(encode_fragment(f, "hamming+").bits for f in split_fragments(message, n))


def inline_decode(expanded: str, n: int) -> tuple[str, list[DecodeStatus]]:
    """Inverse of :func:`inline_expand` (padding is left in place)."""
    width = codeword_length(n, "hamming+")
    if len(expanded) % width:
        raise ValueError(f"expanded length {len(expanded)} is not a multiple of {width}")
    data, statuses = [], []
    for i in range(0, len(expanded), width):
        d, st = decode_fragment(expanded[i:i + width], n, "hamming+")
        data.append(d)
        statuses.append(st)
    return "".join(data), statuses


def hamming_distance(a: str, b: str) -> int:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(x != y for x, y in zip(a, b))


def near_match(candidate: str, target: str, variant: str) -> bool:
    d = hamming_distance(candidate, target)
    if variant == "hamming+":
        return d <= 1
    return d == 0

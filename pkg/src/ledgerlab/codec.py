"""Canonical binary encoding used for hashing, signing and size accounting.

Every structure in the ledger is measured and identified through this one
encoding, so the rules are deliberately rigid:

* unsigned integers: fixed 8-byte big-endian
* floats (timestamps, expected-hash-count difficulty): IEEE-754 binary64, big-endian
* digests: raw 32 bytes
* variable byte strings (and UTF-8 text): 4-byte big-endian count, then the bytes
* lists: 4-byte big-endian element count, then each element
* enums: 1-byte discriminant, then the variant payload

decode(encode(v)) == v for every supported value; anything else raises CodecError.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, TypeVar

from .errors import LedgerError

T = TypeVar("T")

U64_MAX = (1 << 64) - 1


class CodecError(LedgerError):
    """Value outside the encodable domain, or malformed bytes on decode."""


def enc_u8(value: int) -> bytes:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 0xFF:
        raise CodecError(f"u8 out of range: {value!r}")
    return value.to_bytes(1, "big")


def enc_u64(value: int) -> bytes:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= U64_MAX:
        raise CodecError(f"u64 out of range: {value!r}")
    return value.to_bytes(8, "big")


def enc_f64(value: float) -> bytes:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CodecError(f"not a float: {value!r}")
    return struct.pack(">d", float(value))


def enc_digest(value: bytes) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != 32:
        raise CodecError(f"digest must be exactly 32 bytes, got {value!r}")
    return bytes(value)


def enc_bytes(value: bytes) -> bytes:
    if not isinstance(value, (bytes, bytearray)):
        raise CodecError(f"not bytes: {value!r}")
    if len(value) > 0xFFFFFFFF:
        raise CodecError("byte string too long")
    return len(value).to_bytes(4, "big") + bytes(value)


def enc_str(value: str) -> bytes:
    if not isinstance(value, str):
        raise CodecError(f"not a string: {value!r}")
    return enc_bytes(value.encode("utf-8"))


def enc_list(items: Iterable[T], enc_item: Callable[[T], bytes]) -> bytes:
    parts = [enc_item(item) for item in items]
    if len(parts) > 0xFFFFFFFF:
        raise CodecError("list too long")
    return len(parts).to_bytes(4, "big") + b"".join(parts)


class Reader:
    """Cursor over an encoded buffer. Raises CodecError on any malformation."""

    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CodecError("buffer underrun")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def digest(self) -> bytes:
        return self._take(32)

    def bytes_(self) -> bytes:
        n = int.from_bytes(self._take(4), "big")
        return self._take(n)

    def str_(self) -> str:
        raw = self.bytes_()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError("invalid utf-8") from exc

    def list_(self, dec_item: Callable[["Reader"], T]) -> list[T]:
        n = int.from_bytes(self._take(4), "big")
        return [dec_item(self) for _ in range(n)]

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise CodecError(f"{len(self._data) - self._pos} trailing bytes")

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

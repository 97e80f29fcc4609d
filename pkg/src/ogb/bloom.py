"""Tile liveness filters: a global Bloom filter fed by per-engine counters.

Engines track how many stored items hash into each bucket with a counting
filter; whenever a bucket crosses zero (either way) they publish the
transition.  The server keeps one bit vector per engine and ORs them, so a
tile that became void on one engine stays visible while another engine still
holds data for it.  All processes hash the canonical tile-prefix string with
the same fixed-seed family, which keeps bucket indices identical everywhere.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import zlib
from array import array
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import StorageError
from .names import SCHEME, SYSTEM_ROOT

log = logging.getLogger(__name__)

DEFAULT_M = 1 << 20
DEFAULT_H = 7

BF_TOPIC = SCHEME + SYSTEM_ROOT + "/BF"
BF_QUERY_ROOT = SCHEME + SYSTEM_ROOT + "/bf-query"

_FNV_PRIME = 0x100000001B3
_FNV_SEED_1 = 0xCBF29CE484222325
_FNV_SEED_2 = 0xCBF29CE484222325 ^ 0x5A5A5A5A5A5A5A5A
_MASK64 = (1 << 64) - 1

UP = "up"
DOWN = "down"


def _fnv1a(data: bytes, seed: int) -> int:
    value = seed
    for byte in data:
        value ^= byte
        value = (value * _FNV_PRIME) & _MASK64
    return value


def bucket_indexes(key: str, m: int, h: int) -> list[int]:
    """Double-hashed bucket indices; deterministic across processes."""
    data = key.encode("utf-8")
    h1 = _fnv1a(data, _FNV_SEED_1)
    h2 = _fnv1a(data, _FNV_SEED_2) | 1
    return [(h1 + i * h2) % m for i in range(h)]


def theoretical_fpr(m: int, h: int, n: int) -> float:
    """Expected false-positive rate after n distinct keys."""
    return (1.0 - (1.0 - 1.0 / m) ** (h * n)) ** h


def publication_name(engine_id: str, seq: int) -> str:
    return "%s/%s/%d" % (BF_TOPIC, engine_id, seq)


@dataclass(frozen=True)
class BfPublication:
    """One bucket transition on one engine."""

    engine_id: str
    bucket_index: int
    direction: str                    # UP on 0->1, DOWN on ->0
    seq: int

    def to_dict(self) -> dict:
        return {
            "engineId": self.engine_id,
            "bucketIndex": self.bucket_index,
            "direction": self.direction,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BfPublication":
        return cls(data["engineId"], data["bucketIndex"], data["direction"],
                   data["seq"])


class BloomFilter:
    """Plain m-bit filter; add-only when loaded directly with keys."""

    def __init__(self, m: int = DEFAULT_M, h: int = DEFAULT_H):
        self.m = m
        self.h = h
        self.bits = bytearray((m + 7) // 8)

    def indexes(self, key: str) -> list[int]:
        return bucket_indexes(key, self.m, self.h)

    def set_bucket(self, index: int) -> None:
        self.bits[index >> 3] |= 1 << (index & 7)

    def clear_bucket(self, index: int) -> None:
        self.bits[index >> 3] &= ~(1 << (index & 7))

    def test_bucket(self, index: int) -> bool:
        return bool(self.bits[index >> 3] & (1 << (index & 7)))

    def add(self, key: str) -> None:
        for index in self.indexes(key):
            self.set_bucket(index)

    def contains(self, key: str) -> bool:
        return all(self.test_bucket(i) for i in self.indexes(key))

    def __contains__(self, key: str) -> bool:
        return self.contains(key)

    def bit_count(self) -> int:
        return int.from_bytes(self.bits, "big").bit_count()

    def to_bytes(self) -> bytes:
        return bytes(self.bits)

    def load_bytes(self, data: bytes) -> None:
        if len(data) != len(self.bits):
            raise StorageError("bitmap size mismatch: %d != %d"
                               % (len(data), len(self.bits)))
        self.bits[:] = data

    def clear(self) -> None:
        for i in range(len(self.bits)):
            self.bits[i] = 0


class CountingBloomFilter:
    """Per-engine bucket counters over the same hash family as the global BF.

    insert/remove return the publications for every bucket that crossed
    zero, stamped with this engine's id and a monotone sequence number.
    """

    def __init__(self, m: int = DEFAULT_M, h: int = DEFAULT_H,
                 engine_id: str = ""):
        self.m = m
        self.h = h
        self.engine_id = engine_id
        self.counters = array("I", bytes(4 * m))
        self.seq = 0

    def _publish(self, index: int, direction: str) -> BfPublication:
        pub = BfPublication(self.engine_id, index, direction, self.seq)
        self.seq += 1
        return pub

    def insert(self, key: str) -> list[BfPublication]:
        pubs = []
        for index in set(bucket_indexes(key, self.m, self.h)):
            self.counters[index] += 1
            if self.counters[index] == 1:
                pubs.append(self._publish(index, UP))
        return pubs

    def remove(self, key: str) -> list[BfPublication]:
        indexes = set(bucket_indexes(key, self.m, self.h))
        if any(self.counters[i] == 0 for i in indexes):
            raise StorageError("removing a key that was never inserted: %r" % key)
        pubs = []
        for index in indexes:
            self.counters[index] -= 1
            if self.counters[index] == 0:
                pubs.append(self._publish(index, DOWN))
        return pubs

    def contains(self, key: str) -> bool:
        return all(self.counters[i] > 0
                   for i in bucket_indexes(key, self.m, self.h))

    def bitmap(self) -> bytes:
        """The counter > 0 bit vector, as held for this engine by the server."""
        bits = bytearray((self.m + 7) // 8)
        for index, count in enumerate(self.counters):
            if count:
                bits[index >> 3] |= 1 << (index & 7)
        return bytes(bits)


def insert_key(cbf: CountingBloomFilter, tile_prefix: str) -> list[BfPublication]:
    return cbf.insert(tile_prefix)


def remove_key(cbf: CountingBloomFilter, tile_prefix: str) -> list[BfPublication]:
    return cbf.remove(tile_prefix)


def encode_digest(seq: int, bitmap: bytes) -> bytes:
    return json.dumps({
        "seq": seq,
        "bitmapB64": base64.b64encode(zlib.compress(bitmap)).decode("ascii"),
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_digest(payload: bytes) -> tuple[int, bytes]:
    data = json.loads(payload.decode("utf-8"))
    return data["seq"], zlib.decompress(base64.b64decode(data["bitmapB64"]))


class BloomServer:
    """Holds one bit vector per engine and answers membership on their OR."""

    def __init__(self, m: int = DEFAULT_M, h: int = DEFAULT_H,
                 engines: Iterable[str] = ()):
        self.m = m
        self.h = h
        self.engine_bits: dict[str, BloomFilter] = {
            engine_id: BloomFilter(m, h) for engine_id in engines
        }
        self.last_seq: dict[str, int] = {engine_id: -1 for engine_id in self.engine_bits}
        self.global_bf = BloomFilter(m, h)
        self.applied = 0
        self.dropped = 0

    def register_engine(self, engine_id: str) -> None:
        if engine_id not in self.engine_bits:
            self.engine_bits[engine_id] = BloomFilter(self.m, self.h)
            self.last_seq[engine_id] = -1

    def apply(self, pub: BfPublication) -> bool:
        """Apply one publication; False when ignored (unknown/stale)."""
        bits = self.engine_bits.get(pub.engine_id)
        if bits is None:
            log.warning("publication from unknown engine %r ignored", pub.engine_id)
            self.dropped += 1
            return False
        if pub.seq <= self.last_seq[pub.engine_id]:
            self.dropped += 1
            return False
        self.last_seq[pub.engine_id] = pub.seq
        if pub.direction == UP:
            bits.set_bucket(pub.bucket_index)
            self.global_bf.set_bucket(pub.bucket_index)
        else:
            bits.clear_bucket(pub.bucket_index)
            if not any(other.test_bucket(pub.bucket_index)
                       for other in self.engine_bits.values()):
                self.global_bf.clear_bucket(pub.bucket_index)
        self.applied += 1
        return True

    def load_digest(self, engine_id: str, seq: int, bitmap: bytes) -> None:
        """Replace an engine's state wholesale (restart recovery)."""
        self.register_engine(engine_id)
        self.engine_bits[engine_id].load_bytes(bitmap)
        self.last_seq[engine_id] = seq - 1
        self._rebuild_global()

    def _rebuild_global(self) -> None:
        merged = bytearray(len(self.global_bf.bits))
        for bits in self.engine_bits.values():
            for i, byte in enumerate(bits.bits):
                merged[i] |= byte
        self.global_bf.bits[:] = merged

    def membership(self, prefixes: Sequence[str]) -> list[bool]:
        return [self.global_bf.contains(p) for p in prefixes]

    def stats(self) -> dict:
        return {
            "m": self.m,
            "h": self.h,
            "engines": sorted(self.engine_bits),
            "lastSeq": dict(self.last_seq),
            "applied": self.applied,
            "dropped": self.dropped,
            "globalBitsSet": self.global_bf.bit_count(),
            "theoreticalFprAtCurrentLoad": self._fpr_estimate(),
        }

    def _fpr_estimate(self) -> float:
        set_bits = self.global_bf.bit_count()
        if set_bits == 0:
            return 0.0
        # Back out an effective key count from the fill ratio.
        fill = set_bits / self.m
        n = -self.m / self.h * math.log(max(1.0 - fill, 1e-12))
        return theoretical_fpr(self.m, self.h, max(int(n), 1))

"""The semantic cache itself: page-based content storage plus the semantic
index, disjointness enforcement between cached segments, and LRU bookkeeping
through per-segment visit timestamps.

Content pages hold length-prefixed rows (kind-tagged values in sorted
attribute order) and carry a CRC32 each; a segment's pages form a linear
chain. Space is managed at page granularity: allocation takes free pages,
deallocation just marks them free again.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping

from . import predicate as pred_mod
from .backend import project_rows
from .predicate import (
    BlowupError,
    DNFPredicate,
    Value,
    conjoin,
    evaluate,
    is_satisfiable,
    kind_of_value,
    negate,
    parse_literal,
    predicate_attrs,
    restrict_to_attrs,
)
from .query import format_predicate, parse_predicate
from .schema import Catalog, ValueKind


class StoreError(Exception):
    pass


class InsufficientSpaceError(StoreError):
    """Not enough free pages; recoverable by evicting."""


class UnknownSegmentError(StoreError):
    pass


class PageCorruptionError(StoreError):
    pass


@dataclass(frozen=True)
class CacheConfig:
    page_capacity_bytes: int = 4096
    total_pages: int = 64
    blowup_cap: int = 64

    def __post_init__(self):
        if self.page_capacity_bytes <= 0 or self.total_pages <= 0 or self.blowup_cap <= 0:
            raise StoreError("cache configuration values must be positive")


@dataclass
class Page:
    page_id: int
    payload: bytes
    used_bytes: int
    next_page: int | None
    checksum: int


@dataclass
class SegmentIndexEntry:
    """Index record for one cached segment."""

    segment_id: int
    name: str
    s_class: str
    s_attrs: frozenset[str]
    s_pred: DNFPredicate
    first_page: int | None
    timestamp: int
    tuple_count: int
    page_ids: tuple[int, ...]


@dataclass(frozen=True)
class Segment:
    index: SegmentIndexEntry

    @property
    def tuple_count(self) -> int:
        return self.index.tuple_count


def disjoint(s1: SegmentIndexEntry, s2: SegmentIndexEntry) -> bool:
    """Two segments share no information: different classes, disjoint
    attribute sets, or contradictory predicates."""
    if s1.s_class != s2.s_class:
        return True
    if not (s1.s_attrs & s2.s_attrs):
        return True
    try:
        overlap = conjoin(s1.s_pred, s2.s_pred, max_disjuncts=1 << 20)
    except BlowupError:
        return False  # cannot prove contradiction; treat as overlapping
    return not is_satisfiable(overlap)


# --- row encoding ----------------------------------------------------------

_KIND_TAGS = {
    ValueKind.INTEGER: b"i",
    ValueKind.DECIMAL: b"d",
    ValueKind.TEXT: b"t",
    ValueKind.DATE: b"a",
}
_TAG_KINDS = {tag[0]: kind for kind, tag in _KIND_TAGS.items()}

_U32 = struct.Struct(">I")


def _encode_value(v: Value) -> bytes:
    if isinstance(v, str):
        text = v
    elif hasattr(v, "isoformat"):
        text = v.isoformat()
    else:
        text = str(v)
    raw = text.encode("utf-8")
    return _KIND_TAGS[kind_of_value(v)] + _U32.pack(len(raw)) + raw


def encode_row(row: Mapping[str, Value], attr_order: tuple[str, ...]) -> bytes:
    body = b"".join(_encode_value(row[a]) for a in attr_order)
    return _U32.pack(len(body)) + body


def decode_rows(payload: bytes, attr_order: tuple[str, ...]) -> list[dict]:
    rows = []
    pos = 0
    while pos < len(payload):
        (body_len,) = _U32.unpack_from(payload, pos)
        pos += 4
        end = pos + body_len
        row: dict[str, Value] = {}
        for attr in attr_order:
            tag = payload[pos]
            (vlen,) = _U32.unpack_from(payload, pos + 1)
            text = payload[pos + 5 : pos + 5 + vlen].decode("utf-8")
            row[attr] = parse_literal(text, _TAG_KINDS[tag])
            pos += 5 + vlen
        if pos != end:
            raise PageCorruptionError("row length does not match its values")
        rows.append(row)
    return rows


def _pack_rows(encoded: list[bytes], capacity: int) -> list[bytes]:
    """Greedy first-fit packing of whole rows into page payloads."""
    pages: list[bytes] = []
    current: list[bytes] = []
    used = 0
    for rec in encoded:
        if used + len(rec) > capacity and current:
            pages.append(b"".join(current))
            current, used = [], 0
        current.append(rec)
        used += len(rec)
    if current:
        pages.append(b"".join(current))
    return pages


class SemanticCache:
    """Single-writer page store with a semantic index on top."""

    def __init__(self, catalog: Catalog, config: CacheConfig | None = None):
        self.catalog = catalog
        self.config = config or CacheConfig()
        self.segments: dict[int, SegmentIndexEntry] = {}
        self.pages: dict[int, Page] = {}
        self._free_ids = list(range(self.config.total_pages))
        heapq.heapify(self._free_ids)
        self.next_segment_id = 1
        self.evictions = 0

    # --- page level -------------------------------------------------------

    def free_page_count(self) -> int:
        return len(self._free_ids)

    def used_page_count(self) -> int:
        return len(self.pages)

    def allocate_pages(self, n: int) -> list[int]:
        if n > len(self._free_ids):
            raise InsufficientSpaceError(
                f"need {n} pages, only {len(self._free_ids)} free"
            )
        return [heapq.heappop(self._free_ids) for _ in range(n)]

    def _release_pages(self, page_ids: Iterable[int]) -> None:
        for pid in page_ids:
            self.pages.pop(pid, None)
            heapq.heappush(self._free_ids, pid)

    # --- segment level ------------------------------------------------------

    def _attr_order(self, entry_attrs: frozenset[str]) -> tuple[str, ...]:
        return tuple(sorted(entry_attrs))

    def _write_segment_pages(self, payloads: list[bytes]) -> tuple[int | None, tuple[int, ...]]:
        ids = self.allocate_pages(len(payloads))
        for pid, payload, nxt in zip(ids, payloads, ids[1:] + [None]):
            self.pages[pid] = Page(
                page_id=pid,
                payload=payload,
                used_bytes=len(payload),
                next_page=nxt,
                checksum=zlib.crc32(payload),
            )
        return (ids[0] if ids else None), tuple(ids)

    def _encode_tuples(
        self, rows: list[Mapping[str, Value]], attr_order: tuple[str, ...]
    ) -> list[bytes] | None:
        """Page payloads for the rows, or None when a row exceeds one page."""
        encoded = [encode_row(r, attr_order) for r in rows]
        if any(len(rec) > self.config.page_capacity_bytes for rec in encoded):
            return None
        return _pack_rows(encoded, self.config.page_capacity_bytes)

    def estimate_pages(self, attrs: Iterable[str], rows: list[Mapping[str, Value]]) -> int | None:
        """Pages the rows would occupy, or None when they can never fit."""
        stored = frozenset(attrs)
        payloads = self._encode_tuples(
            [{a: r[a] for a in stored} for r in rows], self._attr_order(stored)
        )
        if payloads is None or len(payloads) > self.config.total_pages:
            return None
        return len(payloads)

    def insert_segment(
        self,
        class_name: str,
        attrs: Iterable[str],
        pred: DNFPredicate,
        tuples: list[Mapping[str, Value]],
        now: int,
    ) -> int | None:
        """Store a query result as a new disjoint segment.

        The predicate is first reduced to its residual against every
        overlapping same-class segment, and tuples outside the residual are
        dropped, so cached segments never overlap. Returns the new segment
        id, or None when nothing new remains to store (or it cannot fit).
        """
        schema = self.catalog.schema_for(class_name)
        stored_attrs = frozenset(attrs) | schema.primary_key | predicate_attrs(pred)
        residual = pred
        try:
            for other in self.segments.values():
                if other.s_class != class_name or not (other.s_attrs & stored_attrs):
                    continue
                if not is_satisfiable(conjoin(residual, other.s_pred, self.config.blowup_cap)):
                    continue
                residual = conjoin(
                    residual, negate(other.s_pred, self.config.blowup_cap), self.config.blowup_cap
                )
                if residual.is_false:
                    return None
        except BlowupError:
            return None
        if not is_satisfiable(residual):
            return None

        testable = restrict_to_attrs(residual, stored_attrs)
        kept = [
            {a: row[a] for a in stored_attrs}
            for row in tuples
            if evaluate(testable, row)
        ]
        kept = project_rows(kept, stored_attrs)
        if not kept:
            return None

        attr_order = self._attr_order(stored_attrs)
        payloads = self._encode_tuples(kept, attr_order)
        if payloads is None or len(payloads) > self.config.total_pages:
            return None
        if len(payloads) > len(self._free_ids):
            try:
                self.evict_until(len(payloads))
            except InsufficientSpaceError:
                return None
        first, ids = self._write_segment_pages(payloads)
        seg_id = self.next_segment_id
        self.next_segment_id += 1
        self.segments[seg_id] = SegmentIndexEntry(
            segment_id=seg_id,
            name=f"S{seg_id}",
            s_class=class_name,
            s_attrs=stored_attrs,
            s_pred=residual,
            first_page=first,
            timestamp=now,
            tuple_count=len(kept),
            page_ids=ids,
        )
        return seg_id

    def _entry(self, segment_id: int) -> SegmentIndexEntry:
        try:
            return self.segments[segment_id]
        except KeyError:
            raise UnknownSegmentError(f"no segment with id {segment_id}") from None

    def deallocate_segment(self, segment_id: int) -> None:
        entry = self._entry(segment_id)
        self._release_pages(entry.page_ids)
        del self.segments[segment_id]

    def lookup_candidates(self, class_name: str) -> list[SegmentIndexEntry]:
        found = [e for e in self.segments.values() if e.s_class == class_name]
        found.sort(key=lambda e: (-e.timestamp, -e.segment_id))
        return found

    def touch(self, segment_id: int, now: int) -> None:
        self._entry(segment_id).timestamp = now

    def evict_until(self, pages_needed: int, protected: frozenset[int] = frozenset()) -> list[int]:
        """LRU-evict whole segments until ``pages_needed`` pages are free."""
        evicted: list[int] = []
        while len(self._free_ids) < pages_needed:
            victims = [e for e in self.segments.values() if e.segment_id not in protected]
            if not victims:
                raise InsufficientSpaceError(
                    f"cannot free {pages_needed} pages, nothing evictable left"
                )
            victim = min(victims, key=lambda e: (e.timestamp, e.segment_id))
            self.deallocate_segment(victim.segment_id)
            self.evictions += 1
            evicted.append(victim.segment_id)
        return evicted

    def scan_segment(self, segment_id: int) -> list[dict]:
        entry = self._entry(segment_id)
        attr_order = self._attr_order(entry.s_attrs)
        rows: list[dict] = []
        pid = entry.first_page
        while pid is not None:
            page = self.pages.get(pid)
            if page is None:
                raise PageCorruptionError(f"segment {entry.name}: page {pid} missing")
            if zlib.crc32(page.payload[: page.used_bytes]) != page.checksum:
                raise PageCorruptionError(f"segment {entry.name}: page {pid} checksum mismatch")
            rows.extend(decode_rows(page.payload[: page.used_bytes], attr_order))
            pid = page.next_page
        return rows

    def replace_segment(
        self,
        segment_id: int,
        attrs: frozenset[str],
        pred: DNFPredicate,
        tuples: list[Mapping[str, Value]],
    ) -> bool:
        """Rewrite a segment's attributes, predicate and content in place.

        Keeps the id, name and timestamp. Returns False (leaving the segment
        untouched) when the new content cannot fit even after evicting every
        other segment.
        """
        entry = self._entry(segment_id)
        attr_order = self._attr_order(attrs)
        rows = project_rows(tuples, attrs)
        payloads = self._encode_tuples(rows, attr_order)
        if payloads is None or len(payloads) > self.config.total_pages:
            return False
        old_pages = entry.page_ids
        self._release_pages(old_pages)
        if len(payloads) > len(self._free_ids):
            self.evict_until(len(payloads), protected=frozenset({segment_id}))
        first, ids = self._write_segment_pages(payloads)
        entry.s_attrs = attrs
        entry.s_pred = pred
        entry.first_page = first
        entry.page_ids = ids
        entry.tuple_count = len(rows)
        return True

    def check_disjoint(self) -> list[tuple[str, str]]:
        """Pairs of segment names violating pairwise disjointness (empty
        when the invariant holds)."""
        bad = []
        entries = sorted(self.segments.values(), key=lambda e: e.segment_id)
        for i, a in enumerate(entries):
            for b in entries[i + 1 :]:
                if not disjoint(a, b):
                    bad.append((a.name, b.name))
        return bad

    # --- persistence --------------------------------------------------------

    MAGIC = b"SEMC"
    VERSION = 1

    def dump(self) -> bytes:
        out = bytearray()
        out += self.MAGIC
        out.append(self.VERSION)
        out += struct.pack(
            ">III",
            self.config.page_capacity_bytes,
            self.config.total_pages,
            self.config.blowup_cap,
        )
        out += struct.pack(">IQ", self.next_segment_id, self.evictions)

        def put_str(s: str) -> None:
            raw = s.encode("utf-8")
            out.extend(_U32.pack(len(raw)))
            out.extend(raw)

        entries = sorted(self.segments.values(), key=lambda e: e.segment_id)
        out += _U32.pack(len(entries))
        for e in entries:
            out += _U32.pack(e.segment_id)
            put_str(e.name)
            put_str(e.s_class)
            out += _U32.pack(len(e.s_attrs))
            for a in sorted(e.s_attrs):
                put_str(a)
            if e.s_pred.is_true:
                out.append(0)
            elif e.s_pred.is_false:
                out.append(1)
            else:
                out.append(2)
                put_str(format_predicate(e.s_pred))
            out += struct.pack(">q", e.timestamp)
            out += _U32.pack(e.tuple_count)
            out += _U32.pack(len(e.page_ids))
            for pid in e.page_ids:
                out += _U32.pack(pid)

        pages = sorted(self.pages.values(), key=lambda p: p.page_id)
        out += _U32.pack(len(pages))
        for p in pages:
            nxt = p.next_page if p.next_page is not None else 0xFFFFFFFF
            out += struct.pack(">IIII", p.page_id, p.used_bytes, nxt, p.checksum)
            out += p.payload[: p.used_bytes]
        return bytes(out)

    @classmethod
    def load(cls, data: bytes, catalog: Catalog) -> "SemanticCache":
        view = memoryview(data)
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(view):
                raise PageCorruptionError("cache dump truncated")
            chunk = bytes(view[pos : pos + n])
            pos += n
            return chunk

        def take_u32() -> int:
            return _U32.unpack(take(4))[0]

        def take_str() -> str:
            return take(take_u32()).decode("utf-8")

        if take(4) != cls.MAGIC:
            raise PageCorruptionError("not a cache dump (bad magic bytes)")
        version = take(1)[0]
        if version != cls.VERSION:
            raise PageCorruptionError(f"unsupported cache dump version {version}")
        cap, total, blowup = struct.unpack(">III", take(12))
        cache = cls(catalog, CacheConfig(cap, total, blowup))
        cache.next_segment_id, cache.evictions = struct.unpack(">IQ", take(12))

        for _ in range(take_u32()):
            seg_id = take_u32()
            name = take_str()
            s_class = take_str()
            attrs = frozenset(take_str() for _ in range(take_u32()))
            pred_kind = take(1)[0]
            if pred_kind == 0:
                pred = pred_mod.TRUE
            elif pred_kind == 1:
                pred = pred_mod.FALSE
            else:
                pred = parse_predicate(take_str(), catalog, s_class)
            (timestamp,) = struct.unpack(">q", take(8))
            tuple_count = take_u32()
            page_ids = tuple(take_u32() for _ in range(take_u32()))
            cache.segments[seg_id] = SegmentIndexEntry(
                segment_id=seg_id,
                name=name,
                s_class=s_class,
                s_attrs=attrs,
                s_pred=pred,
                first_page=page_ids[0] if page_ids else None,
                timestamp=timestamp,
                tuple_count=tuple_count,
                page_ids=page_ids,
            )

        used: set[int] = set()
        for _ in range(take_u32()):
            pid, used_bytes, nxt, crc = struct.unpack(">IIII", take(16))
            payload = take(used_bytes)
            if zlib.crc32(payload) != crc:
                raise PageCorruptionError(f"page {pid} checksum mismatch in cache dump")
            cache.pages[pid] = Page(
                page_id=pid,
                payload=payload,
                used_bytes=used_bytes,
                next_page=None if nxt == 0xFFFFFFFF else nxt,
                checksum=crc,
            )
            used.add(pid)
        if pos != len(view):
            raise PageCorruptionError("trailing bytes after cache dump")
        cache._free_ids = [i for i in range(total) if i not in used]
        heapq.heapify(cache._free_ids)
        return cache

    def max_timestamp(self) -> int:
        return max((e.timestamp for e in self.segments.values()), default=0)

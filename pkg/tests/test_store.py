import random
from datetime import date

import pytest

from semcache.predicate import (
    TRUE,
    ComparePredicate,
    Conjunct,
    DNFPredicate,
    evaluate,
    implies,
    restrict_to_attrs,
    predicate_attrs,
)
from semcache.schema import load_catalog
from semcache.store import (
    CacheConfig,
    InsufficientSpaceError,
    PageCorruptionError,
    SegmentIndexEntry,
    SemanticCache,
    StoreError,
    UnknownSegmentError,
    disjoint,
)

CAT = load_catalog("class R { k: integer, a: integer, b: integer, t: text ; key(k) }")


def atom(attr, op, const):
    return ComparePredicate(attr, op, const)


def pred(*atoms_):
    return DNFPredicate([Conjunct(atoms_)])


def rows_for(pred_, n=50, with_attrs=("k", "a", "b", "t")):
    out = []
    for k in range(n):
        row = {"k": k, "a": k % 25, "b": 2 * k, "t": f"t{k % 7}"}
        if evaluate(restrict_to_attrs(pred_, set(with_attrs)), row):
            out.append({c: row[c] for c in with_attrs})
    return out


def fresh(pages=64, page_bytes=4096):
    return SemanticCache(CAT, CacheConfig(page_bytes, pages))


def entry_stub(s_class, attrs, p, ts=0, seg_id=0):
    return SegmentIndexEntry(seg_id, f"S{seg_id}", s_class, frozenset(attrs), p,
                             None, ts, 0, ())


# --- page accounting --------------------------------------------------------

def test_allocate_pages_counting():
    cache = SemanticCache(CAT, CacheConfig(256, 10))
    got = cache.allocate_pages(3)
    assert len(got) == 3
    assert cache.free_page_count() == 7


def test_allocate_zero():
    cache = fresh(10)
    assert cache.allocate_pages(0) == []


def test_allocate_more_than_total():
    cache = SemanticCache(CAT, CacheConfig(256, 4))
    with pytest.raises(InsufficientSpaceError):
        cache.allocate_pages(5)


def test_page_accounting_invariant_after_mutations():
    cache = SemanticCache(CAT, CacheConfig(128, 16))
    sids = []
    for i in range(4):
        sid = cache.insert_segment("R", {"k", "a"}, pred(atom("a", "=", i)),
                                   rows_for(pred(atom("a", "=", i)), with_attrs=("k", "a")),
                                   now=i)
        if sid is not None:
            sids.append(sid)
    assert sids
    cache.deallocate_segment(sids[0])
    used = sum(len(e.page_ids) for e in cache.segments.values())
    assert cache.free_page_count() + used == cache.config.total_pages
    assert cache.used_page_count() == used


# --- disjointness predicate --------------------------------------------------

def test_disjoint_different_classes():
    s1 = entry_stub("Patient referral service", {"Plast-name"},
                    pred(atom("PAge", ">", 20), atom("PAge", "<", 60)))
    s3 = entry_stub("Scheduling Service", {"Schedule-ID"},
                    pred(atom("Sdate", "=", date(2010, 12, 28))))
    assert disjoint(s1, s3)


def test_disjoint_contradictory_predicates():
    a = entry_stub("R", {"k", "a"}, pred(atom("a", ">", 10)))
    b = entry_stub("R", {"k", "a"}, pred(atom("a", "<=", 10)))
    assert disjoint(a, b)


def test_not_disjoint_overlapping_band():
    s1 = entry_stub("P", {"k", "Plast-name", "PAge"},
                    pred(atom("PAge", ">", 20), atom("PAge", "<", 60)))
    s2 = entry_stub("P", {"k", "Pfirst-name", "Plast-name", "PAge"},
                    pred(atom("PAge", ">", 10)))
    assert not disjoint(s1, s2)  # e.g. PAge = 30 satisfies both


def test_disjoint_attribute_sets():
    a = entry_stub("R", {"a"}, pred(atom("a", ">", 0)))
    b = entry_stub("R", {"b"}, pred(atom("b", ">", 0)))
    assert disjoint(a, b)


# --- insertion and residuals --------------------------------------------------

def test_insert_stores_augmented_attrs():
    cache = fresh()
    p = pred(atom("a", ">", 5))
    sid = cache.insert_segment("R", {"b"}, p, rows_for(p), now=1)
    entry = cache.segments[sid]
    assert entry.s_attrs == {"b", "k", "a"}  # projection + key + predicate attrs
    assert entry.s_pred == p
    assert entry.timestamp == 1
    for row in cache.scan_segment(sid):
        assert set(row) == {"b", "k", "a"}
        assert evaluate(p, row)


def test_insert_subsumed_is_rejected():
    cache = fresh()
    wide = pred(atom("a", ">", 0))
    sid = cache.insert_segment("R", {"b"}, wide, rows_for(wide), now=1)
    assert sid is not None
    narrow = pred(atom("a", ">", 10))
    assert cache.insert_segment("R", {"b"}, narrow, rows_for(narrow), now=2) is None


def test_insert_residual_subtraction():
    # Existing band 20<a<60 (here scaled to 2<a<6); inserting a>0 keeps only
    # the part outside the band, and the stored tuples follow suit.
    cache = fresh()
    band = pred(atom("a", ">", 2), atom("a", "<", 6))
    cache.insert_segment("R", {"b"}, band, rows_for(band), now=1)
    wide = pred(atom("a", ">", 0))
    sid = cache.insert_segment("R", {"b"}, wide, rows_for(wide), now=2)
    entry = cache.segments[sid]
    residual = entry.s_pred
    for x in range(-3, 30):
        inside = evaluate(residual, {"a": x})
        assert inside == (x > 0 and not (2 < x < 6)), x
    for row in cache.scan_segment(sid):
        assert evaluate(residual, row)
    assert cache.check_disjoint() == []


def test_insert_empty_result_rejected():
    cache = fresh()
    p = pred(atom("a", ">", 5))
    assert cache.insert_segment("R", {"b"}, p, [], now=1) is None


def test_insert_too_big_for_cache_rejected():
    cache = SemanticCache(CAT, CacheConfig(64, 2))
    p = pred(atom("a", ">=", 0))
    assert cache.insert_segment("R", {"k", "a", "b", "t"}, p, rows_for(p, 500), now=1) is None
    assert cache.free_page_count() == 2


def test_insert_oversized_tuple_rejected():
    cache = SemanticCache(CAT, CacheConfig(32, 8))
    p = pred(atom("t", "=", "x" * 100))
    big = [{"k": 1, "t": "x" * 100}]
    assert cache.insert_segment("R", {"k", "t"}, p, big, now=1) is None


# --- lookup, touch, eviction ---------------------------------------------------

def seeded_cache():
    cache = fresh()
    ids = {}
    for i, lo in enumerate((0, 6, 12, 18)):
        p = pred(atom("a", ">=", lo), atom("a", "<", lo + 6))
        ids[i] = cache.insert_segment("R", {"b"}, p, rows_for(p), now=i + 1)
    assert all(v is not None for v in ids.values())
    return cache, ids


def test_lookup_candidates_recency_order():
    cache, ids = seeded_cache()
    got = [e.segment_id for e in cache.lookup_candidates("R")]
    assert got == [ids[3], ids[2], ids[1], ids[0]]
    assert cache.lookup_candidates("NopeClass") == []


def test_touch_reorders_candidates():
    cache, ids = seeded_cache()
    cache.touch(ids[0], now=99)
    got = [e.segment_id for e in cache.lookup_candidates("R")]
    assert got[0] == ids[0]
    assert cache.segments[ids[0]].timestamp == 99


def test_touch_unknown_segment():
    cache = fresh()
    with pytest.raises(UnknownSegmentError):
        cache.touch(123, now=1)


def test_deallocate_then_scan_unknown():
    cache, ids = seeded_cache()
    pages_before = cache.free_page_count()
    entry = cache.segments[ids[1]]
    n_pages = len(entry.page_ids)
    cache.deallocate_segment(ids[1])
    assert cache.free_page_count() == pages_before + n_pages
    with pytest.raises(UnknownSegmentError):
        cache.scan_segment(ids[1])
    with pytest.raises(UnknownSegmentError):
        cache.deallocate_segment(ids[1])


def test_evict_until_lru_order():
    cache, ids = seeded_cache()
    held = sum(len(cache.segments[ids[i]].page_ids) for i in (0, 1))
    free_before = cache.free_page_count()
    evicted = cache.evict_until(free_before + held)
    assert evicted == [ids[0], ids[1]]  # oldest timestamps go first


def test_evict_until_noop_when_enough_free():
    cache, _ = seeded_cache()
    assert cache.evict_until(cache.free_page_count()) == []


def test_evict_everything_for_full_demand():
    cache, ids = seeded_cache()
    evicted = cache.evict_until(cache.config.total_pages)
    assert set(evicted) == set(ids.values())
    assert cache.free_page_count() == cache.config.total_pages


# --- scanning ------------------------------------------------------------------

def test_scan_roundtrip_small():
    cache = fresh()
    p = pred(atom("a", "=", 3))
    rows = rows_for(p)[:5]
    sid = cache.insert_segment("R", {"k", "a", "b", "t"}, p, rows, now=1)
    got = cache.scan_segment(sid)
    key = lambda r: r["k"]
    assert sorted(got, key=key) == sorted(rows, key=key)


def test_scan_multipage_segment():
    cache = SemanticCache(CAT, CacheConfig(page_capacity_bytes=96, total_pages=64))
    p = pred(atom("a", ">=", 0))
    rows = rows_for(p, 60)
    sid = cache.insert_segment("R", {"k", "a", "b", "t"}, p, rows, now=1)
    entry = cache.segments[sid]
    assert len(entry.page_ids) >= 3
    got = cache.scan_segment(sid)
    assert sorted(r["k"] for r in got) == sorted(r["k"] for r in rows)


def test_scan_detects_corruption():
    cache = fresh()
    p = pred(atom("a", "=", 1))
    sid = cache.insert_segment("R", {"k", "a"}, p, rows_for(p, with_attrs=("k", "a")), now=1)
    page = cache.pages[cache.segments[sid].first_page]
    page.payload = page.payload[:-1] + bytes([page.payload[-1] ^ 0xFF])
    with pytest.raises(PageCorruptionError):
        cache.scan_segment(sid)


# --- content fidelity + global disjointness under random mutations ---------------

def test_random_mutations_keep_invariants():
    rng = random.Random(31)
    cache = SemanticCache(CAT, CacheConfig(256, 32))
    for step in range(120):
        op = rng.random()
        if op < 0.6:
            lo = rng.randint(-5, 20)
            hi = lo + rng.randint(0, 12)
            p = pred(atom("a", ">=", lo), atom("a", "<", hi))
            cache.insert_segment("R", {"b"}, p, rows_for(p), now=step)
        elif cache.segments:
            victim = rng.choice(sorted(cache.segments))
            if op < 0.8:
                cache.deallocate_segment(victim)
            else:
                cache.touch(victim, now=step)
        assert cache.check_disjoint() == [], f"step {step}"
        used = sum(len(e.page_ids) for e in cache.segments.values())
        assert cache.free_page_count() + used == cache.config.total_pages
        for entry in cache.segments.values():
            testable = restrict_to_attrs(entry.s_pred, entry.s_attrs)
            for row in cache.scan_segment(entry.segment_id):
                assert evaluate(testable, row)
                if predicate_attrs(entry.s_pred) <= entry.s_attrs:
                    assert evaluate(entry.s_pred, row)


# --- persistence -----------------------------------------------------------------

def test_dump_load_roundtrip_byte_exact():
    cache, _ = seeded_cache()
    blob = cache.dump()
    again = SemanticCache.load(blob, CAT)
    assert again.dump() == blob
    assert sorted(again.segments) == sorted(cache.segments)
    for sid in cache.segments:
        assert sorted(map(str, again.scan_segment(sid))) == sorted(
            map(str, cache.scan_segment(sid)))
        assert again.segments[sid].s_pred == cache.segments[sid].s_pred


def test_load_rejects_bad_magic():
    with pytest.raises(PageCorruptionError, match="magic"):
        SemanticCache.load(b"XXXX" + b"\x00" * 64, CAT)


def test_load_rejects_corrupt_page():
    cache, _ = seeded_cache()
    blob = bytearray(cache.dump())
    blob[-1] ^= 0xFF  # flip a bit inside the last page payload
    with pytest.raises(PageCorruptionError):
        SemanticCache.load(bytes(blob), CAT)


def test_config_validation():
    with pytest.raises(StoreError):
        CacheConfig(page_capacity_bytes=0)

import random
from decimal import Decimal

import pytest

from semcache.backend import Backend
from semcache.engine import Engine, assemble
from semcache.predicate import ComparePredicate, Conjunct, DNFPredicate, evaluate
from semcache.query import Query, parse_query
from semcache.rewrite import RewriteOutcome
from semcache.schema import load_catalog
from semcache.store import CacheConfig, SemanticCache

CAT = load_catalog(
    "class R { k: integer, a: integer, b: integer, t: text ; key(k) }"
)


def make_backend(n=120):
    lines = ["k,a,b,t"]
    for k in range(n):
        lines.append(f"{k},{k % 40},{(7 * k) % 60},w{k % 5}")
    backend = Backend(CAT)
    backend.load_csv("R", "\n".join(lines) + "\n")
    return backend


def make_engine(pages=256, page_bytes=4096, blowup_cap=64, backend=None):
    backend = backend or make_backend()
    cache = SemanticCache(CAT, CacheConfig(page_bytes, pages, blowup_cap))
    return Engine(CAT, backend, cache)


def q(text):
    return parse_query(text, CAT)


def answer_set(rows):
    return {tuple(sorted(r.items())) for r in rows}


def check_oracle(engine, query):
    report = engine.answer(query)
    want = engine.backend.execute(query)
    assert answer_set(report.answer) == answer_set(want), query
    return report


# --- basic flows -------------------------------------------------------------

def test_cold_cache_is_miss_and_caches():
    engine = make_engine()
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 10"))
    assert report.case_type == 5
    assert report.segment_used is None
    assert report.local_tuples == 0
    assert len(report.inserted_segments) == 1
    entry = engine.cache.segments[report.inserted_segments[0]]
    assert entry.s_attrs == {"k", "a", "b"}  # projection + key + filter attrs


def test_repeat_is_full_hit_without_backend():
    engine = make_engine()
    query = q("SELECT b FROM R WHERE a > 10")
    engine.answer(query)
    report = check_oracle(engine, query)
    assert report.case_type == 1
    assert report.backend_tuples == 0
    assert report.local_tuples > 0
    stats = engine.stats()
    assert stats.full_hits == 1 and stats.misses == 1


def test_contained_query_full_hit():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 10"))
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 20 AND a < 30"))
    assert report.case_type == 1
    assert report.backend_tuples == 0


def test_overlap_coalesces_then_repeat_hits():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 10"))
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 0"))
    assert report.case_type == 2
    assert report.backend_tuples > 0
    # the widened union segment now answers both originals locally
    for text in ("SELECT b FROM R WHERE a > 0", "SELECT b FROM R WHERE a > 10"):
        rep = check_oracle(engine, q(text))
        assert rep.case_type == 1, text
        assert rep.backend_tuples == 0
    assert len(engine.cache.lookup_candidates("R")) == 1


def test_straddling_overlap_coalesces():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 5 AND a < 20"))
    check_oracle(engine, q("SELECT b FROM R WHERE a > 10 AND a < 30"))
    rep = check_oracle(engine, q("SELECT b FROM R WHERE a > 10 AND a < 30"))
    assert rep.case_type == 1 and rep.backend_tuples == 0
    rep = check_oracle(engine, q("SELECT b FROM R WHERE a > 5 AND a < 20"))
    assert rep.case_type == 1 and rep.backend_tuples == 0


def test_projection_extension_keeps_segments_split():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 20"))
    report = check_oracle(engine, q("SELECT t FROM R WHERE a > 0"))
    assert report.case_type == 4
    assert len(engine.cache.lookup_candidates("R")) == 2
    # probed segment was widened with the new projection attribute
    probed = engine.cache.segments[report.segment_used]
    assert "t" in probed.s_attrs
    # second encounter upgrades to a projection-covered case
    rep2 = check_oracle(engine, q("SELECT t FROM R WHERE a > 0"))
    assert rep2.case_type in (1, 2)
    rep3 = check_oracle(engine, q("SELECT t FROM R WHERE a > 0"))
    assert rep3.case_type == 1 and rep3.backend_tuples == 0


def test_attribute_extension_case3():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 10"))
    report = check_oracle(engine, q("SELECT t FROM R WHERE a > 20"))
    assert report.case_type == 3
    rep2 = check_oracle(engine, q("SELECT t FROM R WHERE a > 20"))
    assert rep2.case_type == 1 and rep2.backend_tuples == 0


def test_disjoint_miss_creates_second_segment():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a < 10"))
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 30"))
    assert report.case_type == 5
    assert len(engine.cache.lookup_candidates("R")) == 2


def test_empty_result_query_is_correct():
    engine = make_engine()
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 100"))
    assert report.case_type == 5
    assert report.answer == []
    assert report.inserted_segments == []


def test_filter_on_unstored_attribute_widens():
    engine = make_engine()
    engine.answer(q("SELECT b FROM R WHERE a > 10"))
    report = check_oracle(engine, q("SELECT b FROM R WHERE a > 20 AND t = 'w1'"))
    assert report.case_type == 1  # covered, but needed the t column fetch
    assert report.backend_tuples > 0
    rep2 = check_oracle(engine, q("SELECT b FROM R WHERE a > 20 AND t = 'w1'"))
    assert rep2.backend_tuples == 0


def test_unknown_class_raises():
    engine = make_engine()
    with pytest.raises(KeyError):
        engine.answer(Query("Nope", frozenset({"x"})))


# --- statistics ----------------------------------------------------------------

def test_stats_counters_consistent():
    engine = make_engine()
    texts = [
        "SELECT b FROM R WHERE a > 10",
        "SELECT b FROM R WHERE a > 10",
        "SELECT b FROM R WHERE a > 0",
        "SELECT t FROM R WHERE a < 5",
    ]
    for t in texts:
        engine.answer(q(t))
    s = engine.stats()
    assert s.queries == 4
    assert s.full_hits + s.partial_hits + s.misses == s.queries
    assert sum(s.case_counts.values()) == s.queries
    assert s.case_counts[1] >= 1 and s.case_counts[5] >= 1


def test_clock_strictly_increases():
    engine = make_engine()
    stamps = []
    for text in ("SELECT b FROM R WHERE a > 10", "SELECT b FROM R WHERE a > 0",
                 "SELECT t FROM R WHERE a < 3"):
        engine.answer(q(text))
        stamps.append(engine.clock.counter)
    assert stamps == sorted(set(stamps))


# --- assemble shapes -------------------------------------------------------------

K = frozenset({"k"})


def _lq(case):
    return None


def test_assemble_case1_local_only():
    out = RewriteOutcome(1)
    got = assemble(out, [{"k": 1, "b": 5}, {"k": 2, "b": 6}], None, None, None,
                   Query("R", frozenset({"b"})), K)
    assert answer_set(got) == answer_set([{"b": 5}, {"b": 6}])


def test_assemble_case1_semijoin_on_keys():
    out = RewriteOutcome(1)
    local = [{"k": 1, "b": 5}, {"k": 2, "b": 6}, {"k": 3, "b": 7}]
    aq_keys = [{"k": 2}, {"k": 3}]
    got = assemble(out, local, aq_keys, None, None, Query("R", frozenset({"b"})), K)
    assert answer_set(got) == answer_set([{"b": 6}, {"b": 7}])


def test_assemble_case2_union():
    out = RewriteOutcome(2)
    local = [{"k": 1, "b": 5}]
    rq1 = [{"k": 9, "b": 50}]
    got = assemble(out, local, None, rq1, None, Query("R", frozenset({"b"})), K)
    assert answer_set(got) == answer_set([{"b": 5}, {"b": 50}])


def test_assemble_case3_join_on_key():
    # local keys {1,2,3}, extension keys {2,3,4} -> joined keys {2,3}
    out = RewriteOutcome(3)
    local = [{"k": 1, "b": 5}, {"k": 2, "b": 6}, {"k": 3, "b": 7}]
    rq1 = [{"k": 2, "t": "x"}, {"k": 3, "t": "y"}, {"k": 4, "t": "z"}]
    got = assemble(out, local, None, rq1, None, Query("R", frozenset({"b", "t"})), K)
    assert answer_set(got) == answer_set([{"b": 6, "t": "x"}, {"b": 7, "t": "y"}])


def test_assemble_case4_join_plus_disjoint_union():
    out = RewriteOutcome(4)
    local = [{"k": 1, "b": 5}]
    rq1 = [{"k": 7, "b": 9, "t": "r"}]
    rq2 = [{"k": 1, "t": "x"}]
    got = assemble(out, local, None, rq1, rq2, Query("R", frozenset({"b", "t"})), K)
    assert answer_set(got) == answer_set([{"b": 5, "t": "x"}, {"b": 9, "t": "r"}])
    keys_join = {("b", 5)}
    keys_rq1 = {("b", 9)}
    assert not (keys_join & keys_rq1)  # the two parts never overlap


def test_assemble_case5_projection():
    out = RewriteOutcome(5)
    got = assemble(out, None, None, [{"k": 1, "b": 5}, {"k": 2, "b": 5}], None,
                   Query("R", frozenset({"b"})), K)
    assert got == [{"b": 5}]


# --- the master property: oracle equivalence -----------------------------------

def random_query(rng):
    attrs = rng.sample(["a", "b", "t", "k"], rng.randint(1, 3))
    disjuncts = []
    for _ in range(rng.randint(1, 3)):
        atoms = []
        for _ in range(rng.randint(1, 2)):
            pick = rng.random()
            if pick < 0.6:
                lo = rng.randint(-5, 45)
                op = rng.choice(("<", ">", "<=", ">=", "="))
                atoms.append(f"a {op} {lo}")
            elif pick < 0.8:
                atoms.append(f"b {rng.choice(('<', '>', '='))} {rng.randint(0, 60)}")
            else:
                atoms.append(f"t = 'w{rng.randint(0, 6)}'")
        disjuncts.append(" AND ".join(atoms))
    text = f"SELECT {', '.join(attrs)} FROM R WHERE {' OR '.join(disjuncts)}"
    return q(text)


def run_oracle_equivalence(engine, n_queries, seed):
    rng = random.Random(seed)
    cases = set()
    for i in range(n_queries):
        query = random_query(rng)
        report = engine.answer(query)
        want = engine.backend.execute(query)
        assert answer_set(report.answer) == answer_set(want), f"#{i}: {query}"
        cases.add(report.case_type)
        assert engine.cache.check_disjoint() == []
    return cases


def test_oracle_equivalence_randomized():
    engine = make_engine()
    cases = run_oracle_equivalence(engine, 250, seed=101)
    assert {1, 2, 5} <= cases


def test_oracle_equivalence_under_blowup_cap_one():
    engine = make_engine(blowup_cap=1)
    run_oracle_equivalence(engine, 120, seed=55)


def test_oracle_equivalence_under_heavy_eviction():
    engine = make_engine(pages=4, page_bytes=512)
    run_oracle_equivalence(engine, 120, seed=77)


def test_repeat_pass_is_all_full_hits():
    engine = make_engine()
    rng = random.Random(3)
    bands = []
    for _ in range(12):
        lo = rng.randint(-5, 35)
        hi = lo + rng.randint(1, 25)
        bands.append(f"SELECT b, t FROM R WHERE a > {lo} AND a < {hi}")
    bands = [t for t in bands if engine.backend.execute(q(t))]
    seen = set()
    workload = [t for t in bands if not (t in seen or seen.add(t))]
    for text in workload:
        engine.answer(q(text))
    before = engine.stats()
    for text in workload:
        report = check_oracle(engine, q(text))
        assert report.case_type == 1, text
        assert report.backend_tuples == 0
    after = engine.stats()
    assert after.full_hits - before.full_hits == len(workload)
    assert after.backend_tuples_total == before.backend_tuples_total

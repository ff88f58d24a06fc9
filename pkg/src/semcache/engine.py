"""Query lifecycle orchestration: probe the cache, pick a segment, rewrite,
execute the local and backend parts, assemble the answer, and feed results
back into the cache.

Execution strategy: when the chosen segment lacks attributes the query needs
(for its projection or its filter), the engine first *extends* the segment —
fetching the missing columns for every segment row by key and widening it in
place — and then serves the local part with the full filter. Partial overlaps
(cases 2 and 4) additionally fetch the remainder from the backend and fold
segment + remainder into one coalesced segment covering the union of both
predicates, absorbing any other segments the query region touches. The net
effect is that a repeated query is answered entirely from one segment, while
the cache stays pairwise disjoint.

Every answer is equal to direct backend execution; cache state only changes
how much of it the backend had to supply.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backend import Backend, Row, project_rows
from .predicate import (
    BlowupError,
    DNFPredicate,
    conjoin,
    disjoin,
    evaluate,
    is_satisfiable,
    predicate_attrs,
)
from .query import Query
from .rewrite import RewriteOutcome, format_trace, rewrite, select_best_segment
from .schema import Catalog
from .store import SegmentIndexEntry, SemanticCache

_CHECK_CAP = 1 << 20


@dataclass
class LogicalClock:
    counter: int = 0

    def tick(self) -> int:
        self.counter += 1
        return self.counter


@dataclass
class EngineStats:
    queries: int = 0
    full_hits: int = 0
    partial_hits: int = 0
    misses: int = 0
    backend_tuples_total: int = 0
    saved_tuples_estimate: int = 0
    case_counts: dict[int, int] = field(
        default_factory=lambda: {1: 0, 2: 0, 3: 0, 4: 0, 5: 0}
    )


@dataclass
class AnswerReport:
    answer: list[dict]
    case_type: int
    segment_used: int | None
    backend_tuples: int
    local_tuples: int
    inserted_segments: list[int]
    trace: str


def _key_of(row: Row, key_attrs: tuple[str, ...]) -> tuple:
    return tuple(row[a] for a in key_attrs)


def assemble(
    outcome: RewriteOutcome,
    local: list[Row],
    aq_keys: list[Row] | None,
    rq1_res: list[Row] | None,
    rq2_res: list[Row] | None,
    q: Query,
    key: frozenset[str],
) -> list[dict]:
    """Combine plan part results into the final answer, per case shape.

    Local rows are semijoined against amending-query keys when present;
    attribute-extending rest results join on the primary key; remainder
    results union in. The result is deduplicated (set semantics).
    """
    key_order = tuple(sorted(key))
    case = outcome.case_type
    if case == 5:
        return project_rows(rq1_res or [], q.q_attrs)
    if case in (1, 2):
        rows = local
        if aq_keys is not None:
            wanted = {_key_of(r, key_order) for r in aq_keys}
            rows = [r for r in rows if _key_of(r, key_order) in wanted]
        combined = list(rows)
        if case == 2:
            combined.extend(rq1_res or [])
        return project_rows(combined, q.q_attrs)
    # cases 3 and 4: join the segment part with the attribute-extension fetch
    extension = rq2_res if case == 4 else rq1_res
    by_key = {_key_of(r, key_order): r for r in (extension or [])}
    joined = []
    for r in local:
        ext = by_key.get(_key_of(r, key_order))
        if ext is not None:
            joined.append({**r, **ext})
    if case == 4:
        joined.extend(rq1_res or [])
    return project_rows(joined, q.q_attrs)


class Engine:
    """Answers queries through the cache, falling back to the backend."""

    def __init__(self, catalog: Catalog, backend: Backend, cache: SemanticCache):
        self.catalog = catalog
        self.backend = backend
        self.cache = cache
        self.clock = LogicalClock(cache.max_timestamp())
        self._stats = EngineStats()
        self._backend_tuples_this_query = 0

    # --- backend access with per-query accounting ---------------------------

    def _fetch(self, class_name: str, attrs: frozenset[str], pred: DNFPredicate) -> list[dict]:
        rows = self.backend.fetch(class_name, attrs, pred)
        self._backend_tuples_this_query += len(rows)
        return rows

    # --- cache feedback ------------------------------------------------------

    def _overlapping_segments(
        self, class_name: str, pred: DNFPredicate, exclude: frozenset[int]
    ) -> list[SegmentIndexEntry]:
        found = []
        for entry in self.cache.lookup_candidates(class_name):
            if entry.segment_id in exclude:
                continue
            try:
                overlap = conjoin(entry.s_pred, pred, _CHECK_CAP)
            except BlowupError:
                found.append(entry)
                continue
            if is_satisfiable(overlap):
                found.append(entry)
        return found

    def _rows_with_attrs(
        self,
        class_name: str,
        rows: list[Row],
        have: frozenset[str],
        want: frozenset[str],
        pred: DNFPredicate,
        key_order: tuple[str, ...],
    ) -> list[dict] | None:
        """Extend rows (complete for pred over ``have``) to ``want`` attrs,
        key-fetching the missing columns from the backend."""
        missing = want - have
        if not missing:
            return [dict(r) for r in rows]
        gap = self._fetch(class_name, frozenset(key_order) | missing, pred)
        by_key = {_key_of(r, key_order): r for r in gap}
        out = []
        for r in rows:
            ext = by_key.get(_key_of(r, key_order))
            if ext is None:
                return None  # fetched region does not cover the rows; bail out
            out.append({**r, **ext})
        return out

    def _integrate(
        self,
        class_name: str,
        pred: DNFPredicate,
        attrs: frozenset[str],
        rows: list[Row],
        now: int,
    ) -> list[int]:
        """Insert a complete query result as a segment, absorbing every
        same-class segment whose predicate overlaps it.

        Absorbed segments contribute their predicate (disjoined in), their
        attributes (union), and their content; columns one side lacks are
        key-fetched from the backend, so the merged segment stays uniform.
        Best effort: bailing out leaves the cache unchanged and correct.
        """
        if not is_satisfiable(pred):
            return []
        key_order = tuple(sorted(self.catalog.schema_for(class_name).primary_key))
        absorbed = self._overlapping_segments(class_name, pred, frozenset())
        final_pred = pred
        final_attrs = frozenset(attrs)
        try:
            for entry in absorbed:
                final_pred = disjoin(final_pred, entry.s_pred, self.cache.config.blowup_cap)
                final_attrs |= entry.s_attrs
        except BlowupError:
            return []  # cannot represent the union; leave everything as is

        sources: list[tuple[DNFPredicate, frozenset[str], list[Row]]] = [(pred, attrs, rows)]
        for entry in absorbed:
            sources.append(
                (entry.s_pred, entry.s_attrs, self.cache.scan_segment(entry.segment_id))
            )
        merged: dict[tuple, dict] = {}
        for src_pred, src_attrs, src_rows in sources:
            extended = self._rows_with_attrs(
                class_name, src_rows, src_attrs, final_attrs, src_pred, key_order
            )
            if extended is None:
                return []
            for r in extended:
                merged.setdefault(_key_of(r, key_order), r)
        if not merged:
            return []
        content = list(merged.values())
        if self.cache.estimate_pages(final_attrs, content) is None:
            return []  # would never fit; keep the absorbed segments instead
        for entry in absorbed:
            self.cache.deallocate_segment(entry.segment_id)
        seg_id = self.cache.insert_segment(class_name, final_attrs, final_pred, content, now)
        return [seg_id] if seg_id is not None else []

    def _widen(self, entry: SegmentIndexEntry, needed: frozenset[str]) -> bool:
        """Materialize missing attributes for every segment row (by key)."""
        key_order = tuple(sorted(self.catalog.schema_for(entry.s_class).primary_key))
        stored = self.cache.scan_segment(entry.segment_id)
        extended = self._rows_with_attrs(
            entry.s_class, stored, entry.s_attrs, entry.s_attrs | needed,
            entry.s_pred, key_order,
        )
        if extended is None or len(extended) != len(stored):
            return False
        return self.cache.replace_segment(
            entry.segment_id, entry.s_attrs | needed, entry.s_pred, extended
        )

    # --- the main path --------------------------------------------------------

    def answer(self, q: Query) -> AnswerReport:
        """Answer q; the result always equals direct backend execution."""
        schema = self.catalog.schema_for(q.q_class)
        key = schema.primary_key
        now = self.clock.tick()
        self._backend_tuples_this_query = 0
        q_pa = predicate_attrs(q.q_pred)
        aug_attrs = q.q_attrs | key | q_pa

        candidates = self.cache.lookup_candidates(q.q_class)
        cap = self.cache.config.blowup_cap
        seg = select_best_segment(q, candidates, self.catalog, cap)
        outcome = rewrite(q, seg, self.catalog, cap) if seg is not None else RewriteOutcome(5, rq1=q)
        case = outcome.case_type

        inserted: list[int] = []
        local_rows: list[dict] = []
        seg_used: int | None = None
        degraded = False

        if case != 5:
            needed = (q.q_attrs | q_pa) - seg.s_attrs
            if needed and not self._widen(seg, needed):
                case = 5  # extension did not fit; serve straight from the backend
                degraded = True
            else:
                seg_used = seg.segment_id
                local_rows = [
                    t for t in self.cache.scan_segment(seg.segment_id)
                    if evaluate(q.q_pred, t)
                ]
                self.cache.touch(seg.segment_id, now)
                if case in (1, 3):
                    # Fully covered: post-extension the whole filter runs
                    # locally, nothing to insert.
                    answer = assemble(
                        RewriteOutcome(1, lq=outcome.lq), local_rows, None, None, None, q, key
                    )
                else:
                    rem_pred = outcome.rq1.q_pred
                    rem_rows = self._fetch(q.q_class, seg.s_attrs, rem_pred)
                    answer = assemble(
                        RewriteOutcome(2, lq=outcome.lq, rq1=outcome.rq1),
                        local_rows, None, rem_rows, None, q, key,
                    )
                    if case == 2:
                        # Coalesce: segment + remainder cover Q_P and S_P
                        # jointly; fold them (and anything else the query
                        # region touches) into one segment.
                        inserted = self._integrate(
                            q.q_class, q.q_pred, seg.s_attrs, local_rows + rem_rows, now
                        )
                    else:
                        # Projection-extending overlap: keep the probed
                        # segment, store the remainder on its own.
                        inserted = self._integrate(
                            q.q_class, rem_pred, seg.s_attrs, rem_rows, now
                        )

        if case == 5:
            rows = self._fetch(q.q_class, aug_attrs, q.q_pred)
            answer = assemble(RewriteOutcome(5, rq1=q), None, None, rows, None, q, key)
            local_rows = []
            seg_used = None
            if rows and not degraded:
                inserted = self._integrate(q.q_class, q.q_pred, aug_attrs, rows, now)

        self._stats.queries += 1
        self._stats.case_counts[case] += 1
        if case == 1:
            self._stats.full_hits += 1
        elif case == 5:
            self._stats.misses += 1
        else:
            self._stats.partial_hits += 1
        self._stats.backend_tuples_total += self._backend_tuples_this_query
        self._stats.saved_tuples_estimate += len(answer) - self._backend_tuples_this_query

        if case == 5:
            trace = format_trace(RewriteOutcome(5, rq1=q), None)
        else:
            trace = format_trace(outcome, seg.name)
        return AnswerReport(
            answer=answer,
            case_type=case,
            segment_used=seg_used,
            backend_tuples=self._backend_tuples_this_query,
            local_tuples=len(local_rows),
            inserted_segments=inserted,
            trace=trace,
        )

    def stats(self) -> EngineStats:
        s = self._stats
        return EngineStats(
            queries=s.queries,
            full_hits=s.full_hits,
            partial_hits=s.partial_hits,
            misses=s.misses,
            backend_tuples_total=s.backend_tuples_total,
            saved_tuples_estimate=s.saved_tuples_estimate,
            case_counts=dict(s.case_counts),
        )

"""Answerability classification and the five-case query rewriting algorithm.

Given a query and a key-contained cached segment over the same class, the
rewriter splits the work into a local query against the segment's content,
an optional amending query (backend key fetch used to finish filtering when
the segment lacks predicate attributes), and up to two rest queries for the
backend. The case number records the relationship found:

    1  full hit      projection and predicate both covered
    2  partial hit   projection covered, predicate overlaps
    3  partial hit   predicate covered, projection needs more attributes
    4  partial hit   both only overlap
    5  miss          disjoint predicates (or the rewrite was abandoned)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .predicate import (
    TRUE,
    BlowupError,
    DNFPredicate,
    conjoin,
    implies,
    is_satisfiable,
    negate,
    predicate_attrs,
    restrict_to_attrs,
)
from .query import Query, format_predicate, format_query
from .schema import Catalog, attribute_closure
from .store import SegmentIndexEntry

_CHECK_CAP = 1 << 20  # internal cap for pure satisfiability checks


class Answerability(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


@dataclass(frozen=True)
class AnswerabilityVerdict:
    verdict: Answerability
    requires_extension: bool


@dataclass(frozen=True)
class LocalQueryDescriptor:
    """The part of a query evaluable directly against a segment."""

    segment: int
    project_attrs: frozenset[str]
    local_filter: DNFPredicate
    needs_semijoin_on_aq: bool


@dataclass(frozen=True)
class RewriteOutcome:
    case_type: int
    lq: LocalQueryDescriptor | None = None
    aq: Query | None = None
    rq1: Query | None = None
    rq2: Query | None = None


def _overlap_satisfiable(p: DNFPredicate, q: DNFPredicate) -> bool:
    try:
        return is_satisfiable(conjoin(p, q, _CHECK_CAP))
    except BlowupError:
        return True  # cannot disprove the overlap, assume it exists


def answerability(
    s: SegmentIndexEntry, q: Query, catalog: Catalog, use_fds: bool = True
) -> AnswerabilityVerdict:
    """Classify whether q can be answered from s (fully, partially, or not).

    A query whose predicate reads attributes the segment does not store is
    only answerable through attribute extension: the missing attributes must
    be functionally determined by stored ones (with ``use_fds=False`` that
    escape hatch is closed and the verdict drops to NONE).
    """
    if s.s_class != q.q_class or not _overlap_satisfiable(q.q_pred, s.s_pred):
        return AnswerabilityVerdict(Answerability.NONE, False)
    q_pa = predicate_attrs(q.q_pred)
    requires_extension = False
    if not q_pa <= s.s_attrs:
        if use_fds:
            reachable = attribute_closure(catalog, s.s_class, s.s_attrs)
        else:
            reachable = s.s_attrs
        if not q_pa <= reachable:
            return AnswerabilityVerdict(Answerability.NONE, False)
        requires_extension = True
    if q.q_attrs <= s.s_attrs and implies(q.q_pred, s.s_pred):
        return AnswerabilityVerdict(Answerability.FULL, requires_extension)
    return AnswerabilityVerdict(Answerability.PARTIAL, requires_extension)


def rewrite(
    q: Query, s: SegmentIndexEntry, catalog: Catalog, max_disjuncts: int = 64
) -> RewriteOutcome:
    """Rewrite q against key-contained segment s into local/amending/rest parts.

    A disjunct blowup while building the remainder predicates abandons the
    segment entirely (case 5, rest query = q): slower, never wrong.
    """
    if s.s_class != q.q_class:
        return RewriteOutcome(5, rq1=q)
    key = catalog.schema_for(q.q_class).primary_key
    a1 = (q.q_attrs & s.s_attrs) | key
    a2 = (q.q_attrs - s.s_attrs) | key
    q_pa = predicate_attrs(q.q_pred)
    # Disjoint predicates are case 5 outright; this also keeps a query whose
    # predicate normalized to FALSE out of the "implied by anything" branch.
    if not _overlap_satisfiable(q.q_pred, s.s_pred):
        return RewriteOutcome(5, rq1=q)
    covered = implies(q.q_pred, s.s_pred)

    def amending(amend_pred: DNFPredicate) -> Query | None:
        # Redundant when the filter is fully evaluable locally, or when every
        # stored tuple already satisfies the query predicate (an exact repeat
        # must not pay a backend round-trip).
        if q_pa <= s.s_attrs or implies(s.s_pred, q.q_pred):
            return None
        return Query(q.q_class, frozenset(key), amend_pred)

    try:
        if q.q_attrs <= s.s_attrs:
            local = LocalQueryDescriptor(
                segment=s.segment_id,
                project_attrs=q.q_attrs | key,
                local_filter=restrict_to_attrs(q.q_pred, s.s_attrs),
                needs_semijoin_on_aq=False,
            )
            if covered:  # case 1
                aq = amending(q.q_pred)
                if aq is not None:
                    local = LocalQueryDescriptor(
                        local.segment, local.project_attrs, local.local_filter, True
                    )
                return RewriteOutcome(1, lq=local, aq=aq)
            # case 2
            aq = amending(conjoin(q.q_pred, s.s_pred, max_disjuncts))
            if aq is not None:
                local = LocalQueryDescriptor(
                    local.segment, local.project_attrs, local.local_filter, True
                )
            rq1 = Query(
                q.q_class,
                q.q_attrs | key,
                conjoin(q.q_pred, negate(s.s_pred, max_disjuncts), max_disjuncts),
            )
            return RewriteOutcome(2, lq=local, aq=aq, rq1=rq1)
        local = LocalQueryDescriptor(
            segment=s.segment_id,
            project_attrs=a1,
            local_filter=TRUE,
            needs_semijoin_on_aq=False,
        )
        if covered:  # case 3
            rq1 = Query(q.q_class, a2, q.q_pred)
            return RewriteOutcome(3, lq=local, rq1=rq1)
        # case 4
        rq1 = Query(
            q.q_class,
            q.q_attrs | key,
            conjoin(q.q_pred, negate(s.s_pred, max_disjuncts), max_disjuncts),
        )
        rq2 = Query(q.q_class, a2, conjoin(q.q_pred, s.s_pred, max_disjuncts))
        return RewriteOutcome(4, lq=local, rq1=rq1, rq2=rq2)
    except BlowupError:
        return RewriteOutcome(5, rq1=q)


def select_best_segment(
    q: Query,
    candidates: list[SegmentIndexEntry],
    catalog: Catalog,
    max_disjuncts: int = 64,
) -> SegmentIndexEntry | None:
    """Pick the candidate with the lowest rewrite case; ties prefer more
    shared projection attributes, then the most recent timestamp.

    Candidates arrive most-recent first, so a stable min does the last
    tie-break for free. Returns None when every candidate is case 5.
    """
    best: SegmentIndexEntry | None = None
    best_rank: tuple[int, int] | None = None
    for entry in candidates:
        outcome = rewrite(q, entry, catalog, max_disjuncts)
        rank = (outcome.case_type, -len(q.q_attrs & entry.s_attrs))
        if outcome.case_type < 5 and (best_rank is None or rank < best_rank):
            best, best_rank = entry, rank
    return best


def format_trace(outcome: RewriteOutcome, segment_name: str | None) -> str:
    """One-line rewrite trace."""
    if outcome.lq is None:
        lq = "-"
    else:
        attrs = ",".join(sorted(outcome.lq.project_attrs))
        lq = f"{attrs}/{format_predicate(outcome.lq.local_filter)}"
    aq = format_predicate(outcome.aq.q_pred) if outcome.aq is not None else "-"
    rq1 = format_query(outcome.rq1) if outcome.rq1 is not None else "-"
    rq2 = format_query(outcome.rq2) if outcome.rq2 is not None else "-"
    return (
        f"CASE={outcome.case_type} SEG={segment_name or '-'} "
        f"LQ={lq} AQ={aq} RQ1={rq1} RQ2={rq2}"
    )

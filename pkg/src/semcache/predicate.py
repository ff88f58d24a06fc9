"""Selection-condition algebra: compare predicates, conjuncts in interval
normal form, and DNF formulas with the satisfiability / implication /
negation operations the cache reasoning is built on.

Every value belongs to one of four totally ordered kinds (integer, decimal,
text, date); comparisons never cross kinds. Integer and date domains are
discrete, so their interval bounds are canonicalized to closed form
(``a > 5`` becomes ``a >= 6``) — that makes interval containment agree
exactly with point-by-point enumeration over those domains. Decimal and
text are treated as dense orders.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping, Union

from .schema import Catalog, UnknownAttributeError, ValueKind

Value = Union[int, Decimal, str, date]

OPERATORS = ("=", "<", ">", ">=", "<=")

DEFAULT_BLOWUP_CAP = 64

_DISCRETE = (ValueKind.INTEGER, ValueKind.DATE)


class PredicateError(Exception):
    pass


class KindMismatchError(PredicateError):
    pass


class BlowupError(PredicateError):
    """A DNF operation would exceed the configured disjunct cap."""


class MissingAttributeError(PredicateError):
    pass


def kind_of_value(v: Value) -> ValueKind:
    if isinstance(v, bool) or isinstance(v, datetime):
        raise KindMismatchError(f"unsupported value type {type(v).__name__}")
    if isinstance(v, int):
        return ValueKind.INTEGER
    if isinstance(v, Decimal):
        return ValueKind.DECIMAL
    if isinstance(v, str):
        return ValueKind.TEXT
    if isinstance(v, date):
        return ValueKind.DATE
    raise KindMismatchError(f"unsupported value type {type(v).__name__}")


def parse_literal(text: str, kind: ValueKind) -> Value:
    """Parse a literal's text into a value of the given kind."""
    try:
        if kind is ValueKind.INTEGER:
            return int(text, 10)
        if kind is ValueKind.DECIMAL:
            return Decimal(text)
        if kind is ValueKind.DATE:
            return date.fromisoformat(text)
        return text
    except (ValueError, InvalidOperation) as exc:
        raise KindMismatchError(f"cannot read {text!r} as {kind.value}") from exc


def format_literal(v: Value) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, date):
        return f"'{v.isoformat()}'"
    return str(v)


@dataclass(frozen=True)
class ComparePredicate:
    """Atomic condition ``attribute op constant``."""

    attribute: str
    op: str
    constant: Value

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise PredicateError(f"unknown operator {self.op!r}")
        kind_of_value(self.constant)  # rejects unsupported constant types

    def __str__(self) -> str:
        return f"{self.attribute} {self.op} {format_literal(self.constant)}"


@dataclass(frozen=True)
class Interval:
    """One attribute's allowed range; None bounds mean unbounded."""

    lower: Value | None
    lower_closed: bool
    upper: Value | None
    upper_closed: bool

    @property
    def kind(self) -> ValueKind:
        bound = self.lower if self.lower is not None else self.upper
        return kind_of_value(bound)

    def contains_value(self, v: Value) -> bool:
        if self.lower is not None:
            if v < self.lower or (v == self.lower and not self.lower_closed):
                return False
        if self.upper is not None:
            if v > self.upper or (v == self.upper and not self.upper_closed):
                return False
        return True

    def contains(self, inner: "Interval") -> bool:
        if self.lower is not None:
            if inner.lower is None:
                return False
            if inner.lower < self.lower:
                return False
            if inner.lower == self.lower and inner.lower_closed and not self.lower_closed:
                return False
        if self.upper is not None:
            if inner.upper is None:
                return False
            if inner.upper > self.upper:
                return False
            if inner.upper == self.upper and inner.upper_closed and not self.upper_closed:
                return False
        return True


def _step(v: Value, delta: int) -> Value:
    if isinstance(v, date):
        return v + timedelta(days=delta)
    return v + delta


def make_interval(
    lower: Value | None,
    lower_closed: bool,
    upper: Value | None,
    upper_closed: bool,
) -> Interval | None:
    """Canonical interval, or None when it contains no point.

    Discrete kinds get open finite bounds tightened to closed ones, so an
    integer interval like ``(5, 7)`` becomes ``[6, 6]``.
    """
    bound = lower if lower is not None else upper
    if bound is not None and kind_of_value(bound) in _DISCRETE:
        if lower is not None and not lower_closed:
            lower, lower_closed = _step(lower, 1), True
        if upper is not None and not upper_closed:
            upper, upper_closed = _step(upper, -1), True
    if lower is not None and upper is not None:
        if lower > upper:
            return None
        if lower == upper and not (lower_closed and upper_closed):
            return None
    return Interval(lower, lower_closed, upper, upper_closed)


def _atom_interval(atom: ComparePredicate) -> Interval | None:
    c = atom.constant
    if atom.op == "=":
        return make_interval(c, True, c, True)
    if atom.op == "<":
        return make_interval(None, False, c, False)
    if atom.op == "<=":
        return make_interval(None, False, c, True)
    if atom.op == ">":
        return make_interval(c, False, None, False)
    return make_interval(c, True, None, False)  # >=


def _intersect(a: Interval, b: Interval) -> Interval | None:
    if a.lower is None:
        lower, lower_closed = b.lower, b.lower_closed
    elif b.lower is None or a.lower > b.lower:
        lower, lower_closed = a.lower, a.lower_closed
    elif b.lower > a.lower:
        lower, lower_closed = b.lower, b.lower_closed
    else:
        lower, lower_closed = a.lower, a.lower_closed and b.lower_closed
    if a.upper is None:
        upper, upper_closed = b.upper, b.upper_closed
    elif b.upper is None or a.upper < b.upper:
        upper, upper_closed = a.upper, a.upper_closed
    elif b.upper < a.upper:
        upper, upper_closed = b.upper, b.upper_closed
    else:
        upper, upper_closed = a.upper, a.upper_closed and b.upper_closed
    return make_interval(lower, lower_closed, upper, upper_closed)


def _atoms_from_interval(attribute: str, iv: Interval) -> list[ComparePredicate]:
    if iv.lower is not None and iv.lower == iv.upper:
        return [ComparePredicate(attribute, "=", iv.lower)]
    atoms = []
    if iv.lower is not None:
        atoms.append(ComparePredicate(attribute, ">=" if iv.lower_closed else ">", iv.lower))
    if iv.upper is not None:
        atoms.append(ComparePredicate(attribute, "<=" if iv.upper_closed else "<", iv.upper))
    return atoms


class Conjunct:
    """Non-empty conjunction of compare predicates.

    The normal form is a map from attribute to interval; a conjunct whose
    intervals cannot all be met at once is *empty* (unsatisfiable). Equality
    and hashing use the normal form, so ``a > 5 AND a > 3`` equals ``a > 5``.
    """

    __slots__ = ("atoms", "_intervals")

    def __init__(self, atoms: Iterable[ComparePredicate]):
        self.atoms: tuple[ComparePredicate, ...] = tuple(atoms)
        if not self.atoms:
            raise PredicateError("a conjunct needs at least one compare predicate")
        intervals: dict[str, Interval] = {}
        empty = False
        for atom in self.atoms:
            iv = _atom_interval(atom)
            prev = intervals.get(atom.attribute)
            if prev is not None:
                if prev.kind is not kind_of_value(atom.constant):
                    raise KindMismatchError(
                        f"mixed value kinds for attribute {atom.attribute!r}"
                    )
                iv = _intersect(prev, iv) if iv is not None else None
            if iv is None:
                empty = True
                break
            intervals[atom.attribute] = iv
        self._intervals: dict[str, Interval] | None = None if empty else intervals

    @property
    def is_empty(self) -> bool:
        return self._intervals is None

    @property
    def intervals(self) -> Mapping[str, Interval]:
        if self._intervals is None:
            raise PredicateError("empty conjunct has no interval map")
        return self._intervals

    def attributes(self) -> frozenset[str]:
        return frozenset(a.attribute for a in self.atoms)

    def canonical_atoms(self) -> tuple[ComparePredicate, ...]:
        out: list[ComparePredicate] = []
        for attr in sorted(self.intervals):
            out.extend(_atoms_from_interval(attr, self.intervals[attr]))
        return tuple(out)

    def contains(self, other: "Conjunct") -> bool:
        """True when every point of ``other`` satisfies this conjunct."""
        for attr, iv in self.intervals.items():
            inner = other.intervals.get(attr)
            if inner is None or not iv.contains(inner):
                return False
        return True

    def evaluate(self, row: Mapping[str, Value]) -> bool:
        for attr, iv in self.intervals.items():
            try:
                v = row[attr]
            except KeyError:
                raise MissingAttributeError(f"tuple lacks attribute {attr!r}") from None
            if not iv.contains_value(v):
                return False
        return True

    def __eq__(self, other) -> bool:
        return isinstance(other, Conjunct) and self._intervals == other._intervals

    def __hash__(self) -> int:
        if self._intervals is None:
            return hash(None)
        return hash(frozenset(self._intervals.items()))

    def __str__(self) -> str:
        return " AND ".join(str(a) for a in self.atoms)

    def __repr__(self) -> str:
        return f"Conjunct({self})"


class DNFPredicate:
    """Disjunction of conjuncts, with explicit TRUE and FALSE.

    Unsatisfiable disjuncts are dropped and subsumed disjuncts pruned at
    construction; a predicate with no surviving disjuncts is FALSE unless
    built through :meth:`true`.
    """

    __slots__ = ("disjuncts", "_tautology")

    def __init__(self, disjuncts: Iterable[Conjunct] = (), tautology: bool = False):
        kept: list[Conjunct] = []
        for c in disjuncts:
            if c.is_empty:
                continue
            if any(k.contains(c) for k in kept):
                continue
            kept = [k for k in kept if not c.contains(k)]
            kept.append(c)
        self.disjuncts: tuple[Conjunct, ...] = tuple(kept)
        self._tautology = bool(tautology) and not self.disjuncts

    @classmethod
    def true(cls) -> "DNFPredicate":
        return cls((), tautology=True)

    @classmethod
    def false(cls) -> "DNFPredicate":
        return cls(())

    @property
    def is_true(self) -> bool:
        return self._tautology

    @property
    def is_false(self) -> bool:
        return not self._tautology and not self.disjuncts

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DNFPredicate)
            and self._tautology == other._tautology
            and frozenset(self.disjuncts) == frozenset(other.disjuncts)
        )

    def __hash__(self) -> int:
        return hash((self._tautology, frozenset(self.disjuncts)))

    def __str__(self) -> str:
        if self.is_true:
            return "TRUE"
        if self.is_false:
            return "FALSE"
        return " OR ".join(str(c) for c in self.disjuncts)

    def __repr__(self) -> str:
        return f"DNFPredicate({self})"


TRUE = DNFPredicate.true()
FALSE = DNFPredicate.false()


def normalize(
    conjunct: Conjunct, catalog: Catalog, class_name: str
) -> Mapping[str, Interval] | None:
    """Per-attribute interval map of a conjunct, or None when unsatisfiable.

    Validates every atom against the catalog: the attribute must belong to
    the class and the constant's kind must match the declared kind.
    """
    schema = catalog.schema_for(class_name)
    for atom in conjunct.atoms:
        if not schema.has_attribute(atom.attribute):
            raise UnknownAttributeError(
                f"{class_name!r} has no attribute {atom.attribute!r}"
            )
        declared = schema.kind_of(atom.attribute)
        actual = kind_of_value(atom.constant)
        if declared is not actual:
            raise KindMismatchError(
                f"attribute {atom.attribute!r} is {declared.value}, "
                f"constant {atom.constant!r} is {actual.value}"
            )
    return None if conjunct.is_empty else conjunct.intervals


def is_satisfiable(p: DNFPredicate) -> bool:
    """Exact for this predicate language: some disjunct has a consistent
    interval map (per-attribute ranges are independent)."""
    return p.is_true or bool(p.disjuncts)


def predicate_attrs(p: DNFPredicate) -> frozenset[str]:
    out: set[str] = set()
    for c in p.disjuncts:
        out |= c.attributes()
    return frozenset(out)


def _merge_conjuncts(a: Conjunct, b: Conjunct) -> Conjunct:
    # The Conjunct constructor intersects per attribute and flags emptiness.
    return Conjunct(a.canonical_atoms() + b.canonical_atoms())


def conjoin(p: DNFPredicate, q: DNFPredicate, max_disjuncts: int = DEFAULT_BLOWUP_CAP) -> DNFPredicate:
    """Logical AND of two DNF predicates, redistributed into DNF."""
    if p.is_false or q.is_false:
        return FALSE
    if p.is_true:
        return q
    if q.is_true:
        return p
    out = DNFPredicate(_merge_conjuncts(a, b) for a in p.disjuncts for b in q.disjuncts)
    if len(out.disjuncts) > max_disjuncts:
        raise BlowupError(f"conjunction needs {len(out.disjuncts)} disjuncts (cap {max_disjuncts})")
    return out


def disjoin(p: DNFPredicate, q: DNFPredicate, max_disjuncts: int = DEFAULT_BLOWUP_CAP) -> DNFPredicate:
    """Logical OR of two DNF predicates."""
    if p.is_true or q.is_true:
        return TRUE
    out = DNFPredicate(p.disjuncts + q.disjuncts)
    if len(out.disjuncts) > max_disjuncts:
        raise BlowupError(f"disjunction needs {len(out.disjuncts)} disjuncts (cap {max_disjuncts})")
    return out


def _complement_pieces(attr: str, iv: Interval) -> list[Conjunct]:
    pieces = []
    if iv.lower is not None:
        op = "<" if iv.lower_closed else "<="
        pieces.append(Conjunct([ComparePredicate(attr, op, iv.lower)]))
    if iv.upper is not None:
        op = ">" if iv.upper_closed else ">="
        pieces.append(Conjunct([ComparePredicate(attr, op, iv.upper)]))
    return pieces


def negate(p: DNFPredicate, max_disjuncts: int = DEFAULT_BLOWUP_CAP) -> DNFPredicate:
    """Logical NOT, re-expressed in DNF.

    Atom negations flip the operator (``=`` splits into two ranges); the
    conjunction over all negated disjuncts is then redistributed, bailing
    out with BlowupError past the disjunct cap.
    """
    if p.is_true:
        return FALSE
    if p.is_false:
        return TRUE
    result = TRUE
    for c in p.disjuncts:
        pieces: list[Conjunct] = []
        for attr in sorted(c.intervals):
            pieces.extend(_complement_pieces(attr, c.intervals[attr]))
        result = conjoin(result, DNFPredicate(pieces), max_disjuncts)
        if result.is_false:
            return FALSE
    return result


def implies(p: DNFPredicate, q: DNFPredicate) -> bool:
    """Sound implication check: True only when p => q holds.

    Every disjunct of p must be interval-contained in a single disjunct of
    q, so containments that need several q-disjuncts jointly come back
    False (a cache miss, never a wrong answer). Complete when q is one
    conjunct.
    """
    if p.is_false or q.is_true:
        return True
    if p.is_true or q.is_false:
        return False
    return all(any(qc.contains(pc) for qc in q.disjuncts) for pc in p.disjuncts)


def restrict_to_attrs(p: DNFPredicate, attrs: Iterable[str]) -> DNFPredicate:
    """Weaken p by dropping atoms over attributes outside ``attrs``.

    A disjunct losing all its atoms turns the whole result into TRUE.
    """
    if p.is_true or p.is_false:
        return p
    keep = frozenset(attrs)
    out: list[Conjunct] = []
    for c in p.disjuncts:
        atoms = [a for a in c.canonical_atoms() if a.attribute in keep]
        if not atoms:
            return TRUE
        out.append(Conjunct(atoms))
    return DNFPredicate(out)


def evaluate(p: DNFPredicate, row: Mapping[str, Value]) -> bool:
    """Standard DNF truth evaluation over an attribute->value map."""
    if p.is_true:
        return True
    return any(c.evaluate(row) for c in p.disjuncts)

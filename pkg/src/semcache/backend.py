"""In-memory relational backend loaded from CSV.

The backend is the community's authoritative data source: it executes
select-project queries directly and therefore doubles as the correctness
oracle for every cache-path answer. Read-only after load.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping

from .predicate import DNFPredicate, Value, evaluate, kind_of_value, parse_literal
from .query import Query
from .schema import Catalog, ClassSchema, UnknownClassError

Row = Mapping[str, Value]


class BackendError(Exception):
    pass


def row_key(row: Row) -> tuple:
    return tuple(sorted(row.items(), key=lambda kv: kv[0]))


def project_rows(rows: Iterable[Row], attrs: Iterable[str]) -> list[dict]:
    """Project rows onto ``attrs`` with set semantics (duplicates collapse)."""
    keep = sorted(attrs)
    seen: set[tuple] = set()
    out: list[dict] = []
    for row in rows:
        projected = {a: row[a] for a in keep}
        key = tuple(projected[a] for a in keep)
        if key not in seen:
            seen.add(key)
            out.append(projected)
    return out


@dataclass(frozen=True)
class Relation:
    schema: ClassSchema
    rows: tuple[Row, ...]


@dataclass
class BackendStats:
    queries_served: int = 0
    tuples_scanned: int = 0
    tuples_returned: int = 0


def load_csv(class_name: str, csv_text: str, catalog: Catalog) -> Relation:
    """Build a Relation from CSV text (header row mandatory).

    The header must name a permutation of the class's attributes; cells must
    parse as the declared kinds; primary-key values must be unique.
    """
    schema = catalog.schema_for(class_name)
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise BackendError(f"{class_name}: CSV is empty, header row required") from None
    if sorted(header) != sorted(schema.attribute_names) or len(set(header)) != len(header):
        raise BackendError(
            f"{class_name}: CSV header {header} is not a permutation of the "
            f"class attributes {list(schema.attribute_names)}"
        )
    kinds = [schema.kind_of(a) for a in header]
    key_attrs = sorted(schema.primary_key)
    seen_keys: set[tuple] = set()
    rows: list[Row] = []
    for row_no, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise BackendError(
                f"{class_name}: row {row_no} has {len(cells)} cells, expected {len(header)}"
            )
        row: dict[str, Value] = {}
        for attr, kind, cell in zip(header, kinds, cells):
            try:
                row[attr] = parse_literal(cell, kind)
            except Exception as exc:
                raise BackendError(
                    f"{class_name}: row {row_no}, column {attr!r}: {exc}"
                ) from None
        key = tuple(row[a] for a in key_attrs)
        if key in seen_keys:
            raise BackendError(f"{class_name}: duplicate primary key {key} at row {row_no}")
        seen_keys.add(key)
        rows.append(row)
    return Relation(schema, tuple(rows))


class Backend:
    """Holds one Relation per class and executes select-project queries."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.relations: dict[str, Relation] = {}
        self.stats = BackendStats()
        self._lock = threading.Lock()

    def load_csv(self, class_name: str, csv_text: str) -> Relation:
        relation = load_csv(class_name, csv_text, self.catalog)
        self.relations[class_name] = relation
        return relation

    def relation_for(self, class_name: str) -> Relation:
        try:
            return self.relations[class_name]
        except KeyError:
            raise UnknownClassError(f"no data loaded for class {class_name!r}") from None

    def fetch(self, class_name: str, attrs: Iterable[str], pred: DNFPredicate) -> list[dict]:
        """π_attrs σ_pred over the class's relation, set semantics."""
        relation = self.relation_for(class_name)
        matched = [row for row in relation.rows if evaluate(pred, row)]
        result = project_rows(matched, attrs)
        with self._lock:
            self.stats.queries_served += 1
            self.stats.tuples_scanned += len(relation.rows)
            self.stats.tuples_returned += len(result)
        return result

    def execute(self, q: Query) -> list[dict]:
        return self.fetch(q.q_class, q.q_attrs, q.q_pred)

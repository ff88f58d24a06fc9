"""Workload files (one query per line) and seeded random generation of
workloads and CSV datasets for replay, verification and benchmarks."""

from __future__ import annotations

import random
from datetime import date, timedelta
from decimal import Decimal

from .schema import Catalog, ClassSchema, ValueKind


class WorkloadError(Exception):
    pass


def read_workload(text: str) -> list[tuple[int, str]]:
    """(line_number, query_text) pairs; '#' comments and blank lines skipped."""
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        out.append((no, stripped))
    return out


_TEXT_POOL = ("alpha", "beta", "gamma", "delta", "kappa", "omega", "sigma", "zeta")
_BASE_DATE = date(2010, 1, 1)


def _random_constant(kind: ValueKind, rng: random.Random) -> str:
    if kind is ValueKind.INTEGER:
        return str(rng.randint(0, 100))
    if kind is ValueKind.DECIMAL:
        return str(Decimal(rng.randint(0, 1000)) / 10)
    if kind is ValueKind.TEXT:
        return "'" + rng.choice(_TEXT_POOL) + "'"
    return f"'{_BASE_DATE + timedelta(days=rng.randint(0, 365))}'"


def _quote(name: str) -> str:
    if all(c.isalnum() or c in "-_" for c in name) and name[0].isalpha():
        return name
    return "'" + name.replace("'", "''") + "'"


def generate_csv(schema: ClassSchema, rows: int, seed: int) -> str:
    """Deterministic CSV for a class; integer keys count up from 1, text keys
    get distinct suffixes, everything else is drawn from small pools."""
    rng = random.Random(seed)
    header = list(schema.attribute_names)
    lines = [",".join(header)]
    for i in range(1, rows + 1):
        cells = []
        for attr in header:
            kind = schema.kind_of(attr)
            if attr in schema.primary_key:
                cells.append(str(i) if kind is ValueKind.INTEGER else f"id{i:06d}")
                continue
            if kind is ValueKind.INTEGER:
                cells.append(str(rng.randint(0, 100)))
            elif kind is ValueKind.DECIMAL:
                cells.append(str(Decimal(rng.randint(0, 1000)) / 10))
            elif kind is ValueKind.TEXT:
                cells.append(rng.choice(_TEXT_POOL))
            else:
                cells.append(str(_BASE_DATE + timedelta(days=rng.randint(0, 365))))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def generate_workload(
    catalog: Catalog,
    seed: int,
    count: int,
    classes: list[str] | None = None,
    fixed_projection: bool = False,
) -> list[str]:
    """Seeded random select-project queries over the catalog.

    Projections are random attribute subsets; predicates have one to three
    disjuncts of one or two compare atoms each. With ``fixed_projection``
    every query of a class projects the full attribute set, which keeps
    repeats of partially answerable queries fully cacheable.
    """
    names = list(classes) if classes else list(catalog.class_names())
    for name in names:
        catalog.schema_for(name)  # validate early
    if not names:
        raise WorkloadError("no classes to generate queries for")
    rng = random.Random(seed)
    queries = []
    for _ in range(count):
        schema = catalog.schema_for(rng.choice(names))
        attrs = list(schema.attribute_names)
        if fixed_projection:
            projected = attrs
        else:
            projected = rng.sample(attrs, rng.randint(1, min(3, len(attrs))))
        disjuncts = []
        for _ in range(rng.randint(1, 3)):
            atoms = []
            for _ in range(rng.randint(1, 2)):
                attr = rng.choice(attrs)
                kind = schema.kind_of(attr)
                op = rng.choice(("=", "<", ">", "<=", ">="))
                atoms.append(f"{_quote(attr)} {op} {_random_constant(kind, rng)}")
            disjuncts.append(" AND ".join(atoms))
        sel = ", ".join(_quote(a) for a in projected)
        queries.append(
            f"SELECT {sel} FROM {_quote(schema.class_name)} "
            f"WHERE {' OR '.join(disjuncts)}"
        )
    return queries

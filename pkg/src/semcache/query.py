"""Select-project query model and its textual form.

Grammar (keywords case-insensitive, names case-sensitive)::

    SELECT <name> [, <name>]* FROM <class> [WHERE <dnf>]
    dnf  := conj (OR conj)*
    conj := atom (AND atom)*
    atom := <name> <op> <literal>      op in  =  <  >  <=  >=

Names containing spaces are single-quoted ('' escapes a quote); literals are
bare numbers or single-quoted text, with dates written 'YYYY-MM-DD'.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .predicate import (
    ComparePredicate,
    Conjunct,
    DNFPredicate,
    KindMismatchError,
    TRUE,
    Value,
    format_literal,
    parse_literal,
)
from .schema import Catalog, ValueKind


class QuerySyntaxError(Exception):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Query:
    """A select-project query; content stays empty until answered."""

    q_class: str
    q_attrs: frozenset[str]
    q_pred: DNFPredicate = field(default_factory=lambda: TRUE)
    q_content: tuple = ()

    def __str__(self) -> str:
        return format_query(self)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<op><=|>=|=|<|>)
  | (?P<comma>,)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<quoted>'(?:[^']|'')*')
  | (?P<name>[A-Za-z][A-Za-z0-9_-]*)
    """,
    re.VERBOSE,
)

_PLAIN_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_-]*\Z")

_KEYWORDS = {"select", "from", "where", "and", "or"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # op | comma | number | quoted | name
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    tokens: list[_Tok] = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "quoted":
                value = value[1:-1].replace("''", "'")
            tokens.append(_Tok(kind, value, i))
        i = m.end()
    return tokens


class _QueryParser:
    def __init__(self, tokens: list[_Tok], catalog: Catalog, length: int):
        self.tokens = tokens
        self.catalog = catalog
        self.end = length
        self.pos = 0

    def _peek(self) -> _Tok | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, what: str) -> _Tok:
        tok = self._peek()
        if tok is None:
            raise QuerySyntaxError(f"expected {what}, found end of input", self.end)
        self.pos += 1
        return tok

    def _keyword(self, word: str) -> None:
        tok = self._next(word.upper())
        if tok.kind != "name" or tok.text.lower() != word:
            raise QuerySyntaxError(f"expected {word.upper()}, found {tok.text!r}", tok.pos)

    def _at_keyword(self, word: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "name" and tok.text.lower() == word

    def _name(self, what: str) -> _Tok:
        tok = self._next(what)
        if tok.kind not in ("name", "quoted"):
            raise QuerySyntaxError(f"expected {what}, found {tok.text!r}", tok.pos)
        if tok.kind == "name" and tok.text.lower() in _KEYWORDS:
            raise QuerySyntaxError(f"expected {what}, found keyword {tok.text!r}", tok.pos)
        return tok

    def parse(self) -> Query:
        self._keyword("select")
        attr_toks = [self._name("attribute name")]
        while self._peek() is not None and self._peek().kind == "comma":
            self._next(",")
            attr_toks.append(self._name("attribute name"))
        self._keyword("from")
        class_tok = self._name("class name")
        try:
            schema = self.catalog.schema_for(class_tok.text)
        except KeyError:
            raise QuerySyntaxError(f"unknown class {class_tok.text!r}", class_tok.pos) from None

        attrs = set()
        for tok in attr_toks:
            if not schema.has_attribute(tok.text):
                raise QuerySyntaxError(
                    f"class {schema.class_name!r} has no attribute {tok.text!r}", tok.pos
                )
            attrs.add(tok.text)  # duplicates collapse, projection is a set

        pred = TRUE
        if self._peek() is not None and self._at_keyword("where"):
            self._keyword("where")
            pred = self._dnf(schema)
        trailing = self._peek()
        if trailing is not None:
            raise QuerySyntaxError(f"unexpected trailing input {trailing.text!r}", trailing.pos)
        return Query(schema.class_name, frozenset(attrs), pred)

    def _dnf(self, schema) -> DNFPredicate:
        # Bare TRUE/FALSE keep contradictory or vacuous predicates printable.
        tok = self._peek()
        if tok is not None and tok.kind == "name" and tok.text.lower() in ("true", "false"):
            self.pos += 1
            return TRUE if tok.text.lower() == "true" else DNFPredicate(())
        conjuncts = [self._conjunct(schema)]
        while self._at_keyword("or"):
            self._keyword("or")
            conjuncts.append(self._conjunct(schema))
        return DNFPredicate(conjuncts)

    def _conjunct(self, schema) -> Conjunct:
        atoms = [self._atom(schema)]
        while self._at_keyword("and"):
            self._keyword("and")
            atoms.append(self._atom(schema))
        return Conjunct(atoms)

    def _atom(self, schema) -> ComparePredicate:
        attr = self._name("attribute name")
        if not schema.has_attribute(attr.text):
            raise QuerySyntaxError(
                f"class {schema.class_name!r} has no attribute {attr.text!r}", attr.pos
            )
        op = self._next("comparison operator")
        if op.kind != "op":
            raise QuerySyntaxError(f"expected comparison operator, found {op.text!r}", op.pos)
        lit = self._next("literal")
        kind = schema.kind_of(attr.text)
        value = self._literal(lit, kind)
        return ComparePredicate(attr.text, op.text, value)

    def _literal(self, tok: _Tok, kind: ValueKind) -> Value:
        if tok.kind == "number":
            if kind is ValueKind.INTEGER and "." in tok.text:
                raise QuerySyntaxError(
                    f"attribute is integer but literal {tok.text!r} is not", tok.pos
                )
            if kind not in (ValueKind.INTEGER, ValueKind.DECIMAL):
                raise QuerySyntaxError(
                    f"attribute is {kind.value} but literal {tok.text!r} is a number", tok.pos
                )
            return parse_literal(tok.text, kind)
        if tok.kind == "quoted":
            if kind is ValueKind.TEXT:
                return tok.text
            if kind is ValueKind.DATE:
                try:
                    return parse_literal(tok.text, kind)
                except KindMismatchError:
                    raise QuerySyntaxError(
                        f"expected a 'YYYY-MM-DD' date, found {tok.text!r}", tok.pos
                    ) from None
            raise QuerySyntaxError(
                f"attribute is {kind.value} but literal is quoted text", tok.pos
            )
        raise QuerySyntaxError(f"expected literal, found {tok.text!r}", tok.pos)


def parse_query(text: str, catalog: Catalog) -> Query:
    """Parse query text against the catalog; errors carry a position."""
    return _QueryParser(_tokenize(text), catalog, len(text)).parse()


def parse_predicate(text: str, catalog: Catalog, class_name: str) -> DNFPredicate:
    """Parse a bare WHERE-clause predicate for the given class."""
    parser = _QueryParser(_tokenize(text), catalog, len(text))
    pred = parser._dnf(catalog.schema_for(class_name))
    trailing = parser._peek()
    if trailing is not None:
        raise QuerySyntaxError(f"unexpected trailing input {trailing.text!r}", trailing.pos)
    return pred


def _format_name(name: str) -> str:
    if _PLAIN_NAME_RE.match(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def format_predicate(p: DNFPredicate) -> str:
    """Canonical text of a predicate (atoms in normal form, sorted)."""
    if p.is_true:
        return "TRUE"
    if p.is_false:
        return "FALSE"
    parts = []
    for c in sorted(p.disjuncts, key=str):
        parts.append(
            " AND ".join(
                f"{_format_name(a.attribute)} {a.op} {format_literal(a.constant)}"
                for a in c.canonical_atoms()
            )
        )
    return " OR ".join(parts)


def format_query(q: Query) -> str:
    """Canonical text form; parse(format(q)) equals q."""
    sel = ", ".join(_format_name(a) for a in sorted(q.q_attrs))
    text = f"SELECT {sel} FROM {_format_name(q.q_class)}"
    if not q.q_pred.is_true:
        text += f" WHERE {format_predicate(q.q_pred)}"
    return text

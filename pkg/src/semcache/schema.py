"""Relational catalog: class schemas, attribute kinds, keys and functional
dependencies.

The catalog is loaded once from a small text format (one ``class`` block per
relation) and is immutable afterwards, so it can be shared freely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class ValueKind(enum.Enum):
    """Kinds an attribute value can have; each kind is totally ordered."""

    INTEGER = "integer"
    DECIMAL = "decimal"
    TEXT = "text"
    DATE = "date"


class CatalogError(Exception):
    """Malformed catalog text or invalid schema definition."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class UnknownClassError(KeyError):
    pass


class UnknownAttributeError(KeyError):
    pass


@dataclass(frozen=True)
class AttributeDef:
    name: str
    kind: ValueKind


@dataclass(frozen=True)
class FunctionalDependency:
    determinant: frozenset[str]
    dependents: frozenset[str]

    def __post_init__(self):
        if not self.determinant or not self.dependents:
            raise CatalogError("functional dependency sides must be non-empty")


@dataclass(frozen=True)
class ClassSchema:
    """One relation: ordered attributes, primary key and FDs.

    The key dependency (primary key determines every attribute) is added
    automatically and is always present in ``fds``.
    """

    class_name: str
    attributes: tuple[AttributeDef, ...]
    primary_key: frozenset[str]
    fds: tuple[FunctionalDependency, ...] = ()

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise CatalogError(f"duplicate attribute name in class {self.class_name!r}")
        if not self.primary_key:
            raise CatalogError(f"class {self.class_name!r} has an empty key")
        missing = self.primary_key - set(names)
        if missing:
            raise CatalogError(
                f"key of class {self.class_name!r} references unknown attribute(s) {sorted(missing)}"
            )
        for fd in self.fds:
            bad = (fd.determinant | fd.dependents) - set(names)
            if bad:
                raise CatalogError(
                    f"fd of class {self.class_name!r} references unknown attribute(s) {sorted(bad)}"
                )
        key_fd = FunctionalDependency(self.primary_key, frozenset(names))
        if key_fd not in self.fds:
            object.__setattr__(self, "fds", self.fds + (key_fd,))

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def kind_of(self, name: str) -> ValueKind:
        for a in self.attributes:
            if a.name == name:
                return a.kind
        raise UnknownAttributeError(f"{self.class_name!r} has no attribute {name!r}")


@dataclass(frozen=True)
class Catalog:
    classes: Mapping[str, ClassSchema] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "classes", dict(self.classes))

    def schema_for(self, class_name: str) -> ClassSchema:
        try:
            return self.classes[class_name]
        except KeyError:
            raise UnknownClassError(f"unknown class {class_name!r}") from None

    def class_names(self) -> tuple[str, ...]:
        return tuple(self.classes)

    def all_attributes(self) -> frozenset[str]:
        return frozenset(a for s in self.classes.values() for a in s.attribute_names)


def attribute_closure(catalog: Catalog, class_name: str, attrs: Iterable[str]) -> frozenset[str]:
    """Closure of ``attrs`` under the class's functional dependencies.

    Standard fixpoint: repeatedly add the dependents of every FD whose
    determinant is already covered. Monotone, extensive and idempotent.
    """
    schema = catalog.schema_for(class_name)
    known = set(schema.attribute_names)
    closure = set()
    for a in attrs:
        if a not in known:
            raise UnknownAttributeError(f"{class_name!r} has no attribute {a!r}")
        closure.add(a)
    changed = True
    while changed:
        changed = False
        for fd in schema.fds:
            if fd.determinant <= closure and not fd.dependents <= closure:
                closure |= fd.dependents
                changed = True
    return frozenset(closure)


# --- catalog text format -------------------------------------------------
#
#   class <Name> { <attr>:<kind>, ... ; key(<attr>[, <attr>...])
#                  [; fd(<a>[, <a>...] -> <b>[, <b>...])]* }
#
# Names containing spaces are single-quoted. '#' starts a line comment.

_PUNCT = {"{", "}", ":", ",", ";", "(", ")"}


@dataclass(frozen=True)
class _Token:
    text: str
    quoted: bool
    line: int
    column: int


def _tokenize_catalog(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            i += 1
            col += 1
        elif ch == "#":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == "'":
            start_line, start_col = line, col
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n or text[i] == "\n":
                    raise CatalogError("unterminated quoted name", start_line, start_col)
                if text[i] == "'":
                    if i + 1 < n and text[i + 1] == "'":  # escaped quote
                        buf.append("'")
                        i += 2
                        col += 2
                        continue
                    i += 1
                    col += 1
                    break
                buf.append(text[i])
                i += 1
                col += 1
            tokens.append(_Token("".join(buf), True, start_line, start_col))
        elif ch in _PUNCT:
            tokens.append(_Token(ch, False, line, col))
            i += 1
            col += 1
        elif ch == "-" and text[i : i + 2] == "->":
            tokens.append(_Token("->", False, line, col))
            i += 2
            col += 2
        elif ch.isalpha() or ch == "_":
            start_col = col
            j = i
            while j < n and (text[j].isalnum() or text[j] in "-_"):
                j += 1
            tokens.append(_Token(text[i:j], False, line, start_col))
            col += j - i
            i = j
        else:
            raise CatalogError(f"unexpected character {ch!r}", line, col)
    return tokens


class _CatalogParser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, what: str) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise CatalogError(
                f"expected {what}, found end of input",
                last.line if last else 1,
                last.column if last else 1,
            )
        self.pos += 1
        return tok

    def _expect(self, text: str) -> _Token:
        tok = self._next(repr(text))
        if tok.quoted or tok.text != text:
            raise CatalogError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def _name(self, what: str) -> _Token:
        tok = self._next(what)
        if not tok.quoted and (tok.text in _PUNCT or tok.text == "->"):
            raise CatalogError(f"expected {what}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def _name_list(self) -> list[_Token]:
        names = [self._name("attribute name")]
        while self._peek() is not None and self._peek().text == "," and not self._peek().quoted:
            self._expect(",")
            names.append(self._name("attribute name"))
        return names

    def parse(self) -> Catalog:
        classes: dict[str, ClassSchema] = {}
        while self._peek() is not None:
            schema = self._parse_class()
            if schema.class_name in classes:
                raise CatalogError(f"duplicate class name {schema.class_name!r}")
            classes[schema.class_name] = schema
        return Catalog(classes)

    def _parse_class(self) -> ClassSchema:
        tok = self._next("'class'")
        if tok.quoted or tok.text != "class":
            raise CatalogError(f"expected 'class', found {tok.text!r}", tok.line, tok.column)
        name = self._name("class name")
        self._expect("{")

        attributes: list[AttributeDef] = []
        seen: set[str] = set()
        while True:
            attr = self._name("attribute name")
            self._expect(":")
            kind_tok = self._next("value kind")
            try:
                kind = ValueKind(kind_tok.text)
            except ValueError:
                raise CatalogError(
                    f"unknown value kind {kind_tok.text!r}", kind_tok.line, kind_tok.column
                ) from None
            if attr.text in seen:
                raise CatalogError(
                    f"duplicate attribute name {attr.text!r}", attr.line, attr.column
                )
            seen.add(attr.text)
            attributes.append(AttributeDef(attr.text, kind))
            nxt = self._next("',' or ';'")
            if nxt.text == ";" and not nxt.quoted:
                break
            if not (nxt.text == "," and not nxt.quoted):
                raise CatalogError(f"expected ',' or ';', found {nxt.text!r}", nxt.line, nxt.column)

        kw = self._next("'key'")
        if kw.quoted or kw.text != "key":
            raise CatalogError(f"expected 'key', found {kw.text!r}", kw.line, kw.column)
        self._expect("(")
        key_names = self._name_list()
        self._expect(")")
        for t in key_names:
            if t.text not in seen:
                raise CatalogError(f"key references unknown attribute {t.text!r}", t.line, t.column)

        fds: list[FunctionalDependency] = []
        while self._peek() is not None and self._peek().text == ";" and not self._peek().quoted:
            self._expect(";")
            fd_kw = self._next("'fd'")
            if fd_kw.quoted or fd_kw.text != "fd":
                raise CatalogError(f"expected 'fd', found {fd_kw.text!r}", fd_kw.line, fd_kw.column)
            self._expect("(")
            lhs = self._name_list()
            self._expect("->")
            rhs = self._name_list()
            self._expect(")")
            for t in lhs + rhs:
                if t.text not in seen:
                    raise CatalogError(
                        f"fd references unknown attribute {t.text!r}", t.line, t.column
                    )
            fds.append(
                FunctionalDependency(
                    frozenset(t.text for t in lhs), frozenset(t.text for t in rhs)
                )
            )

        close = self._next("'}'")
        if close.quoted or close.text != "}":
            raise CatalogError(f"expected '}}', found {close.text!r}", close.line, close.column)
        return ClassSchema(
            class_name=name.text,
            attributes=tuple(attributes),
            primary_key=frozenset(t.text for t in key_names),
            fds=tuple(fds),
        )


def load_catalog(text: str) -> Catalog:
    """Parse catalog text into a Catalog; raises CatalogError with position."""
    return _CatalogParser(_tokenize_catalog(text)).parse()

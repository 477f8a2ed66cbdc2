"""Relation triples, the relation-type catalog and the triple-text parser."""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NewType

from .errors import EmptyCatalog, EmptyEntity

NormalizedEntity = NewType("NormalizedEntity", str)

BUILTIN_CATALOG = "fewrel_pid2name.json"
RESPONSE_MARKER = "### Response:"


class Origin(str, enum.Enum):
    CLAIM = "claim"
    EVIDENCE = "evidence"


def _is_edge_char(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def normalize_entity(surface: str) -> NormalizedEntity:
    """Fold an entity surface form to the key used for identity checks.

    Lowercases, collapses internal whitespace runs to one space and strips
    punctuation and whitespace from both ends.

    >>> normalize_entity('  Barack   Obama ')
    'barack obama'
    >>> normalize_entity('"HoVer,"')
    'hover'
    """
    text = " ".join(surface.lower().split())
    start, end = 0, len(text)
    while start < end and _is_edge_char(text[start]):
        start += 1
    while end > start and _is_edge_char(text[end - 1]):
        end -= 1
    canonical = text[start:end]
    if not canonical:
        raise EmptyEntity(f"entity {surface!r} is empty after normalization")
    return NormalizedEntity(canonical)


def _relation_key(name: str) -> str:
    return " ".join(name.casefold().split())


@dataclass(frozen=True)
class RelationTriple:
    head: str
    relation: str
    tail: str
    origin: Origin = Origin.CLAIM
    in_catalog: bool = True

    def __post_init__(self) -> None:
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise EmptyEntity(f"triple {name} must be non-empty, got {value!r}")
            # every field must also have a usable normalized key
            normalize_entity(value)
        object.__setattr__(self, "origin", Origin(self.origin))

    @property
    def head_key(self) -> NormalizedEntity:
        return normalize_entity(self.head)

    @property
    def tail_key(self) -> NormalizedEntity:
        return normalize_entity(self.tail)

    def key(self) -> tuple[str, str, str]:
        """Normalized (head, relation, tail), the identity used for dedup and set checks."""
        return (self.head_key, normalize_entity(self.relation), self.tail_key)

    def render(self) -> str:
        return format_triple(self.head, self.relation, self.tail)

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "relation": self.relation,
            "tail": self.tail,
            "origin": self.origin.value,
            "in_catalog": self.in_catalog,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RelationTriple:
        return cls(
            head=data["head"],
            relation=data["relation"],
            tail=data["tail"],
            origin=Origin(data.get("origin", "claim")),
            in_catalog=bool(data.get("in_catalog", True)),
        )


def _quote_part(part: str) -> str:
    if any(ch in part for ch in ",()") and '"' not in part:
        return f'"{part}"'
    return part


def format_triple(head: str, relation: str, tail: str) -> str:
    """Render a triple as ``(head, relation, tail)``.

    Parts containing commas or parentheses are double-quoted so that
    :func:`parse_triples` reads them back as a single field.
    """
    return "(" + ", ".join(_quote_part(p) for p in (head, relation, tail)) + ")"


@dataclass(frozen=True)
class RelationCatalog:
    names: tuple[str, ...]
    source: str = "builtin"
    _keys: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.names:
            raise EmptyCatalog(f"relation catalog from {self.source} is empty")
        keys = [_relation_key(n) for n in self.names]
        if len(set(keys)) != len(keys):
            raise ValueError("relation names must be unique after normalization")
        object.__setattr__(self, "_keys", frozenset(keys))

    @classmethod
    def from_names(cls, names: Iterable[str], source: str = "inline") -> RelationCatalog:
        seen: set[str] = set()
        ordered = []
        for name in names:
            name = " ".join(name.split())
            if not name or _relation_key(name) in seen:
                continue
            seen.add(_relation_key(name))
            ordered.append(name)
        return cls(tuple(ordered), source)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, relation: object) -> bool:
        return isinstance(relation, str) and _relation_key(relation) in self._keys


def _names_from_json(data) -> list[str]:
    # accepted shapes: ["name", ...] or FewRel pid2name {"P17": ["country", "desc"], ...}
    if isinstance(data, list):
        return [str(x) for x in data]
    if isinstance(data, dict):
        names = []
        for value in data.values():
            if isinstance(value, list):
                if value:
                    names.append(str(value[0]))
            else:
                names.append(str(value))
        return names
    raise ValueError("structured catalog must be a JSON list or object")


def load_catalog(path: str | Path) -> RelationCatalog:
    """Load a relation catalog.

    Plain text files hold one relation name per line; blank lines and lines
    starting with ``#`` are ignored. ``.json`` files may hold a list of names
    or a FewRel-style ``pid2name`` object. Duplicates are dropped keeping the
    first occurrence.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        names = _names_from_json(json.loads(text))
    else:
        names = [ln for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    names = [n for n in names if n.strip()]
    if not names:
        raise EmptyCatalog(f"no relation names in {path}")
    return RelationCatalog.from_names(names, source=str(path))


def builtin_catalog() -> RelationCatalog:
    """The relation inventory of the public FewRel release (train and val)."""
    ref = resources.files("zefav.data").joinpath(BUILTIN_CATALOG)
    names = _names_from_json(json.loads(ref.read_text(encoding="utf-8")))
    return RelationCatalog.from_names(names, source="builtin")


def builtin_pid_names() -> dict[str, str]:
    ref = resources.files("zefav.data").joinpath(BUILTIN_CATALOG)
    return {pid: v[0] for pid, v in json.loads(ref.read_text(encoding="utf-8")).items()}


# --- triple text parser -----------------------------------------------------


@dataclass(frozen=True)
class ParseWarning:
    offset: int
    fragment: str
    reason: str

    def __str__(self) -> str:
        return f"{self.reason} at {self.offset}: {self.fragment[:60]!r}"


def _find_spans(text: str, base: int, quote_aware: bool = True):
    """Yield ('span', start, end) for top-level balanced parentheses and
    ('unbalanced', start, None) for an opening paren that never closes."""
    i, n = 0, len(text)
    while i < n:
        if text[i] != "(":
            i += 1
            continue
        end = _match_paren(text, i, quote_aware)
        if end is None and quote_aware:
            # a stray quote inside the span can hide the closing paren
            end = _match_paren(text, i, False)
        if end is None:
            yield ("unbalanced", base + i, None)
            i += 1
            continue
        yield ("span", base + i, base + end)
        i = end + 1


def _match_paren(text: str, start: int, quote_aware: bool) -> int | None:
    depth = 0
    in_quote = False
    for j in range(start, len(text)):
        ch = text[j]
        if quote_aware and ch == '"':
            in_quote = not in_quote
        elif in_quote:
            continue
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return j
    return None


def _split_top_level(content: str) -> list[str]:
    parts, buf = [], []
    depth = 0
    in_quote = False
    quotes_balanced = content.count('"') % 2 == 0
    for ch in content:
        if ch == '"' and quotes_balanced:
            in_quote = not in_quote
        elif not in_quote:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append("".join(buf))
                buf = []
                continue
        buf.append(ch)
    parts.append("".join(buf))
    return parts


def _clean_part(part: str) -> str:
    part = part.strip()
    if len(part) >= 2 and part[0] == part[-1] == '"':
        part = part[1:-1].strip()
    return part


def _parse_region(text: str, base: int, out: list, warnings: list) -> None:
    for kind, start, end in _find_spans(text, base):
        if kind == "unbalanced":
            warnings.append(ParseWarning(start, text[start - base:], "unbalanced parenthesis"))
            continue
        content = text[start - base + 1:end - base]
        parts = _split_top_level(content)
        if len(parts) == 3:
            cleaned = [_clean_part(p) for p in parts]
            try:
                for p in cleaned:
                    normalize_entity(p)
            except EmptyEntity:
                warnings.append(ParseWarning(start, content, "empty triple field"))
                continue
            out.append((start, cleaned))
        elif "(" in content and ")" in content:
            # e.g. "((A, r, B), (C, s, D))": look one level down
            nested_out: list = []
            nested_warn: list = []
            _parse_region(content, start + 1, nested_out, nested_warn)
            if nested_out:
                out.extend(nested_out)
                warnings.extend(nested_warn)
            else:
                warnings.append(
                    ParseWarning(start, content, f"expected 2 top-level commas, found {len(parts) - 1}")
                )
                warnings.extend(nested_warn)
        else:
            warnings.append(
                ParseWarning(start, content, f"expected 2 top-level commas, found {len(parts) - 1}")
            )


def parse_triples(
    generation: str,
    origin: Origin | str = Origin.CLAIM,
    catalog: RelationCatalog | None = None,
    enforce_catalog: bool = False,
) -> tuple[list[RelationTriple], list[ParseWarning]]:
    """Extract every ``(head, relation, tail)`` group from model output.

    Never raises. Malformed groups become :class:`ParseWarning` entries.
    Triples keep their order of appearance and are deduplicated on their
    normalized key. With a catalog, out-of-catalog relations are flagged
    through ``in_catalog``; with ``enforce_catalog`` they are dropped instead.
    """
    origin = Origin(origin)
    text = generation
    marker_at = text.rfind(RESPONSE_MARKER)
    base = 0
    if marker_at >= 0:
        base = marker_at + len(RESPONSE_MARKER)
        text = text[base:]

    found: list = []
    warnings: list[ParseWarning] = []
    _parse_region(text, base, found, warnings)

    triples: list[RelationTriple] = []
    seen: set = set()
    for offset, (head, relation, tail) in found:
        in_catalog = catalog is None or relation in catalog
        if enforce_catalog and not in_catalog:
            warnings.append(ParseWarning(offset, relation, "relation not in catalog"))
            continue
        triple = RelationTriple(head, relation, tail, origin, in_catalog)
        key = triple.key()
        if key in seen:
            continue
        seen.add(key)
        triples.append(triple)
    return triples, warnings

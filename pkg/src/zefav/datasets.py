"""Claim datasets (HoVer, FEVEROUS-S, custom) and the FewRel instruction export."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable

from .errors import LabelError, SchemaError, SpanError
from .prompt_kit import render_relation_prompt
from .relation_core import RelationCatalog, builtin_pid_names, format_triple

# claim counts of the evaluation splits
EXPECTED_COUNTS = {
    "hover-2hop": 1126,
    "hover-3hop": 1835,
    "hover-4hop": 1039,
    "feverous-s": 2962,
}

FEVEROUS_CHALLENGES = (
    "Search terms not in claim",
    "Multi-hop Reasoning",
    "Combining Tables and Text",
    "Entity Disambiguation",
    "Numerical Reasoning",
    "Other",
)

_TRUE_LABELS = frozenset({"supports", "supported", "support", "true"})
_FALSE_LABELS = frozenset({"refutes", "refuted", "not_supported", "not supported", "refute", "false"})


class Source(str, enum.Enum):
    HOVER = "hover"
    FEVEROUS_S = "feverous-s"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ClaimRecord:
    id: str
    claim: str
    gold: bool | None
    evidence: tuple[str, ...] = ()
    stratum: str | None = None
    source: Source = Source.CUSTOM

    def __post_init__(self) -> None:
        if not self.claim.strip():
            raise SchemaError(f"record {self.id}: empty claim")
        if any(not e.strip() for e in self.evidence):
            raise SchemaError(f"record {self.id}: empty evidence string")
        object.__setattr__(self, "evidence", tuple(self.evidence))
        object.__setattr__(self, "source", Source(self.source))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "claim": self.claim,
            "gold": self.gold,
            "evidence": list(self.evidence),
            "stratum": self.stratum,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ClaimRecord:
        return cls(
            id=str(data["id"]),
            claim=data["claim"],
            gold=data.get("gold"),
            evidence=tuple(data.get("evidence", ())),
            stratum=data.get("stratum"),
            source=Source(data.get("source", "custom")),
        )


@dataclass(frozen=True)
class FieldMapping:
    """Where each ClaimRecord field lives in a source record.

    Paths are dot-separated keys; integer components index into lists.
    Label values are compared case-insensitively after trimming.
    """

    claim_field: str = "claim"
    label_field: str = "label"
    evidence_field: str | None = "evidence"
    id_field: str | None = "id"
    stratum_field: str | None = None
    stratum_format: str = "{}"
    records_field: str | None = None
    label_true_values: frozenset[str] = _TRUE_LABELS
    label_false_values: frozenset[str] = _FALSE_LABELS

    def __post_init__(self) -> None:
        true = frozenset(v.strip().casefold() for v in self.label_true_values)
        false = frozenset(v.strip().casefold() for v in self.label_false_values)
        if not true or not false:
            raise ValueError("label value sets must be non-empty")
        if true & false:
            raise ValueError(f"label value sets overlap: {sorted(true & false)}")
        object.__setattr__(self, "label_true_values", true)
        object.__setattr__(self, "label_false_values", false)

    @classmethod
    def from_dict(cls, data: dict) -> FieldMapping:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown mapping keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("label_true_values", "label_false_values"):
            if key in data:
                data[key] = frozenset(data[key])
        return cls(**data)

    def map_label(self, value: Any) -> bool | None:
        if isinstance(value, bool):
            value = "true" if value else "false"
        key = str(value).strip().casefold()
        if key in self.label_true_values:
            return True
        if key in self.label_false_values:
            return False
        return None


HOVER_MAPPING = FieldMapping(stratum_field="num_hops", stratum_format="{}-hop")
FEVEROUS_MAPPING = FieldMapping(stratum_field="challenge")
CANONICAL_MAPPING = FieldMapping(label_field="gold", stratum_field="stratum")

BUILTIN_MAPPINGS = {
    "hover": HOVER_MAPPING,
    "feverous": FEVEROUS_MAPPING,
    "canonical": CANONICAL_MAPPING,
}

_MISSING = object()


def _get_path(obj: Any, path: str) -> Any:
    for part in path.split("."):
        if isinstance(obj, dict):
            obj = obj.get(part, _MISSING)
        elif isinstance(obj, list) and part.lstrip("-").isdigit():
            idx = int(part)
            obj = obj[idx] if -len(obj) <= idx < len(obj) else _MISSING
        else:
            return _MISSING
        if obj is _MISSING:
            return _MISSING
    return obj


def linearize_table(rows: Iterable[Iterable[Any]]) -> str:
    """Tables become one line per row with cells joined by ``" | "``."""
    return "\n".join(" | ".join(str(cell).strip() for cell in row) for row in rows)


def _evidence_items(value: Any) -> list[str]:
    if value is None or value is _MISSING:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, dict):
        if "table" in value:
            return [linearize_table(value["table"])]
        for key in ("text", "content", "sentence"):
            if isinstance(value.get(key), str):
                return [value[key]]
        return []
    if isinstance(value, list):
        if value and all(isinstance(v, list) for v in value):
            # a bare list of rows is one table
            if all(all(not isinstance(c, (list, dict)) for c in row) for row in value):
                return [linearize_table(value)]
        items: list[str] = []
        for element in value:
            if isinstance(element, list) and all(not isinstance(c, (list, dict)) for c in element):
                items.append(" | ".join(str(c).strip() for c in element))
            else:
                items.extend(_evidence_items(element))
        return items
    return [str(value)]


def _read_json_records(path: Path, records_field: str | None) -> list:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("[") or (stripped.startswith("{") and path.suffix.lower() == ".json"):
        data = json.loads(text)
        if records_field:
            data = _get_path(data, records_field)
        if not isinstance(data, list):
            raise SchemaError(f"{path}: expected a list of records")
        return data
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return records


def load_split(
    path: str | Path,
    mapping: FieldMapping = CANONICAL_MAPPING,
    source: Source | str = Source.CUSTOM,
    expected_count: int | None = None,
) -> list[ClaimRecord]:
    """Load a JSON or JSON Lines split into :class:`ClaimRecord` objects.

    Raises :class:`SchemaError` for missing mapped fields and
    :class:`LabelError` (after scanning every record) for labels outside the
    mapping's value sets.
    """
    path = Path(path)
    source = Source(source)
    raw = _read_json_records(path, mapping.records_field)

    records: list[ClaimRecord] = []
    bad_labels: list[tuple[str, object]] = []
    for idx, item in enumerate(raw):
        rid = _get_path(item, mapping.id_field) if mapping.id_field else _MISSING
        rid = str(idx) if rid is _MISSING or rid is None else str(rid)
        claim = _get_path(item, mapping.claim_field)
        if claim is _MISSING or not isinstance(claim, str):
            raise SchemaError(f"{path}: record {rid} lacks claim field {mapping.claim_field!r}")
        label_value = _get_path(item, mapping.label_field)
        if label_value is _MISSING:
            raise SchemaError(f"{path}: record {rid} lacks label field {mapping.label_field!r}")
        gold = None if label_value is None else mapping.map_label(label_value)
        if gold is None and label_value is not None:
            bad_labels.append((rid, label_value))
            continue
        evidence: list[str] = []
        if mapping.evidence_field:
            ev = _get_path(item, mapping.evidence_field)
            evidence = [e.strip() for e in _evidence_items(ev) if e.strip()]
        stratum = None
        if mapping.stratum_field:
            value = _get_path(item, mapping.stratum_field)
            if value is not _MISSING and value is not None:
                stratum = mapping.stratum_format.format(value)
        records.append(ClaimRecord(rid, claim.strip(), gold, tuple(evidence), stratum, source))

    if bad_labels:
        raise LabelError(bad_labels)
    if expected_count is not None and len(records) != expected_count:
        raise SchemaError(f"{path}: expected {expected_count} records, loaded {len(records)}")
    return records


def write_records(records: Iterable[ClaimRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return path


def load_records(path: str | Path) -> list[ClaimRecord]:
    """Read the canonical JSON Lines format written by :func:`write_records`."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(ClaimRecord.from_dict(json.loads(line)))
    return out


def with_source(records: Iterable[ClaimRecord], source: Source) -> list[ClaimRecord]:
    return [replace(r, source=source) for r in records]


# --- FewRel export ----------------------------------------------------------


@dataclass
class FewRelInstance:
    tokens: list[str]
    head_positions: list[int]
    tail_positions: list[int]
    relation: str
    ref: str = ""


def _positions(entity: Any, ref: str, which: str) -> list[int]:
    # FewRel entity: [surface, wikidata id, [[token indices], ...]]
    try:
        spans = entity[2]
        positions = list(spans[0])
    except (TypeError, IndexError, KeyError):
        raise SpanError(f"{ref}: malformed {which} entity {entity!r}") from None
    if not positions:
        raise SpanError(f"{ref}: empty {which} span")
    return positions


def _iter_fewrel(data: Any) -> Iterable[FewRelInstance]:
    if isinstance(data, dict):
        for relation, instances in data.items():
            for i, inst in enumerate(instances):
                ref = f"{relation}[{i}]"
                yield FewRelInstance(
                    inst["tokens"], _positions(inst["h"], ref, "head"), _positions(inst["t"], ref, "tail"), relation, ref
                )
    elif isinstance(data, list):
        for i, inst in enumerate(data):
            ref = f"record {i}"
            yield FewRelInstance(
                inst["tokens"], _positions(inst["h"], ref, "head"), _positions(inst["t"], ref, "tail"), inst["relation"], ref
            )
    else:
        raise SchemaError("FewRel file must hold an object of relation -> instances or a list of instances")


def _span_text(tokens: list[str], positions: list[int], ref: str, which: str) -> str:
    for p in positions:
        if not isinstance(p, int) or not 0 <= p < len(tokens):
            raise SpanError(f"{ref}: {which} span index {p} out of bounds for {len(tokens)} tokens")
    text = " ".join(tokens[p] for p in positions).strip()
    if not text:
        raise SpanError(f"{ref}: {which} span is blank")
    return text


def fewrel_instruction_pairs(
    data: Any,
    catalog: RelationCatalog,
    pid_names: dict[str, str] | None = None,
) -> Iterable[dict]:
    pid_names = builtin_pid_names() if pid_names is None else pid_names
    for inst in _iter_fewrel(data):
        sentence = " ".join(inst.tokens)
        head = _span_text(inst.tokens, inst.head_positions, inst.ref, "head")
        tail = _span_text(inst.tokens, inst.tail_positions, inst.ref, "tail")
        relation = pid_names.get(inst.relation, inst.relation)
        yield {
            "instruction": render_relation_prompt(sentence, catalog),
            "response": format_triple(head, relation, tail),
        }


def export_fewrel_instructions(
    fewrel_path: str | Path,
    catalog: RelationCatalog,
    out: str | Path,
    pid_names: dict[str, str] | None = None,
) -> int:
    """Write one ``{"instruction", "response"}`` JSON line per FewRel instance.

    Every span is validated before anything is written, so a bad record
    leaves no partial output behind.
    """
    data = json.loads(Path(fewrel_path).read_text(encoding="utf-8"))
    pairs = list(fewrel_instruction_pairs(data, catalog, pid_names))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair, ensure_ascii=False) + "\n")
    return len(pairs)

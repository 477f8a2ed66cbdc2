"""Prompt rendering for the three generation stages and verdict parsing."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import MissingExamples, NothingToVerify
from .relation_core import RelationCatalog, RelationTriple

DEFAULT_CHAR_BUDGET = 6000

RELATION_TEMPLATE = (
    "### Instruction: Given a sentence, please identify the head and tail entities in the "
    "sentence and classify the relation type into one of the appropriate categories; "
    "The collection of categories is: [{relations}]; \n"
    "Sentence: {sentence} \n"
    "### Response: "
)

INFORE_INSTRUCTION = (
    "Transform the following text into a hierarchical structure that organizes the information "
    "in the text into levels. The same level can reflect parallel relationships and indented "
    "levels reflect causal relationships. Here are some examples:"
)
INFORE_EXAMPLE = "The evidence: {evidence}\nThe hierarchical structure: {hierarchy}"
INFORE_TARGET = "### The evidence: {evidence}\nThe hierarchical structure:"

VERDICT_INSTRUCTION = (
    "Please answer the question based on {sources}. "
    "The answer must belong to one of two values: True or False."
)
CLAIM_RELATION_LINE = "The question mentioned the relation between {head} and {tail} as {relation} *"
EVIDENCE_RELATION_LINE = "{head} and {tail} has relation with {relation} **"
STEP_BY_STEP = "Let's think step-by-step."
ANSWER_MARKER = "###The answer is:"
LIST_INDENT = "    "


@dataclass(frozen=True)
class AblationFlags:
    use_relations: bool = True
    use_infore: bool = True
    use_context: bool = True

    def __post_init__(self) -> None:
        if not (self.use_relations or self.use_infore or self.use_context):
            raise ValueError("at least one of relations, InfoRE and context must be enabled")

    def to_dict(self) -> dict:
        return {
            "use_relations": self.use_relations,
            "use_infore": self.use_infore,
            "use_context": self.use_context,
        }

    @classmethod
    def from_dict(cls, data: dict) -> AblationFlags:
        return cls(**{k: bool(data[k]) for k in ("use_relations", "use_infore", "use_context")})

    @property
    def label(self) -> str:
        marks = [
            "rel" if self.use_relations else "norel",
            "infore" if self.use_infore else "noinfore",
            "ctx" if self.use_context else "noctx",
        ]
        return "-".join(marks)


@dataclass(frozen=True)
class FewShotExample:
    evidence: str
    hierarchy: str


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    truncated: bool = False

    def __str__(self) -> str:
        return self.text


def load_few_shot(path: str | Path | None = None) -> list[FewShotExample]:
    """Read ``[{"evidence": ..., "hierarchy": ...}, ...]``; ``None`` loads the shipped pair."""
    if path is None:
        raw = resources.files("zefav.data").joinpath("infore_examples.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    examples = [FewShotExample(e["evidence"], e["hierarchy"]) for e in json.loads(raw)]
    if not examples:
        raise MissingExamples(f"no few-shot examples in {path or 'builtin file'}")
    return examples


def trim_longest_first(lengths: Sequence[int], excess: int) -> list[int]:
    """Target lengths after removing ``excess`` characters, one at a time,
    always from the currently longest item (earliest index on ties)."""
    lengths = list(lengths)
    if excess <= 0:
        return lengths
    if excess >= sum(lengths):
        return [0] * len(lengths)

    def removal(level: int) -> int:
        return sum(max(0, n - level) for n in lengths)

    lo, hi = 0, max(lengths)
    # largest level whose removal still covers the excess
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if removal(mid) >= excess:
            lo = mid
        else:
            hi = mid - 1
    level = lo + 1
    out = [min(n, level) for n in lengths]
    remaining = excess - removal(level)
    for i, n in enumerate(out):
        if remaining == 0:
            break
        if n == level:
            out[i] -= 1
            remaining -= 1
    return out


def _fit(items: list[str], render, budget: int | None) -> tuple[str, bool]:
    text = render(items)
    if budget is None or len(text) <= budget:
        return text, False
    # fixed text is never cut, so the result can still exceed a tiny budget
    targets = trim_longest_first([len(s) for s in items], len(text) - budget)
    trimmed = [s[:n] for s, n in zip(items, targets)]
    return render(trimmed), True


def render_relation_prompt(sentence: str, catalog: RelationCatalog) -> str:
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    return RELATION_TEMPLATE.format(relations=", ".join(catalog.names), sentence=sentence.strip())


def render_infore_prompt(
    evidence: Sequence[str],
    examples: Sequence[FewShotExample],
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> RenderedPrompt:
    if not examples:
        raise MissingExamples("InfoRE prompt needs at least one few-shot example")
    items = [e.strip() for e in evidence if e.strip()]
    if not items:
        raise ValueError("InfoRE prompt needs at least one evidence item")

    shots = "\n".join(INFORE_EXAMPLE.format(evidence=e.evidence, hierarchy=e.hierarchy) for e in examples)

    def render(parts: list[str]) -> str:
        target = INFORE_TARGET.format(evidence="\n\n".join(parts))
        return f"{INFORE_INSTRUCTION}\n{shots}\n{target}"

    text, truncated = _fit(items, render, char_budget)
    return RenderedPrompt(text, truncated)


def _join_sources(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def relation_lines(claim_rels: Sequence[RelationTriple], evidence_rels: Sequence[RelationTriple]) -> list[str]:
    lines = [CLAIM_RELATION_LINE.format(head=r.head, tail=r.tail, relation=r.relation) for r in claim_rels]
    lines += [EVIDENCE_RELATION_LINE.format(head=r.head, tail=r.tail, relation=r.relation) for r in evidence_rels]
    return [f"{LIST_INDENT}{i}. {line}" for i, line in enumerate(lines, 1)]


def render_verdict_prompt(
    claim: str,
    context_evidence: Sequence[str] | None,
    infore: str | None,
    claim_rels: Sequence[RelationTriple],
    evidence_rels: Sequence[RelationTriple],
    flags: AblationFlags,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> RenderedPrompt:
    """Assemble the final verification prompt.

    Sections switched off by ``flags`` (or empty) are left out entirely, and
    the instruction line names only the sources that are present. Relation
    lines are numbered from 1, claim relations first.
    """
    claim = claim.strip()
    if not claim:
        raise ValueError("claim must be non-empty")
    question = claim if claim.endswith("?") else claim + "?"

    documents = infore.strip() if (flags.use_infore and infore and infore.strip()) else None
    context = [e.strip() for e in (context_evidence or []) if e.strip()] if flags.use_context else []
    rel_lines = relation_lines(claim_rels, evidence_rels) if flags.use_relations else []
    if documents is None and not context and not rel_lines:
        raise NothingToVerify("no documents, context or relations to verify the claim against")

    sources = []
    if documents is not None:
        sources.append("Documents")
    if context:
        sources.append("Context")
    if rel_lines:
        sources.append("the following relations")
    instruction = VERDICT_INSTRUCTION.format(sources=_join_sources(sources))

    n_doc = 1 if documents is not None else 0

    def render(parts: list[str]) -> str:
        lines = []
        if n_doc:
            lines.append(f"Documents: {parts[0]}")
        if context:
            lines.append("Context: " + "\n".join(parts[n_doc:]))
        lines.append(f"Question: {question}")
        lines.append(instruction)
        lines.extend(rel_lines)
        lines.append(LIST_INDENT + STEP_BY_STEP)
        lines.append(ANSWER_MARKER)
        return "\n".join(lines)

    items = ([documents] if documents is not None else []) + context
    text, truncated = _fit(items, render, char_budget)
    return RenderedPrompt(text, truncated)


# --- verdict parsing --------------------------------------------------------


class ParseStatus(str, enum.Enum):
    CLEAN = "clean"
    SALVAGED = "salvaged"
    DEFAULTED = "defaulted"


@dataclass(frozen=True)
class VerdictOutcome:
    label: bool
    parse_status: ParseStatus
    raw: str
    marker_found: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "parse_status": self.parse_status.value,
            "raw": self.raw,
            "marker_found": self.marker_found,
        }

    @classmethod
    def from_dict(cls, data: dict) -> VerdictOutcome:
        return cls(bool(data["label"]), ParseStatus(data["parse_status"]), data["raw"], bool(data["marker_found"]))


_MARKER = re.compile(r"the\s+answer\s+is", re.IGNORECASE)
_TOKEN = re.compile(r"\b(true|false)\b", re.IGNORECASE)


def _labels_in(text: str) -> set[bool]:
    return {m.group(1).lower() == "true" for m in _TOKEN.finditer(text)}


def parse_verdict(generation: str) -> VerdictOutcome:
    """Read the True/False verdict from a generation.

    The last "the answer is" marker decides. Without a marker, a generation
    that names exactly one of the two labels is salvaged. Anything else
    defaults to False.
    """
    markers = list(_MARKER.finditer(generation))
    if markers:
        found = _labels_in(generation[markers[-1].end():])
        if len(found) == 1:
            return VerdictOutcome(found.pop(), ParseStatus.CLEAN, generation, True)
        return VerdictOutcome(False, ParseStatus.DEFAULTED, generation, True)
    found = _labels_in(generation)
    if len(found) == 1:
        return VerdictOutcome(found.pop(), ParseStatus.SALVAGED, generation, False)
    return VerdictOutcome(False, ParseStatus.DEFAULTED, generation, False)

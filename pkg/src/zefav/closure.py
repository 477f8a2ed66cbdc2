"""Evidence-relation closure seeded from the claim's entities.

Starting from every head and tail mentioned by the claim relations, evidence
relations are selected whenever their head is already a known entity; the
selected relation's tail then joins the known set. Passes repeat until one
full pass changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import MismatchedInputs
from .relation_core import NormalizedEntity, RelationTriple


@dataclass(frozen=True)
class ClosureResult:
    claim_rels: tuple[RelationTriple, ...]
    evidence_rels_new: tuple[RelationTriple, ...]
    hypos: frozenset[NormalizedEntity]
    rounds: int

    def selected_keys(self) -> set[tuple[str, str, str]]:
        return {r.key() for r in self.evidence_rels_new}


@dataclass(frozen=True)
class ClosureStats:
    kept: int
    dropped: int
    rounds: int


def _dedup(rels: Sequence[RelationTriple]) -> list[RelationTriple]:
    seen: set = set()
    out = []
    for rel in rels:
        key = rel.key()
        if key not in seen:
            seen.add(key)
            out.append(rel)
    return out


def find_evidence_relations(
    claim_rels: Sequence[RelationTriple],
    evidence_rels: Sequence[RelationTriple],
    symmetric: bool = False,
) -> ClosureResult:
    """Select the evidence relations reachable from the claim's entities.

    With ``symmetric=True`` a relation is also selected when only its tail is
    known, and its head is then added. The default follows heads only.
    Output keeps first-selection order.
    """
    hypos: set[NormalizedEntity] = set()
    for rel in claim_rels:
        hypos.add(rel.head_key)
        hypos.add(rel.tail_key)

    candidates = _dedup(evidence_rels)
    chosen = [False] * len(candidates)
    selected: list[RelationTriple] = []
    rounds = 0
    while True:
        rounds += 1
        changed = False
        for i, rel in enumerate(candidates):
            if chosen[i]:
                continue
            head, tail = rel.head_key, rel.tail_key
            if head in hypos:
                chosen[i] = True
                selected.append(rel)
                hypos.add(tail)
                changed = True
            elif symmetric and tail in hypos:
                chosen[i] = True
                selected.append(rel)
                hypos.add(head)
                changed = True
        if not changed:
            break

    return ClosureResult(
        claim_rels=tuple(claim_rels),
        evidence_rels_new=tuple(selected),
        hypos=frozenset(hypos),
        rounds=rounds,
    )


def closure_stats(result: ClosureResult, evidence_rels: Sequence[RelationTriple]) -> ClosureStats:
    unique = {rel.key() for rel in evidence_rels}
    kept = result.selected_keys()
    if not kept <= unique:
        raise MismatchedInputs("closure result holds relations absent from the given evidence")
    return ClosureStats(kept=len(kept), dropped=len(unique) - len(kept), rounds=result.rounds)

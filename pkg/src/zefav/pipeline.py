"""Per-claim verification flow and batch execution."""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .closure import find_evidence_relations
from .datasets import ClaimRecord
from .llm_gateway import Gateway, GenerationRequest, Stage
from .prompt_kit import (
    DEFAULT_CHAR_BUDGET,
    AblationFlags,
    FewShotExample,
    VerdictOutcome,
    load_few_shot,
    parse_verdict,
    render_infore_prompt,
    render_relation_prompt,
    render_verdict_prompt,
)
from .relation_core import Origin, RelationCatalog, RelationTriple, builtin_catalog, parse_triples

logger = logging.getLogger(__name__)

# row order of the ablation table: context block first, then (rel, infore) = ✓✓, ✗✓, ✓✗
ABLATION_CONFIGS = tuple(
    AblationFlags(use_relations=rel, use_infore=infore, use_context=ctx)
    for ctx in (True, False)
    for rel, infore in ((True, True), (False, True), (True, False))
)

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Naive split on sentence-final punctuation followed by whitespace."""
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]


@dataclass
class PromptSettings:
    catalog: RelationCatalog = field(default_factory=builtin_catalog)
    few_shot: list[FewShotExample] = field(default_factory=load_few_shot)
    char_budget: int | None = DEFAULT_CHAR_BUDGET
    enforce_catalog: bool = False
    symmetric_closure: bool = False


@dataclass(frozen=True)
class StageParams:
    model_id: str = "default"
    max_tokens: int = 2048
    temperature: float = 0.0
    stop: tuple[str, ...] | None = None

    def request(self, prompt: str, stage: Stage) -> GenerationRequest:
        return GenerationRequest(prompt, self.model_id, self.max_tokens, self.temperature, self.stop, stage)


def _params_for(params: StageParams | Mapping[Stage, StageParams], stage: Stage) -> StageParams:
    if isinstance(params, StageParams):
        return params
    return params.get(stage) or params.get(Stage.VERDICT) or StageParams()


@dataclass
class ClaimRunTrace:
    claim_id: str
    flags: AblationFlags
    claim_triples: list[RelationTriple] = field(default_factory=list)
    evidence_triples_all: list[RelationTriple] = field(default_factory=list)
    evidence_triples_kept: list[RelationTriple] = field(default_factory=list)
    infore_text: str | None = None
    final_prompt: str = ""
    outcome: VerdictOutcome | None = None
    stage_timings: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self, timings: bool = True) -> dict:
        data = {
            "claim_id": self.claim_id,
            "flags": self.flags.to_dict(),
            "claim_triples": [t.to_dict() for t in self.claim_triples],
            "evidence_triples_all": [t.to_dict() for t in self.evidence_triples_all],
            "evidence_triples_kept": [t.to_dict() for t in self.evidence_triples_kept],
            "infore_text": self.infore_text,
            "final_prompt": self.final_prompt,
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "warnings": list(self.warnings),
            "error": self.error,
        }
        if timings:
            data["stage_timings"] = dict(self.stage_timings)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> ClaimRunTrace:
        triples = lambda key: [RelationTriple.from_dict(t) for t in data.get(key, [])]  # noqa: E731
        return cls(
            claim_id=data["claim_id"],
            flags=AblationFlags.from_dict(data["flags"]),
            claim_triples=triples("claim_triples"),
            evidence_triples_all=triples("evidence_triples_all"),
            evidence_triples_kept=triples("evidence_triples_kept"),
            infore_text=data.get("infore_text"),
            final_prompt=data.get("final_prompt", ""),
            outcome=VerdictOutcome.from_dict(data["outcome"]) if data.get("outcome") else None,
            stage_timings=dict(data.get("stage_timings", {})),
            warnings=list(data.get("warnings", [])),
            error=data.get("error"),
        )


def _elapsed_ms(start: float) -> int:
    return int(round((time.perf_counter() - start) * 1000))


def extract_relations(
    record: ClaimRecord,
    gateway: Gateway,
    prompts: PromptSettings,
    params: StageParams | Mapping[Stage, StageParams] = StageParams(),
) -> tuple[list[RelationTriple], list[RelationTriple], list[str]]:
    """Relation extraction for the claim (one call) and each evidence sentence (one call each)."""
    p = _params_for(params, Stage.RELATION_EXTRACTION)
    warnings: list[str] = []

    def run(sentence: str, origin: Origin, label: str) -> list[RelationTriple]:
        prompt = render_relation_prompt(sentence, prompts.catalog)
        text = gateway.generate(p.request(prompt, Stage.RELATION_EXTRACTION)).text
        triples, problems = parse_triples(text, origin, prompts.catalog, prompts.enforce_catalog)
        warnings.extend(f"{label}: {w}" for w in problems)
        return triples

    claim_triples = run(record.claim, Origin.CLAIM, "claim")
    evidence_triples: list[RelationTriple] = []
    seen: set = set()
    n = 0
    for item in record.evidence:
        for sentence in split_sentences(item):
            n += 1
            for t in run(sentence, Origin.EVIDENCE, f"evidence sentence {n}"):
                if t.key() not in seen:
                    seen.add(t.key())
                    evidence_triples.append(t)
    return claim_triples, evidence_triples, warnings


def reorganize_evidence(
    evidence: Sequence[str],
    gateway: Gateway,
    prompts: PromptSettings,
    params: StageParams | Mapping[Stage, StageParams] = StageParams(),
) -> tuple[str, bool]:
    """One InfoRE generation over the whole evidence set; returns (text, truncated)."""
    rendered = render_infore_prompt(evidence, prompts.few_shot, prompts.char_budget)
    p = _params_for(params, Stage.INFORE)
    text = gateway.generate(p.request(rendered.text, Stage.INFORE)).text
    return text.strip(), rendered.truncated


def verify_claim(
    record: ClaimRecord,
    flags: AblationFlags,
    gateway: Gateway,
    prompts: PromptSettings | None = None,
    params: StageParams | Mapping[Stage, StageParams] = StageParams(),
) -> ClaimRunTrace:
    prompts = prompts or PromptSettings()
    trace = ClaimRunTrace(record.id, flags)

    if flags.use_relations:
        start = time.perf_counter()
        claim_t, evidence_t, warns = extract_relations(record, gateway, prompts, params)
        trace.claim_triples, trace.evidence_triples_all = claim_t, evidence_t
        trace.warnings.extend(warns)
        trace.stage_timings[Stage.RELATION_EXTRACTION.value] = _elapsed_ms(start)

        start = time.perf_counter()
        closure = find_evidence_relations(claim_t, evidence_t, symmetric=prompts.symmetric_closure)
        trace.evidence_triples_kept = list(closure.evidence_rels_new)
        trace.stage_timings["closure"] = _elapsed_ms(start)

    if flags.use_infore:
        if record.evidence:
            start = time.perf_counter()
            trace.infore_text, truncated = reorganize_evidence(record.evidence, gateway, prompts, params)
            if truncated:
                trace.warnings.append("infore: evidence truncated to fit the character budget")
            trace.stage_timings[Stage.INFORE.value] = _elapsed_ms(start)
        else:
            trace.warnings.append("infore: no evidence to reorganize")

    start = time.perf_counter()
    rendered = render_verdict_prompt(
        record.claim,
        record.evidence,
        trace.infore_text,
        trace.claim_triples,
        trace.evidence_triples_kept,
        flags,
        prompts.char_budget,
    )
    if rendered.truncated:
        trace.warnings.append("verdict: evidence truncated to fit the character budget")
    trace.final_prompt = rendered.text
    p = _params_for(params, Stage.VERDICT)
    generation = gateway.generate(p.request(rendered.text, Stage.VERDICT)).text
    trace.outcome = parse_verdict(generation)
    trace.stage_timings[Stage.VERDICT.value] = _elapsed_ms(start)
    return trace


def run_batch(
    records: Sequence[ClaimRecord],
    flags: AblationFlags,
    gateway: Gateway,
    prompts: PromptSettings | None = None,
    params: StageParams | Mapping[Stage, StageParams] = StageParams(),
    parallelism: int = 4,
) -> list[ClaimRunTrace]:
    """Verify every record, up to ``parallelism`` at a time.

    Traces come back in input order. A claim that raises gets a trace with
    ``error`` set instead of aborting the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    prompts = prompts or PromptSettings()

    def one(record: ClaimRecord) -> ClaimRunTrace:
        try:
            return verify_claim(record, flags, gateway, prompts, params)
        except Exception as exc:  # isolate per-claim failures
            logger.warning("claim %s failed: %s: %s", record.id, type(exc).__name__, exc)
            return ClaimRunTrace(record.id, flags, error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, records))


def write_traces(traces: Iterable[ClaimRunTrace], path: str | Path, timings: bool = False) -> Path:
    """JSON Lines, one trace per claim. Timings are off by default so that
    replayed runs produce byte-identical files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(timings=timings), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def load_traces(path: str | Path) -> list[ClaimRunTrace]:
    return [
        ClaimRunTrace.from_dict(json.loads(line))
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]

#!/usr/bin/env python3
"""
One claim through the whole pipeline, offline
=============================================

A rule-based toy model stands in for the LLM so every stage runs
without a server: relation extraction, closure, InfoRE and the verdict.
"""

from zefav.datasets import ClaimRecord
from zefav.llm_gateway import FunctionBackend, Gateway
from zefav.pipeline import PromptSettings, verify_claim
from zefav.prompt_kit import AblationFlags
from zefav.relation_core import RelationCatalog
from zefav.testing import toy_responder

record = ClaimRecord(
    id="demo-1",
    claim="Marie Curie was born in the capital of Poland.",
    gold=True,
    evidence=(
        "Marie Curie was born in Warsaw. Warsaw is the capital of Poland.",
        "Berlin is the capital of Germany.",
    ),
)

backend = FunctionBackend(toy_responder)
gateway = Gateway(backend)
prompts = PromptSettings(catalog=RelationCatalog.from_names(["place of birth", "capital of"]))

trace = verify_claim(record, AblationFlags(), gateway, prompts)

print("claim relations:   ", [t.render() for t in trace.claim_triples])
print("evidence relations:", [t.render() for t in trace.evidence_triples_all])
print("kept by closure:   ", [t.render() for t in trace.evidence_triples_kept])
print()
print(trace.final_prompt)
print()
print("verdict:", trace.outcome.label, f"({trace.outcome.parse_status.value})")
print("model calls:", backend.calls)

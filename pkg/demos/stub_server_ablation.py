#!/usr/bin/env python3
"""
The six-configuration ablation against a local HTTP endpoint
============================================================

StubServer speaks the OpenAI chat-completions protocol on localhost and
counts calls per stage. A shared response cache means relation extraction
and InfoRE are generated once even though six configurations run.
"""

import tempfile
from pathlib import Path

from zefav.datasets import FEVEROUS_MAPPING, Source, load_split
from zefav.evalkit import ablation_grid, score
from zefav.llm_gateway import Gateway, HttpBackend, ResponseCache
from zefav.pipeline import ABLATION_CONFIGS, PromptSettings, run_batch
from zefav.testing import StubServer

claims = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "claims.jsonl"
records = load_split(claims, FEVEROUS_MAPPING, Source.FEVEROUS_S)
prompts = PromptSettings()

with tempfile.TemporaryDirectory() as tmp, StubServer() as stub:
    gateway = Gateway(HttpBackend(stub.base_url, retries=0), cache=ResponseCache(tmp))
    reports = []
    for flags in ABLATION_CONFIGS:
        traces = run_batch(records, flags, gateway, prompts, parallelism=4)
        reports.append(score(traces, records, dataset="feverous-s", flags=flags))
        print(f"{flags.label:<22} calls so far: {dict((k.value, v) for k, v in stub.calls.items())}")

print()
print(ablation_grid(reports).render())

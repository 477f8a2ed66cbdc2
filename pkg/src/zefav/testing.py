"""Offline stand-ins for a model endpoint.

``StubServer`` speaks the OpenAI-compatible HTTP protocol on localhost and
records call counts per stage and peak concurrency. ``toy_responder`` is a
rule-based fake model that produces plausible output for all three stages so
the pipeline can run end to end without a real LLM.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .llm_gateway import Stage
from .prompt_kit import ANSWER_MARKER, INFORE_INSTRUCTION


def classify_prompt(prompt: str) -> Stage:
    if prompt.startswith("### Instruction:"):
        return Stage.RELATION_EXTRACTION
    if prompt.startswith(INFORE_INSTRUCTION):
        return Stage.INFORE
    return Stage.VERDICT


class StubServer:
    """Threaded localhost server for ``/v1/chat/completions`` and ``/v1/completions``.

    ``fail`` decides per request whether to answer with an HTTP error; it gets
    the prompt and returns a status code or ``None``.
    """

    def __init__(
        self,
        responder: Callable[[str], str] | None = None,
        delay: float = 0.0,
        fail: Callable[[str], int | None] | None = None,
    ):
        self.responder = responder or toy_responder
        self.delay = delay
        self.fail = fail
        self.calls: Counter = Counter()
        self.failures = 0
        self.in_flight = 0
        self.peak = 0
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def reset_counts(self) -> None:
        with self._lock:
            self.calls.clear()
            self.failures = 0
            self.peak = 0
            self.requests.clear()

    def start(self) -> StubServer:
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                chat = self.path.endswith("/chat/completions")
                prompt = body["messages"][-1]["content"] if chat else body.get("prompt", "")
                with stub._lock:
                    stub.in_flight += 1
                    stub.peak = max(stub.peak, stub.in_flight)
                    stub.requests.append(body)
                try:
                    if stub.delay:
                        time.sleep(stub.delay)
                    status = stub.fail(prompt) if stub.fail else None
                    if status:
                        with stub._lock:
                            stub.failures += 1
                        self._send(status, {"error": {"message": "injected failure"}})
                        return
                    with stub._lock:
                        stub.calls[classify_prompt(prompt)] += 1
                    text = stub.responder(prompt)
                    choice = {"index": 0, "finish_reason": "stop"}
                    if chat:
                        choice["message"] = {"role": "assistant", "content": text}
                    else:
                        choice["text"] = text
                    self._send(200, {"object": "chat.completion", "choices": [choice]})
                finally:
                    with stub._lock:
                        stub.in_flight -= 1

            def _send(self, status: int, payload: dict) -> None:
                raw = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> StubServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# --- toy model --------------------------------------------------------------

_CAP_RUN = re.compile(r"(?:[A-Z0-9][\w'.-]*)(?:\s+(?:of\s+|the\s+|de\s+)?[A-Z0-9][\w'.-]*)*")
_NEGATIONS = re.compile(r"\b(not|never|no)\b", re.IGNORECASE)


def _entities(text: str) -> list[str]:
    return [m.group(0).rstrip(".") for m in _CAP_RUN.finditer(text)]


def toy_triple(sentence: str) -> str | None:
    """Head = first capitalized run, tail = last one, relation = words between."""
    sentence = sentence.strip().rstrip(".!?")
    runs = list(_CAP_RUN.finditer(sentence))
    if len(runs) < 2:
        return None
    head, tail = runs[0], runs[-1]
    relation = " ".join(sentence[head.end():tail.start()].split()).lower()
    if not relation:
        return None
    return f"({head.group(0)}, {relation}, {tail.group(0)})"


def _between(text: str, start: str, end: str) -> str:
    i = text.rfind(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j < 0 else text[i:j]


def _style(claim: str) -> int:
    return int(hashlib.sha256(claim.encode("utf-8")).hexdigest(), 16) % 5


def toy_responder(prompt: str) -> str:
    stage = classify_prompt(prompt)
    if stage is Stage.RELATION_EXTRACTION:
        sentence = _between(prompt, "Sentence: ", " \n### Response:")
        triple = toy_triple(sentence)
        return triple if triple else "No relation found."
    if stage is Stage.INFORE:
        evidence = _between(prompt, "### The evidence: ", "\nThe hierarchical structure:")
        sentences = [s.strip() for s in re.split(r"(?<=[.!?])\s+", evidence) if s.strip()]
        root = (_entities(sentences[0]) or ["Evidence"])[0] if sentences else "Evidence"
        return "\n".join([root] + [f"    {s}" for s in sentences])

    claim = _between(prompt, "Question: ", "\n").rstrip("?")
    support = prompt.split("Question: ")[0] + "\n".join(
        line for line in prompt.splitlines() if line.rstrip().endswith("**")
    )
    wanted = [e for e in _entities(claim) if e.lower() not in {"the", "a"}]
    found = all(e.lower() in support.lower() for e in wanted)
    verdict = found and not _NEGATIONS.search(claim)
    word = "True" if verdict else "False"
    style = _style(claim)
    if style == 0:
        # no answer marker: exercised by the salvage path of the verdict parser
        return f"Checking the entities against the evidence, the claim is {word.lower()}."
    return f"Entities checked: {', '.join(wanted) or 'none'}.\n{ANSWER_MARKER} {word}"

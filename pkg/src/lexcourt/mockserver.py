"""Deterministic in-process stand-ins for the embedding and chat services.

Every response is a pure function of the request payload, so pipelines built
against these servers reproduce byte-identically across runs and machines.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .lexical import tokenize

_PARA_BLOCK_RE = re.compile(r"\[(\d+)\]\s*(.*?)(?=\n\n\[\d+\]|\Z)", re.DOTALL)
_CLAIM_LINE_RE = re.compile(r"\[(\d+)\]\s*\((plaintiff|defendant)\)")


def deterministic_vector(model: str, text: str, dim: int) -> list[float]:
    """A unit vector derived from the model name and text via SHA-256."""
    raw: list[float] = []
    counter = 0
    while len(raw) < dim:
        digest = hashlib.sha256(f"{model}\0{text}\0{counter}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 3, 4):
            if len(raw) >= dim:
                break
            n = int.from_bytes(digest[i:i + 4], "big")
            raw.append((n / 2.0**32) * 2.0 - 1.0)
        counter += 1
    norm = math.sqrt(sum(x * x for x in raw))
    if norm == 0.0:  # unreachable in practice, but keeps the contract total
        raw[0] = 1.0
        norm = 1.0
    return [x / norm for x in raw]


def _entailment_reply(model: str, prompt: str) -> str:
    """Pick the paragraph(s) with the highest token overlap against the query."""
    try:
        query = prompt.split("Query (Decision of the New Case):", 1)[1]
        query = query.split("Paragraphs from the Noticed Case:", 1)[0]
        section = prompt.split("Paragraphs from the Noticed Case:", 1)[1]
    except IndexError:
        return "I cannot find the paragraphs."
    section = section.split("Which paragraph(s)", 1)[0]
    q_tokens = set(tokenize(query))
    scored = []
    for match in _PARA_BLOCK_RE.finditer(section):
        idx = int(match.group(1))
        overlap = len(q_tokens & set(tokenize(match.group(2))))
        scored.append((-overlap, idx))
    if not scored:
        return "I cannot find the paragraphs."
    scored.sort()
    best = scored[0][1]
    # models named *-b volunteer a second paragraph when one comes close
    if model.endswith("-b") and len(scored) > 1 and -scored[1][0] >= 1:
        second = scored[1][1]
        return (
            f"Both are essential here. Paragraphs {best} and {second} contain the "
            "reasoning that supports the decision."
        )
    return f"The reasoning that supports the decision appears in paragraph {best}."


def _summary_reply(prompt: str) -> str:
    body = prompt.split("Legal case:", 1)[-1]
    body = body.split("Generated summary:", 1)[0]
    tokens = tokenize(body)[:40]
    return "This case concerns " + " ".join(tokens) + "."


def _cluster_reply(model: str, prompt: str) -> str:
    claims = _CLAIM_LINE_RE.findall(prompt.split("Claims:", 1)[-1])
    plaintiff = [int(i) for i, side in claims if side == "plaintiff"]
    defendant = [int(i) for i, side in claims if side == "defendant"]
    if len(plaintiff) != len(defendant):
        side = "plaintiff" if len(plaintiff) > len(defendant) else "defendant"
    else:
        parity = hashlib.sha256(f"{model}\0{prompt}".encode("utf-8")).digest()[-1] % 2
        side = "plaintiff" if parity == 0 else "defendant"
    accepted = plaintiff if side == "plaintiff" else defendant
    listed = ", ".join(str(i) for i in accepted) if accepted else "none"
    return f"Winner: {side}. Accepted claims: {listed}."


def _yesno_reply(model: str, prompt: str) -> str:
    parity = hashlib.sha256(f"{model}\0{prompt}".encode("utf-8")).digest()[-1] % 2
    verdict = "TRUE" if parity == 0 else "FALSE"
    return (
        "Considering the articles step by step, the stated conditions "
        f"{'are' if verdict == 'TRUE' else 'are not'} satisfied.\n"
        f"CONCLUSION: {verdict}"
    )


def chat_reply(model: str, messages: list[dict]) -> str:
    """Dispatch on the rendered prompt's landmarks; unknown prompts get yes/no."""
    user = ""
    for message in messages:
        if message.get("role") == "user":
            user = str(message.get("content", ""))
    if "Paragraphs from the Noticed Case:" in user:
        return _entailment_reply(model, user)
    if user.startswith("Summarize the following Federal Court decision"):
        return _summary_reply(user)
    if "Winner:" in user and "Claims:" in user:
        return _cluster_reply(model, user)
    return _yesno_reply(model, user)


class MockServer:
    """One HTTP server exposing /v1/embeddings and /v1/chat/completions.

    ``fail_first`` makes the first n requests return 503, for retry tests.
    Use as a context manager; ``embeddings_url``/``chat_url`` give endpoints.
    """

    def __init__(self, dim: int = 8, fail_first: int = 0, port: int = 0):
        self.dim = dim
        self._fail_remaining = fail_first
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args) -> None:  # keep test output clean
                pass

            def do_POST(self) -> None:
                with outer._lock:
                    if outer._fail_remaining > 0:
                        outer._fail_remaining -= 1
                        self._send(503, {"error": "temporarily unavailable"})
                        return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    payload = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "bad JSON"})
                    return
                if self.path == "/v1/embeddings":
                    self._embeddings(payload)
                elif self.path == "/v1/chat/completions":
                    self._chat(payload)
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def _embeddings(self, payload: dict) -> None:
                model = payload.get("model", "")
                texts = payload.get("input", [])
                if isinstance(texts, str):
                    texts = [texts]
                data = [
                    {
                        "object": "embedding",
                        "index": i,
                        "embedding": deterministic_vector(model, text, outer.dim),
                    }
                    for i, text in enumerate(texts)
                ]
                self._send(200, {"object": "list", "model": model, "data": data})

            def _chat(self, payload: dict) -> None:
                model = payload.get("model", "")
                content = chat_reply(model, payload.get("messages", []))
                self._send(
                    200,
                    {
                        "id": "mock",
                        "object": "chat.completion",
                        "model": model,
                        "choices": [
                            {
                                "index": 0,
                                "message": {"role": "assistant", "content": content},
                                "finish_reason": "stop",
                            }
                        ],
                    },
                )

            def _send(self, status: int, body: dict) -> None:
                encoded = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(encoded)))
                self.end_headers()
                self.wfile.write(encoded)

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def embeddings_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/v1/embeddings"

    @property
    def chat_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/v1/chat/completions"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

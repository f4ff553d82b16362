"""Language-model client adapters.

A client offers two calls:

* ``choose(request) -> str`` returns the id picked from ``request.candidate_ids``;
* ``complete(prompt) -> str`` returns free text.

Clients may raise anything; callers treat every exception, a timeout or an
unusable reply as a reason to fall back to deterministic behaviour.

The HTTP adapter speaks the common chat-completions JSON shape and is only
built when ``GUIDED_PORTRAITS_LLM_URL`` is set.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.request
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Callable, Protocol

ENV_URL = "GUIDED_PORTRAITS_LLM_URL"
ENV_KEY = "GUIDED_PORTRAITS_LLM_KEY"
ENV_MODEL = "GUIDED_PORTRAITS_LLM_MODEL"
ENV_TIMEOUT = "GUIDED_PORTRAITS_LLM_TIMEOUT"

DEFAULT_TIMEOUT = 20.0


class TransportError(RuntimeError):
    """The client could not obtain a reply."""


@dataclass(frozen=True)
class SelectionRequest:
    system: str
    user: str
    candidate_ids: tuple[str, ...]


class LLMClient(Protocol):
    def choose(self, request: SelectionRequest) -> str: ...

    def complete(self, prompt: str) -> str: ...


class StubClient:
    """Canned replies; records every request it sees."""

    def __init__(self, choice: str = "", completion: str = ""):
        self.choice = choice
        self.completion = completion
        self.requests: list[SelectionRequest] = []
        self.prompts: list[str] = []

    def choose(self, request: SelectionRequest) -> str:
        self.requests.append(request)
        return self.choice

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        return self.completion


class FailingClient:
    """Raises on every call, standing in for an unreachable endpoint."""

    def __init__(self, message: str = "endpoint unreachable"):
        self.message = message
        self.calls = 0

    def choose(self, request: SelectionRequest) -> str:
        self.calls += 1
        raise TransportError(self.message)

    def complete(self, prompt: str) -> str:
        self.calls += 1
        raise TransportError(self.message)


class HTTPChatClient:
    """Minimal chat-completions client over ``urllib``."""

    def __init__(self, url: str, api_key: str | None = None, model: str = "gpt-3.5-turbo",
                 timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def _chat(self, system: str | None, user: str) -> str:
        messages = ([{"role": "system", "content": system}] if system else []) + [{"role": "user", "content": user}]
        body = json.dumps({"model": self.model, "messages": messages, "temperature": 0}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            return payload["choices"][0]["message"]["content"]
        except Exception as exc:  # network, HTTP status, malformed JSON
            raise TransportError(str(exc)) from exc

    def choose(self, request: SelectionRequest) -> str:
        return self._chat(request.system, request.user)

    def complete(self, prompt: str) -> str:
        return self._chat(None, prompt)


def client_from_env(environ=None) -> HTTPChatClient | None:
    """HTTP client configured from the environment, or ``None`` when unset."""
    env = os.environ if environ is None else environ
    url = env.get(ENV_URL, "").strip()
    if not url:
        return None
    timeout = float(env.get(ENV_TIMEOUT, DEFAULT_TIMEOUT))
    return HTTPChatClient(url, env.get(ENV_KEY) or None, env.get(ENV_MODEL, "gpt-3.5-turbo"), timeout)


class SerializedCall:
    """Run client calls one at a time, each bounded by ``timeout`` seconds.

    Clients are not assumed reentrant, so a lock is held for the duration of
    each call.  A timed-out call keeps the lock until it returns; callers
    queued behind it will time out too, which triggers their fallback.
    """

    def __init__(self, timeout: float | None = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self._lock = threading.Lock()

    def __call__(self, fn: Callable[[], str]) -> str:
        def locked():
            with self._lock:
                return fn()

        if self.timeout is None:
            return locked()
        pool = ThreadPoolExecutor(max_workers=1)
        try:
            fut = pool.submit(locked)
            try:
                return fut.result(timeout=self.timeout)
            except FutureTimeout:
                raise TransportError(f"no reply within {self.timeout:g}s") from None
        finally:
            pool.shutdown(wait=False)

"""HTTP client for an external LLM judge.

Wire format: POST ``{"model", "prompt", "temperature"}`` as JSON; the generated
text is read from the response JSON at a dot path such as ``choices.0.text``.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from typing import Any, Sequence

import httpx

from ..env import EnvState, entity_token
from .prompts import MalformedResponseError, OutOfRangeScoreError, render_prompt
from .reward import JudgeVerdict, parse_judge_response

log = logging.getLogger(__name__)

API_KEY_ENV = "SLATE_JUDGE_API_KEY"


class JudgeTransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class RemoteJudgeConfig:
    endpoint: str
    model: str = "judge"
    temperature: float = 0.0
    retries: int = 2
    timeout: float = 30.0
    response_path: str = "choices.0.text"
    max_concurrency: int = 4
    strict: bool = True


_semaphores: dict[str, threading.BoundedSemaphore] = {}
_semaphores_lock = threading.Lock()


def _endpoint_semaphore(config: RemoteJudgeConfig) -> threading.BoundedSemaphore:
    with _semaphores_lock:
        sem = _semaphores.get(config.endpoint)
        if sem is None:
            sem = _semaphores[config.endpoint] = threading.BoundedSemaphore(max(1, config.max_concurrency))
        return sem


def extract_path(payload: Any, path: str) -> Any:
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise MalformedResponseError(f"response has no element {part!r} on path {path!r}") from None
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise MalformedResponseError(f"response has no field {part!r} on path {path!r}")
    return node


def remote_score(
    config: RemoteJudgeConfig,
    kind: str,
    fields: dict[str, str],
    client: httpx.Client | None = None,
) -> JudgeVerdict:
    return remote_score_raw(config, kind, fields, client)[0]


def remote_score_raw(
    config: RemoteJudgeConfig,
    kind: str,
    fields: dict[str, str],
    client: httpx.Client | None = None,
) -> tuple[JudgeVerdict, str]:
    """Score one prompt remotely; returns the verdict and the raw generated text.

    Transport failures and unparsable responses are retried ``config.retries``
    times before the last error is raised.
    """
    prompt = render_prompt(kind, fields)
    body = {"model": config.model, "prompt": prompt, "temperature": config.temperature}
    headers = {}
    if os.environ.get(API_KEY_ENV):
        headers["Authorization"] = f"Bearer {os.environ[API_KEY_ENV]}"
    owns_client = client is None
    client = client or httpx.Client(timeout=config.timeout)
    last_error: Exception | None = None
    try:
        for attempt in range(config.retries + 1):
            try:
                with _endpoint_semaphore(config):
                    resp = client.post(config.endpoint, json=body, headers=headers)
                resp.raise_for_status()
                text = extract_path(resp.json(), config.response_path)
                if not isinstance(text, str):
                    raise MalformedResponseError(f"value at {config.response_path!r} is not text")
                return parse_judge_response(text, kind), text
            except (httpx.HTTPError, ValueError) as exc:
                if isinstance(exc, (MalformedResponseError, OutOfRangeScoreError)):
                    last_error = exc
                elif isinstance(exc, httpx.HTTPError):
                    last_error = JudgeTransportError(f"{type(exc).__name__}: {exc}")
                else:  # json decoding
                    last_error = MalformedResponseError(f"response is not JSON: {exc}")
                log.debug("judge attempt %d failed: %s", attempt + 1, last_error)
    finally:
        if owns_client:
            client.close()
    assert last_error is not None
    raise last_error


def render_context(state: EnvState, history: Sequence[str]) -> str:
    return "\n".join([f"Question: {state.task.question}", *history])


class RemoteJudge:
    """Judge backed by ``remote_score``; non-strict mode degrades failures to score 0."""

    def __init__(self, config: RemoteJudgeConfig, client: httpx.Client | None = None):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)

    def _score(self, kind: str, fields: dict[str, str]) -> JudgeVerdict:
        try:
            return remote_score(self.config, kind, fields, self.client)
        except (JudgeTransportError, MalformedResponseError, OutOfRangeScoreError) as exc:
            if self.config.strict:
                raise
            log.warning("judge failure on %s prompt, scoring 0: %s", kind, exc)
            return JudgeVerdict(0, f"degraded: {exc}", kind)

    def think(self, state: EnvState, context: str, think_tokens: Sequence[str]) -> JudgeVerdict:
        return self._score("think", {"context": context, "thinking": " ".join(think_tokens)})

    def query(self, state: EnvState, context: str, think_tokens: Sequence[str], query_tokens: Sequence[str]) -> JudgeVerdict:
        return self._score(
            "query",
            {"context": context, "thinking": " ".join(think_tokens), "query": " ".join(query_tokens)},
        )

    def answer(self, state: EnvState, context: str, answer_tokens: Sequence[str]) -> JudgeVerdict:
        return self._score(
            "answer",
            {
                "context": context,
                "ground_truth": entity_token(state.task.gold_answer),
                "predicted_answer": " ".join(answer_tokens),
            },
        )

    def close(self) -> None:
        self.client.close()

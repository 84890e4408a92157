"""Ground-truth judge for the chain world.

The three rubrics are operationalized against the known chain: good thinking
names the entity whose outgoing link is needed next, a good query retrieves
that link, and a redundant query re-asks an already resolved hop.
"""

from __future__ import annotations

from typing import Sequence

from ..env import EnvState, Task, entity_token, exact_match, parse_entity
from .reward import JudgeVerdict


def _named(tokens: Sequence[str]) -> set[int]:
    return {e for e in (parse_entity(t) for t in tokens) if e is not None}


def oracle_score_think(state: EnvState, think_tokens: Sequence[str]) -> JudgeVerdict:
    named = _named(think_tokens)
    if state.latest in named:
        return JudgeVerdict(1, f"identifies the open information need {entity_token(state.latest)}", "think")
    if named & state.revealed:
        return JudgeVerdict(0, "mentions known entities but not the open need", "think")
    return JudgeVerdict(-1, "does not build on the context", "think")


def oracle_score_query(state: EnvState, query_tokens: Sequence[str]) -> JudgeVerdict:
    named = _named(query_tokens)
    if state.latest in named and not state.complete:
        return JudgeVerdict(1, "retrieves the next link", "query")
    # once the chain is complete the context already holds the answer
    resolved = set(state.task.chain[: state.depth + 1]) if state.complete else set(state.task.chain[: state.depth])
    if named & resolved or state.complete:
        return JudgeVerdict(-1, "redundant with information already in the context", "query")
    return JudgeVerdict(0, "retrieves nothing new", "query")


def oracle_score_answer(answer_tokens: Sequence[str], task: Task) -> JudgeVerdict:
    if exact_match(answer_tokens, task.gold_answer):
        return JudgeVerdict(1, "matches the ground truth", "answer")
    if task.hops >= 1 and exact_match(answer_tokens, task.chain[-2]):
        return JudgeVerdict(0, "stops one hop short", "answer")
    return JudgeVerdict(-1, "wrong entity", "answer")


class OracleJudge:
    def think(self, state: EnvState, context: str, think_tokens: Sequence[str]) -> JudgeVerdict:
        return oracle_score_think(state, think_tokens)

    def query(self, state: EnvState, context: str, think_tokens: Sequence[str], query_tokens: Sequence[str]) -> JudgeVerdict:
        return oracle_score_query(state, query_tokens)

    def answer(self, state: EnvState, context: str, answer_tokens: Sequence[str]) -> JudgeVerdict:
        return oracle_score_answer(answer_tokens, state.task)

"""Synthetic chain-search world.

A task is a chain of distinct entities ``e_0 -> e_1 -> ... -> e_T``.  The
question names ``e_0`` and asks for ``e_T``; every hop has to be discovered
by issuing a query that names the most recently revealed entity.  The mock
search engine returns the fact document for that hop (plus seeded noise),
so step quality and answer correctness are decidable without any model.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

TOP_K = 3


class InvalidParameterError(ValueError):
    pass


def entity_token(index: int) -> str:
    return f"e{index}"


def parse_entity(token: str) -> int | None:
    tok = token.strip().lower()
    if len(tok) > 1 and tok[0] == "e" and tok[1:].isdigit():
        return int(tok[1:])
    return None


@dataclass(frozen=True)
class Task:
    id: int
    chain: tuple[int, ...]
    question: str
    gold_answer: int
    hops: int

    def __post_init__(self):
        if len(set(self.chain)) != len(self.chain):
            raise InvalidParameterError("chain entities must be distinct")
        if self.gold_answer != self.chain[-1] or self.hops != len(self.chain) - 1:
            raise InvalidParameterError("inconsistent task")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "chain": [entity_token(e) for e in self.chain],
            "hops": self.hops,
            "gold_answer": entity_token(self.gold_answer),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Task":
        chain = tuple(parse_entity(t) for t in data["chain"])
        return cls(
            id=int(data["id"]),
            chain=chain,
            question=render_question(chain[0], len(chain) - 1),
            gold_answer=parse_entity(data["gold_answer"]),
            hops=int(data["hops"]),
        )


@dataclass(frozen=True)
class Document:
    kind: str  # "fact" | "noise"
    text: str
    link: tuple[int, int] | None = None

    def tokens(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class EnvState:
    task: Task
    revealed: frozenset[int] = field(default_factory=frozenset)
    step_index: int = 1

    @property
    def depth(self) -> int:
        """Index of the deepest revealed chain entity."""
        return max(i for i, e in enumerate(self.task.chain) if e in self.revealed)

    @property
    def latest(self) -> int:
        return self.task.chain[self.depth]

    @property
    def complete(self) -> bool:
        return self.depth == self.task.hops


def render_question(start: int, hops: int) -> str:
    return f"Starting from {entity_token(start)}, which entity is reached after {hops} hops?"


def generate_task(seed: int, hops: int, vocab_size: int) -> Task:
    if hops < 1:
        raise InvalidParameterError(f"hops must be >= 1, got {hops}")
    if vocab_size < hops + 4:
        raise InvalidParameterError(
            f"vocab_size must be >= hops + 4 = {hops + 4}, got {vocab_size}"
        )
    # str seeds are hashed with sha512 by CPython, so this is platform stable
    rng = random.Random(f"task:{seed}:{hops}:{vocab_size}")
    chain = tuple(rng.sample(range(vocab_size), hops + 1))
    return Task(
        id=seed,
        chain=chain,
        question=render_question(chain[0], hops),
        gold_answer=chain[-1],
        hops=hops,
    )


def initial_state(task: Task) -> EnvState:
    return EnvState(task=task, revealed=frozenset({task.chain[0]}), step_index=1)


def _noise_rng(state: EnvState, query: Sequence[str]) -> random.Random:
    key = json.dumps([state.task.id, list(state.task.chain), state.step_index, list(query)])
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _noise_document(rng: random.Random, vocab_size: int) -> Document:
    a, b = rng.sample(range(vocab_size), 2)
    return Document(
        kind="noise",
        text=f"{entity_token(a)} appears in an unrelated passage about {entity_token(b)} .",
    )


def search(state: EnvState, query: Sequence[str], top_k: int = TOP_K, vocab_size: int | None = None) -> list[Document]:
    """Return ``top_k`` documents for ``query``.

    When the query names a revealed chain entity ``e_i`` with ``i < T`` the
    fact ``e_i -> e_{i+1}`` is placed first (the deepest such entity wins if
    several are named).  Everything else is deterministic noise.
    """
    if not query:
        raise InvalidParameterError("query must be non-empty")
    chain = state.task.chain
    vocab = vocab_size if vocab_size is not None else max(chain) + 1
    named = {parse_entity(tok) for tok in query}
    hit = None
    for i in range(state.task.hops):
        if chain[i] in state.revealed and chain[i] in named:
            hit = i
    docs: list[Document] = []
    if hit is not None:
        src, dst = chain[hit], chain[hit + 1]
        docs.append(
            Document(
                kind="fact",
                text=f"{entity_token(src)} links to {entity_token(dst)} .",
                link=(src, dst),
            )
        )
    rng = _noise_rng(state, query)
    while len(docs) < top_k:
        docs.append(_noise_document(rng, max(vocab, 2)))
    return docs


def reveal(state: EnvState, documents: Iterable[Document]) -> EnvState:
    targets = {d.link[1] for d in documents if d.kind == "fact" and d.link is not None}
    return replace(state, revealed=state.revealed | targets, step_index=state.step_index + 1)


def normalize_answer(answer: Sequence[str] | str) -> str:
    text = answer if isinstance(answer, str) else " ".join(answer)
    return text.strip().lower()


def exact_match(answer: Sequence[str] | str, gold: int | str) -> int:
    gold_tok = entity_token(gold) if isinstance(gold, int) else gold
    return int(normalize_answer(answer) == normalize_answer(gold_tok))


def optimal_queries(task: Task) -> list[list[str]]:
    """The unique query sequence that reveals the whole chain."""
    return [[entity_token(e)] for e in task.chain[:-1]]


def save_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    Path(path).write_text(json.dumps([t.to_json() for t in tasks], indent=2) + "\n")


def load_tasks(path: str | Path) -> list[Task]:
    return [Task.from_json(d) for d in json.loads(Path(path).read_text())]

"""Linear-softmax token policy over a closed vocabulary.

Every generated token is drawn from ``softmax(W[f] / temperature)`` restricted
to the tokens the tag grammar allows at that position, where ``f`` is a
one-hot context feature built from (latest revealed entity, chain-complete
flag, slot in the action block).  Grammar tags that the decoder injects are
deterministic, carry log-probability 0 and are masked out of the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import EnvState, entity_token

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
SEARCH_OPEN, SEARCH_CLOSE = "<search>", "</search>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
CONTROL_TOKENS = (THINK_OPEN, THINK_CLOSE, SEARCH_OPEN, SEARCH_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
DEFAULT_FILLERS = ("find", "the", "next", "link")
MAX_BLOCK_TOKENS = 4


class UnknownTokenError(KeyError):
    pass


@dataclass(frozen=True)
class PrefixSummary:
    latest: int
    complete: bool

    @classmethod
    def from_state(cls, state: EnvState) -> "PrefixSummary":
        return cls(latest=state.latest, complete=state.complete)


@dataclass
class ActionBlock:
    kind: str  # "search" or "answer"
    think_tokens: tuple[str, ...]
    payload_tokens: tuple[str, ...]
    token_logprobs_old: np.ndarray
    mask: tuple[int, ...]
    temperature: float = 1.0
    forced: bool = False

    @property
    def tokens(self) -> list[str]:
        open_tag, close_tag = (SEARCH_OPEN, SEARCH_CLOSE) if self.kind == "search" else (ANSWER_OPEN, ANSWER_CLOSE)
        return [THINK_OPEN, *self.think_tokens, THINK_CLOSE, open_tag, *self.payload_tokens, close_tag]

    @property
    def n_generated(self) -> int:
        return int(sum(self.mask))

    def text(self) -> str:
        return " ".join(self.tokens)


def block_mask(n_think: int, n_payload: int, forced: bool = False) -> tuple[int, ...]:
    return (0, *([1] * n_think), 0, 0 if forced else 1, *([1] * n_payload), 0)


def _log_softmax(w: np.ndarray, temperature: float) -> np.ndarray:
    z = w / temperature
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


class PolicyModel:
    def __init__(
        self,
        n_entities: int,
        think_len: int = 1,
        payload_len: int = 1,
        fillers: Sequence[str] = DEFAULT_FILLERS,
        weights: np.ndarray | None = None,
    ):
        if not (1 <= think_len <= MAX_BLOCK_TOKENS and 1 <= payload_len <= MAX_BLOCK_TOKENS):
            raise ValueError(f"block lengths must lie in [1, {MAX_BLOCK_TOKENS}]")
        self.n_entities = n_entities
        self.think_len = think_len
        self.payload_len = payload_len
        self.fillers = tuple(fillers)
        self.vocabulary = [*CONTROL_TOKENS, *(entity_token(i) for i in range(n_entities)), *self.fillers]
        self.token_index = {tok: i for i, tok in enumerate(self.vocabulary)}
        if len(self.token_index) != len(self.vocabulary):
            raise ValueError("duplicate tokens in vocabulary")
        self.content_ids = np.arange(len(CONTROL_TOKENS), len(self.vocabulary))
        self.decision_ids = np.array([self.token_index[SEARCH_OPEN], self.token_index[ANSWER_OPEN]])
        self.slots = (
            [f"think{i}" for i in range(think_len)]
            + ["decide"]
            + [f"search{i}" for i in range(payload_len)]
            + [f"answer{i}" for i in range(payload_len)]
        )
        self.slot_index = {s: i for i, s in enumerate(self.slots)}
        self.n_features = n_entities * 2 * len(self.slots)
        shape = (self.n_features, len(self.vocabulary))
        if weights is None:
            weights = np.zeros(shape)
        if weights.shape != shape:
            raise ValueError(f"weights shape {weights.shape} != {shape}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self._frozen_cache: dict | None = None

    def config(self) -> dict:
        return {
            "n_entities": self.n_entities,
            "think_len": self.think_len,
            "payload_len": self.payload_len,
            "fillers": list(self.fillers),
        }

    def copy(self) -> "PolicyModel":
        return PolicyModel(**self.config(), weights=self.weights.copy())

    def frozen_copy(self) -> "PolicyModel":
        """Read-only snapshot (old or reference policy) that memoizes its distributions."""
        snap = self.copy()
        snap.weights.flags.writeable = False
        snap._frozen_cache = {}
        return snap

    @property
    def frozen(self) -> bool:
        return self._frozen_cache is not None

    def feature(self, summary: PrefixSummary, slot: str) -> int:
        return (summary.latest * 2 + int(summary.complete)) * len(self.slots) + self.slot_index[slot]

    def allowed(self, slot: str) -> np.ndarray:
        return self.decision_ids if slot == "decide" else self.content_ids

    def log_softmax(self, feature: int, allowed: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        if self._frozen_cache is not None:
            key = (feature, len(allowed), temperature)
            hit = self._frozen_cache.get(key)
            if hit is None:
                hit = self._frozen_cache[key] = _log_softmax(self.weights[feature, allowed], temperature)
            return hit
        return _log_softmax(self.weights[feature, allowed], temperature)

    def context_logprobs(self, summary: PrefixSummary, slot: str, temperature: float = 1.0) -> np.ndarray:
        return self.log_softmax(self.feature(summary, slot), self.allowed(slot), temperature)

    def positions(self, block: ActionBlock) -> list[tuple[int, str | None]]:
        """(token id, slot) for each token of ``block``; slot is None for injected tags."""
        out: list[tuple[int, str | None]] = []
        try:
            out.append((self.token_index[THINK_OPEN], None))
            out += [(self.token_index[t], f"think{i}") for i, t in enumerate(block.think_tokens)]
            out.append((self.token_index[THINK_CLOSE], None))
            toks = block.tokens
            out.append((self.token_index[toks[len(block.think_tokens) + 2]], None if block.forced else "decide"))
            out += [(self.token_index[t], f"{block.kind}{i}") for i, t in enumerate(block.payload_tokens)]
            out.append((self.token_index[toks[-1]], None))
        except KeyError as exc:
            raise UnknownTokenError(exc.args[0]) from None
        if len(block.think_tokens) != self.think_len or len(block.payload_tokens) != self.payload_len:
            raise ValueError("block does not match the model's block lengths")
        return out


def chain_following_policy(n_entities: int, margin: float = 20.0, **kwargs) -> PolicyModel:
    """Policy whose mode at every slot is the chain-following action.

    Think and payload slots favour the latest revealed entity; the decision
    favours searching until the chain is complete and answering afterwards.
    ``margin`` is the logit advantage of the favoured token.
    """
    model = PolicyModel(n_entities, **kwargs)
    search_id, answer_id = model.token_index[SEARCH_OPEN], model.token_index[ANSWER_OPEN]
    for latest in range(n_entities):
        ent = model.token_index[entity_token(latest)]
        for complete in (False, True):
            summary = PrefixSummary(latest, complete)
            for slot in model.slots:
                f = model.feature(summary, slot)
                if slot == "decide":
                    model.weights[f, answer_id if complete else search_id] = margin
                else:
                    model.weights[f, ent] = margin
    return model


def _draw(logp: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(np.exp(logp))
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(logp) - 1)


def sample_action(
    model: PolicyModel,
    summary: PrefixSummary,
    rng: np.random.Generator,
    temperature: float = 1.0,
    force_answer: bool = False,
) -> ActionBlock:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    vocab = model.vocabulary
    logps: list[float] = [0.0]
    think = []
    for i in range(model.think_len):
        slot = f"think{i}"
        lp = model.context_logprobs(summary, slot, temperature)
        j = _draw(lp, rng)
        think.append(vocab[model.content_ids[j]])
        logps.append(float(lp[j]))
    logps.append(0.0)
    if force_answer:
        kind = "answer"
        logps.append(0.0)
    else:
        lp = model.context_logprobs(summary, "decide", temperature)
        j = _draw(lp, rng)
        kind = "search" if model.decision_ids[j] == model.token_index[SEARCH_OPEN] else "answer"
        logps.append(float(lp[j]))
    payload = []
    for i in range(model.payload_len):
        lp = model.context_logprobs(summary, f"{kind}{i}", temperature)
        j = _draw(lp, rng)
        payload.append(vocab[model.content_ids[j]])
        logps.append(float(lp[j]))
    logps.append(0.0)
    return ActionBlock(
        kind=kind,
        think_tokens=tuple(think),
        payload_tokens=tuple(payload),
        token_logprobs_old=np.array(logps),
        mask=block_mask(model.think_len, model.payload_len, force_answer),
        temperature=temperature,
        forced=force_answer,
    )


@dataclass(frozen=True)
class PositionEval:
    pos: int
    feature: int
    allowed: np.ndarray
    logp: np.ndarray  # over ``allowed``
    hit: int  # index of the emitted token within ``allowed``
    generated: bool  # mask flag


def evaluate_block(
    model: PolicyModel,
    summary: PrefixSummary,
    block: ActionBlock,
    temperature: float | None = None,
) -> list[PositionEval]:
    """Distributions at every sampled position of ``block`` (injected tags skipped)."""
    temp = block.temperature if temperature is None else temperature
    out = []
    for pos, (tok, slot) in enumerate(model.positions(block)):
        if slot is None:
            continue
        allowed = model.allowed(slot)
        hit = np.flatnonzero(allowed == tok)
        if hit.size == 0:
            raise UnknownTokenError(f"{model.vocabulary[tok]!r} not allowed at slot {slot}")
        f = model.feature(summary, slot)
        out.append(PositionEval(pos, f, allowed, model.log_softmax(f, allowed, temp), int(hit[0]), bool(block.mask[pos])))
    return out


def log_prob(model: PolicyModel, summary: PrefixSummary, block: ActionBlock, temperature: float | None = None) -> np.ndarray:
    out = np.zeros(len(block.tokens))
    for ev in evaluate_block(model, summary, block, temperature):
        out[ev.pos] = ev.logp[ev.hit]
    return out


def accumulate_grad_log_prob(
    grad: np.ndarray,
    model: PolicyModel,
    summary: PrefixSummary,
    block: ActionBlock,
    coefs: np.ndarray | float = 1.0,
    evals: list[PositionEval] | None = None,
) -> None:
    """Add ``sum_l coefs[l] * mask[l] * d log pi(y_l) / dW`` into ``grad`` in place."""
    temp = block.temperature
    coefs = np.broadcast_to(np.asarray(coefs, dtype=np.float64), (len(block.mask),))
    for ev in evals if evals is not None else evaluate_block(model, summary, block):
        c = coefs[ev.pos]
        if not ev.generated or c == 0.0:
            continue
        g = -np.exp(ev.logp)
        g[ev.hit] += 1.0
        grad[ev.feature, ev.allowed] += (c / temp) * g


def grad_log_prob(model: PolicyModel, summary: PrefixSummary, block: ActionBlock) -> np.ndarray:
    grad = np.zeros_like(model.weights)
    accumulate_grad_log_prob(grad, model, summary, block)
    return grad


def _check_compatible(model: PolicyModel, reference: PolicyModel) -> None:
    if model.vocabulary != reference.vocabulary or model.slots != reference.slots:
        raise ValueError("model and reference do not share vocabulary and feature map")


def _kl_contexts(model: PolicyModel, summary: PrefixSummary, block: ActionBlock | None) -> list[tuple[int, np.ndarray]]:
    if block is None:
        slots = list(model.slots)
    else:
        slots = [slot for (_, slot), m in zip(model.positions(block), block.mask) if slot is not None and m]
    return [(model.feature(summary, slot), model.allowed(slot)) for slot in slots]


def _context_kl(lp: np.ndarray, lq: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(p || q) and its gradient with respect to the logits of p."""
    p = np.exp(lp)
    kl = float(np.dot(p, lp - lq))
    return max(kl, 0.0), p * (lp - lq - kl)


def kl_to_reference(
    model: PolicyModel,
    reference: PolicyModel,
    summary: PrefixSummary,
    block: ActionBlock | None = None,
) -> float:
    """Exact categorical KL(model || reference) summed over generated positions.

    With ``block`` the sum runs over that block's masked-in positions;
    without it, over every slot of a block.
    """
    _check_compatible(model, reference)
    return sum(
        _context_kl(model.log_softmax(f, allowed), reference.log_softmax(f, allowed))[0]
        for f, allowed in _kl_contexts(model, summary, block)
    )


def accumulate_grad_kl(
    grad: np.ndarray,
    model: PolicyModel,
    reference: PolicyModel,
    summary: PrefixSummary,
    block: ActionBlock | None,
    scale: float,
) -> float:
    """Add ``scale * dKL/dW`` into ``grad``; returns the KL value."""
    total = 0.0
    for f, allowed in _kl_contexts(model, summary, block):
        kl, g = _context_kl(model.log_softmax(f, allowed), reference.log_softmax(f, allowed))
        grad[f, allowed] += scale * g
        total += kl
    return total


def accumulate_block_kl(
    grad: np.ndarray | None,
    evals: list[PositionEval],
    reference: PolicyModel,
    scale: float,
) -> float:
    """Same as ``accumulate_grad_kl`` but reusing distributions from ``evaluate_block``."""
    total = 0.0
    for ev in evals:
        if not ev.generated:
            continue
        kl, g = _context_kl(ev.logp, reference.log_softmax(ev.feature, ev.allowed))
        if grad is not None:
            grad[ev.feature, ev.allowed] += scale * g
        total += kl
    return total


def save_checkpoint(model: PolicyModel, path: str | Path) -> None:
    n_tok = model.weights.shape[1]
    triples = [
        [f, t, float(model.weights[f, t])]
        for f in range(model.n_features)
        for t in range(n_tok)
    ]
    payload = {"config": model.config(), "vocabulary": model.vocabulary, "weights": triples}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> PolicyModel:
    data = json.loads(Path(path).read_text())
    model = PolicyModel(**data["config"])
    if model.vocabulary != data["vocabulary"]:
        raise ValueError("checkpoint vocabulary does not match its configuration")
    for f, t, w in data["weights"]:
        model.weights[f, t] = w
    return model

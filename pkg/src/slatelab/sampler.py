"""Rollouts: truncated step-level groups and the full-trajectory GRPO baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import EnvState, Task, exact_match, initial_state, reveal, search
from .judge.reward import JudgeVerdict, RewardBreakdown, composite_reward
from .policy import ActionBlock, PolicyModel, PrefixSummary, sample_action


@dataclass(frozen=True)
class RolloutConfig:
    k: int = 5
    budget: int = 4
    lam: float = 0.1
    eta: float = 0.7
    strategy: str = "reward_weighted"  # or "best_of_k"
    eps_adv: float = 1e-6
    std: str = "population"  # or "sample"
    temperature: float = 1.0
    reward: str = "dense"  # dense | em_final | em_continuation
    reinforce_k1: bool = True
    top_k: int = 3


@dataclass
class Prefix:
    """The shared context tau_{<t}: environment state plus rendered history."""

    state: EnvState
    history: tuple[str, ...] = ()

    @property
    def summary(self) -> PrefixSummary:
        return PrefixSummary.from_state(self.state)

    def text(self) -> str:
        return "\n".join([f"Question: {self.state.task.question}", *self.history])


@dataclass
class StepGroup:
    prefix: Prefix
    step_index: int
    candidates: list[ActionBlock]
    rewards: np.ndarray | None = None
    breakdowns: list[RewardBreakdown] = field(default_factory=list)
    advantages: np.ndarray | None = None
    selected: int | None = None

    @property
    def k(self) -> int:
        return len(self.candidates)

    @property
    def summary(self) -> PrefixSummary:
        return self.prefix.summary

    @property
    def tokens_generated(self) -> int:
        return sum(b.n_generated for b in self.candidates)

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "candidates": [
                {
                    "tokens": b.tokens,
                    "reward": self.breakdowns[j].to_json() if self.breakdowns else None,
                    "advantage": None if self.advantages is None else float(self.advantages[j]),
                }
                for j, b in enumerate(self.candidates)
            ],
            "selected": self.selected,
        }


@dataclass
class TrajectoryRecord:
    task_id: int
    groups: list[StepGroup]
    answer: ActionBlock
    answer_prefix: Prefix
    steps_used: int
    tokens_generated: int
    em: int
    forced_answer: bool = False
    total_reward: float = 0.0
    advantage: float | None = None
    search_calls: int = 0

    def log_records(self, **extra) -> list[dict]:
        return [
            {
                **extra,
                "task_id": self.task_id,
                **g.to_json(),
                "em": self.em,
                "tokens_generated": self.tokens_generated,
            }
            for g in self.groups
        ]


def group_advantages(rewards: Sequence[float], eps_adv: float = 1e-6, std: str = "population") -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    centered = r - r.mean()
    ddof = 1 if std == "sample" and len(r) > 1 else 0
    sigma = float(r.std(ddof=ddof))
    if sigma == 0.0:
        return np.zeros_like(r)
    return centered / (sigma + eps_adv)


def selection_probabilities(advantages: Sequence[float], eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValueError("eta must be > 0")
    z = np.asarray(advantages, dtype=np.float64) / eta
    z = np.exp(z - z.max())
    return z / z.sum()


def select_next(
    advantages: Sequence[float],
    strategy: str,
    eta: float,
    rng: np.random.Generator,
) -> int:
    """Index of the candidate that extends the trajectory (0-based)."""
    if strategy == "best_of_k":
        return int(np.argmax(advantages))
    if strategy == "reward_weighted":
        p = selection_probabilities(advantages, eta)
        idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return min(idx, len(p) - 1)
    raise ValueError(f"unknown selection strategy {strategy!r}")


def sample_step_group(
    policy: PolicyModel,
    prefix: Prefix,
    k: int,
    temperature: float,
    rng: np.random.Generator,
    step_index: int | None = None,
    force_answer: bool = False,
) -> StepGroup:
    if k < 1:
        raise ValueError("k must be >= 1")
    summary = prefix.summary
    blocks = [sample_action(policy, summary, rng, temperature, force_answer) for _ in range(k)]
    return StepGroup(prefix=prefix, step_index=step_index or prefix.state.step_index, candidates=blocks)


def judge_block(judge, prefix: Prefix, block: ActionBlock) -> tuple[JudgeVerdict, JudgeVerdict]:
    context = prefix.text()
    think = judge.think(prefix.state, context, block.think_tokens)
    if block.kind == "answer":
        return think, judge.answer(prefix.state, context, block.payload_tokens)
    return think, judge.query(prefix.state, context, block.think_tokens, block.payload_tokens)


def dense_reward(judge, prefix: Prefix, block: ActionBlock, t: int, cfg: RolloutConfig) -> RewardBreakdown:
    think, second = judge_block(judge, prefix, block)
    return composite_reward(think, second, block.kind == "answer", min(t, cfg.budget), cfg.budget, cfg.lam)


def em_final_reward(prefix: Prefix, block: ActionBlock) -> RewardBreakdown:
    if block.kind == "answer":
        em = exact_match(block.payload_tokens, prefix.state.task.gold_answer)
        return RewardBreakdown(0, None, em, 0.0, float(em))
    return RewardBreakdown(0, 0, None, 0.0, 0.0)


def advance(prefix: Prefix, block: ActionBlock, cfg: RolloutConfig, vocab_size: int) -> Prefix:
    """Append a selected search action and its retrieved documents."""
    docs = search(prefix.state, block.payload_tokens, cfg.top_k, vocab_size)
    info = "<information> " + " ".join(d.text for d in docs) + " </information>"
    return Prefix(state=reveal(prefix.state, docs), history=(*prefix.history, block.text(), info))


def _continuation(
    task: Task,
    policy: PolicyModel,
    prefix: Prefix,
    block: ActionBlock,
    t: int,
    cfg: RolloutConfig,
    rng: np.random.Generator,
) -> tuple[int, int]:
    """EM and generated-token count of a single-sample completion after ``block``."""
    if block.kind == "answer":
        return exact_match(block.payload_tokens, task.gold_answer), 0
    rec = rollout_single(task, policy, None, cfg, rng, start=advance(prefix, block, cfg, policy.n_entities), t0=t + 1)
    return rec.em, rec.tokens_generated


def score_group(
    group: StepGroup,
    task: Task,
    policy: PolicyModel,
    judge,
    cfg: RolloutConfig,
    rng: np.random.Generator,
) -> int:
    """Fill rewards and advantages; returns extra tokens spent on continuations."""
    extra = 0
    t = group.step_index
    if cfg.reward == "dense":
        group.breakdowns = [dense_reward(judge, group.prefix, b, t, cfg) for b in group.candidates]
    elif cfg.reward == "em_final":
        group.breakdowns = [em_final_reward(group.prefix, b) for b in group.candidates]
    elif cfg.reward == "em_continuation":
        group.breakdowns = []
        for b in group.candidates:
            em, spent = _continuation(task, policy, group.prefix, b, t, cfg, rng)
            extra += spent
            group.breakdowns.append(RewardBreakdown(0, None if b.kind == "answer" else 0, em if b.kind == "answer" else None, 0.0, float(em)))
    else:
        raise ValueError(f"unknown reward mode {cfg.reward!r}")
    group.rewards = np.array([bd.total for bd in group.breakdowns])
    if group.k == 1 and cfg.reinforce_k1:
        group.advantages = group.rewards.copy()
    else:
        group.advantages = group_advantages(group.rewards, cfg.eps_adv, cfg.std)
    return extra


def rollout_truncated(
    task: Task,
    policy: PolicyModel,
    judge,
    cfg: RolloutConfig,
    rng: np.random.Generator,
    on_group: Callable[[StepGroup], None] | None = None,
) -> TrajectoryRecord:
    """Build one trajectory by branching k ways at every step and keeping one branch.

    ``on_group`` runs after a group's advantages are known and before the
    next action is selected; the trainer hooks its per-group update there.
    """
    if cfg.budget < 1:
        raise ValueError("budget must be >= 1")
    prefix = Prefix(initial_state(task))
    groups: list[StepGroup] = []
    tokens = 0
    searches = 0
    answer: ActionBlock | None = None
    answer_prefix = prefix
    for t in range(1, cfg.budget + 1):
        group = sample_step_group(policy, prefix, cfg.k, cfg.temperature, rng, step_index=t)
        tokens += group.tokens_generated
        tokens += score_group(group, task, policy, judge, cfg, rng)
        if on_group is not None:
            on_group(group)
        j = select_next(group.advantages, cfg.strategy, cfg.eta, rng)
        group.selected = j
        groups.append(group)
        chosen = group.candidates[j]
        if chosen.kind == "answer":
            answer, answer_prefix = chosen, prefix
            break
        prefix = advance(prefix, chosen, cfg, policy.n_entities)
        searches += 1
    forced = answer is None
    if forced:
        answer = sample_action(policy, prefix.summary, rng, cfg.temperature, force_answer=True)
        answer_prefix = prefix
        tokens += answer.n_generated
    return TrajectoryRecord(
        task_id=task.id,
        groups=groups,
        answer=answer,
        answer_prefix=answer_prefix,
        steps_used=len(groups),
        tokens_generated=tokens,
        em=exact_match(answer.payload_tokens, task.gold_answer),
        forced_answer=forced,
        search_calls=searches,
    )


def rollout_single(
    task: Task,
    policy: PolicyModel,
    judge,
    cfg: RolloutConfig,
    rng: np.random.Generator,
    start: Prefix | None = None,
    t0: int = 1,
    temperature: float | None = None,
) -> TrajectoryRecord:
    """One on-policy trajectory (no branching).  With ``judge`` set, every step is scored."""
    temp = cfg.temperature if temperature is None else temperature
    prefix = start or Prefix(initial_state(task))
    groups: list[StepGroup] = []
    tokens = 0
    total = 0.0
    searches = 0
    answer = None
    answer_prefix = prefix
    for t in range(t0, cfg.budget + 1):
        block = sample_action(policy, prefix.summary, rng, temp)
        group = StepGroup(prefix=prefix, step_index=t, candidates=[block], selected=0)
        if judge is not None:
            group.breakdowns = [dense_reward(judge, prefix, block, t, cfg)]
            total += group.breakdowns[0].total
        groups.append(group)
        tokens += block.n_generated
        if block.kind == "answer":
            answer, answer_prefix = block, prefix
            break
        prefix = advance(prefix, block, cfg, policy.n_entities)
        searches += 1
    forced = answer is None
    if forced:
        answer = sample_action(policy, prefix.summary, rng, temp, force_answer=True)
        answer_prefix = prefix
        tokens += answer.n_generated
        group = StepGroup(prefix=prefix, step_index=cfg.budget, candidates=[answer], selected=0)
        if judge is not None:
            group.breakdowns = [dense_reward(judge, prefix, answer, cfg.budget, cfg)]
            total += group.breakdowns[0].total
        groups.append(group)
    return TrajectoryRecord(
        task_id=task.id,
        groups=groups,
        answer=answer,
        answer_prefix=answer_prefix,
        steps_used=min(len(groups), cfg.budget),
        tokens_generated=tokens,
        em=exact_match(answer.payload_tokens, task.gold_answer),
        forced_answer=forced,
        total_reward=total,
        search_calls=searches,
    )


def rollout_full_group(
    task: Task,
    policy: PolicyModel,
    judge,
    G: int,
    reward_mode: str,
    cfg: RolloutConfig,
    rng: np.random.Generator,
) -> list[TrajectoryRecord]:
    """G independent complete rollouts with trajectory-level group advantages.

    ``judge_dense_sum`` scores a trajectory by the sum of its step rewards;
    ``em_sparse`` by the exact match of its final answer alone.
    """
    if G < 2:
        raise ValueError("G must be >= 2")
    if reward_mode not in ("judge_dense_sum", "em_sparse"):
        raise ValueError(f"unknown reward mode {reward_mode!r}")
    dense = reward_mode == "judge_dense_sum"
    records = [rollout_single(task, policy, judge if dense else None, cfg, rng) for _ in range(G)]
    for rec in records:
        if not dense:
            rec.total_reward = float(rec.em)
    adv = group_advantages([r.total_reward for r in records], cfg.eps_adv, cfg.std)
    for rec, a in zip(records, adv):
        rec.advantage = float(a)
        for g in rec.groups:
            g.advantages = np.array([a])
            if not dense:
                g.breakdowns = [em_final_reward(g.prefix, g.candidates[0])]
    return records

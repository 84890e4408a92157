from __future__ import annotations

from dataclasses import dataclass

from .prompts import parse_score

TERNARY = (-1, 0, 1)


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    explanation: str = ""
    kind: str = "think"

    def __post_init__(self):
        if self.score not in TERNARY:
            raise ValueError(f"score must be one of {TERNARY}, got {self.score}")


@dataclass(frozen=True)
class RewardBreakdown:
    think: int
    query: int | None
    answer: int | None
    bonus: float
    total: float

    def to_json(self) -> dict:
        return {"think": self.think, "query": self.query, "answer": self.answer, "bonus": self.bonus, "total": self.total}


def parse_judge_response(text: str, kind: str = "think") -> JudgeVerdict:
    score, explanation = parse_score(text)
    return JudgeVerdict(score=score, explanation=explanation, kind=kind)


def composite_reward(
    think: JudgeVerdict,
    second: JudgeVerdict,
    is_answer: bool,
    t: int,
    budget: int,
    lam: float,
) -> RewardBreakdown:
    """Step reward: think + query for searches, think + answer + early-exit bonus for answers."""
    if not 1 <= t <= budget:
        raise ValueError(f"step {t} outside [1, {budget}]")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if is_answer:
        bonus = lam * (budget - t) / budget
        return RewardBreakdown(think.score, None, second.score, bonus, think.score + second.score + bonus)
    return RewardBreakdown(think.score, second.score, None, 0.0, float(think.score + second.score))

"""Masked clipped surrogate objectives, their gradients, and the ascent step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .policy import (
    ActionBlock,
    PolicyModel,
    PrefixSummary,
    _check_compatible,
    accumulate_block_kl,
    accumulate_grad_log_prob,
    evaluate_block,
    kl_to_reference,
)
from .sampler import StepGroup, TrajectoryRecord


class EmptyMaskError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class UpdateConfig:
    clip_eps: float = 0.2
    kl_beta: float = 0.001
    learning_rate: float = 1e-2
    old_policy_refresh: str = "per_group"  # or "per_batch"

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.old_policy_refresh not in ("per_group", "per_batch"):
            raise ValueError(f"unknown old_policy_refresh {self.old_policy_refresh!r}")


def _clipped_terms(new_logprobs, old_logprobs, advantage: float, mask, clip_eps: float):
    new = np.asarray(new_logprobs, dtype=np.float64)
    old = np.asarray(old_logprobs, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if new.shape != old.shape or new.shape != m.shape:
        raise ValueError("log-probabilities and mask must be aligned")
    n = int(m.sum())
    if n == 0:
        raise EmptyMaskError("no policy-generated tokens under the mask")
    ratio = np.exp(new - old)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * advantage
    return m, n, ratio, unclipped, clipped


def step_objective(new_logprobs, old_logprobs, advantage: float, mask, clip_eps: float) -> float:
    """Token-mean of ``min(rho * A, clip(rho) * A)`` over masked-in tokens."""
    m, n, _, unclipped, clipped = _clipped_terms(new_logprobs, old_logprobs, advantage, mask, clip_eps)
    return float(np.minimum(unclipped, clipped)[m].sum() / n)


def step_objective_coefs(new_logprobs, old_logprobs, advantage: float, mask, clip_eps: float) -> np.ndarray:
    """d step_objective / d new_logprob per token (zero where the clip branch is active)."""
    m, n, ratio, unclipped, clipped = _clipped_terms(new_logprobs, old_logprobs, advantage, mask, clip_eps)
    active = m & (unclipped <= clipped)
    return np.where(active, ratio * advantage / n, 0.0)


@dataclass
class Unit:
    """Tokens pooled into one masked mean; several blocks for a full trajectory."""

    weight: float
    advantage: float
    blocks: list[tuple[PrefixSummary, ActionBlock]]


def step_units(groups: Iterable[StepGroup]) -> list[Unit]:
    units = []
    for g in groups:
        for j, block in enumerate(g.candidates):
            units.append(Unit(1.0 / g.k, float(g.advantages[j]), [(g.summary, block)]))
    return units


def trajectory_units(records: Sequence[TrajectoryRecord]) -> list[Unit]:
    G = len(records)
    return [
        Unit(1.0 / G, float(rec.advantage), [(g.summary, g.candidates[0]) for g in rec.groups])
        for rec in records
    ]


def surrogate(
    units: Sequence[Unit],
    policy: PolicyModel,
    reference: PolicyModel | None,
    cfg: UpdateConfig,
    with_grad: bool = True,
    stats: dict | None = None,
) -> tuple[float, np.ndarray | None]:
    """``sum_u w_u J_u - beta * sum_u w_u KL_u`` and optionally its gradient.

    When ``stats`` is given, the per-block KL values are appended to
    ``stats["kl"]`` for logging.
    """
    value = 0.0
    grad = np.zeros_like(policy.weights) if with_grad else None
    use_kl = reference is not None and cfg.kl_beta > 0
    if use_kl:
        _check_compatible(policy, reference)
    for unit in units:
        evals = [evaluate_block(policy, s, b) for s, b in unit.blocks]
        new_parts = []
        for (_, b), ev in zip(unit.blocks, evals):
            lp = np.zeros(len(b.mask))
            for e in ev:
                lp[e.pos] = e.logp[e.hit]
            new_parts.append(lp)
        new = np.concatenate(new_parts)
        old = np.concatenate([b.token_logprobs_old for _, b in unit.blocks])
        mask = np.concatenate([np.asarray(b.mask) for _, b in unit.blocks])
        value += unit.weight * step_objective(new, old, unit.advantage, mask, cfg.clip_eps)
        if with_grad:
            coefs = unit.weight * step_objective_coefs(new, old, unit.advantage, mask, cfg.clip_eps)
            start = 0
            for (s, b), ev in zip(unit.blocks, evals):
                n = len(b.mask)
                accumulate_grad_log_prob(grad, policy, s, b, coefs[start : start + n], evals=ev)
                start += n
        if use_kl:
            for (s, b), ev in zip(unit.blocks, evals):
                if b.temperature != 1.0:
                    ev = evaluate_block(policy, s, b, temperature=1.0)
                kl = accumulate_block_kl(grad, ev, reference, -cfg.kl_beta * unit.weight)
                value -= cfg.kl_beta * unit.weight * kl
                if stats is not None:
                    stats.setdefault("kl", []).append(kl)
    return value, grad


def total_objective(
    groups: Sequence[StepGroup],
    policy: PolicyModel,
    reference: PolicyModel | None,
    cfg: UpdateConfig,
) -> float:
    """Sum over steps of the candidate-mean step objective minus the KL penalty."""
    return surrogate(step_units(groups), policy, reference, cfg, with_grad=False)[0]


def total_objective_grad(
    groups: Sequence[StepGroup],
    policy: PolicyModel,
    reference: PolicyModel | None,
    cfg: UpdateConfig,
) -> np.ndarray:
    return surrogate(step_units(groups), policy, reference, cfg)[1]


def kl_penalty(groups: Sequence[StepGroup], policy: PolicyModel, reference: PolicyModel) -> float:
    return sum(
        kl_to_reference(policy, reference, g.summary, b) / g.k for g in groups for b in g.candidates
    )


def apply_update(policy: PolicyModel, gradient: np.ndarray, learning_rate: float) -> PolicyModel:
    """Gradient ascent step, in place; returns ``policy``."""
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    policy.weights += learning_rate * gradient
    return policy

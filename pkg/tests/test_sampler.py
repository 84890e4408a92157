import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slatelab.env import generate_task, initial_state
from slatelab.judge import JudgeVerdict, OracleJudge, composite_reward
from slatelab.policy import PolicyModel, chain_following_policy
from slatelab.sampler import (
    Prefix,
    RolloutConfig,
    group_advantages,
    rollout_full_group,
    rollout_single,
    rollout_truncated,
    sample_step_group,
    select_next,
    selection_probabilities,
)


def test_advantages_worked_example():
    adv = group_advantages([2, 0, -2], eps_adv=1e-6)
    std = math.sqrt(8 / 3)
    expected = [2 / (std + 1e-6), 0.0, -2 / (std + 1e-6)]
    assert np.allclose(adv, expected, atol=1e-12)
    assert np.round(adv, 5).tolist() == [1.22474, 0.0, -1.22474]


def test_advantages_constant_group():
    assert group_advantages([1, 1, 1]).tolist() == [0, 0, 0]


def test_advantages_sample_std_option():
    assert np.allclose(group_advantages([1, 0], eps_adv=1e-12, std="sample"), [1 / math.sqrt(2), -1 / math.sqrt(2)])


@given(st.lists(st.integers(-2, 2), min_size=2, max_size=8), st.floats(0.1, 5), st.floats(-5, 5))
def test_advantages_affine_invariant_and_zero_mean(r, a, b):
    r = np.array(r, dtype=float)
    adv = group_advantages(r, eps_adv=1e-300)
    if r.std() > 0:
        assert abs(adv.sum()) <= len(r) * 1e-9
        assert np.allclose(group_advantages(a * r + b, eps_adv=1e-300), adv, atol=1e-9)


def test_selection_probabilities_worked_example():
    p = selection_probabilities([1.0, 0.0, -1.0], 0.7)
    z = [math.exp(x / 0.7) for x in (1.0, 0.0, -1.0)]
    assert np.allclose(p, [x / sum(z) for x in z], atol=1e-15)
    # the quoted 0.1847 is truncated, the exact value is 0.184761...
    assert np.allclose(p, [0.7710, 0.1847, 0.0443], atol=1e-4)


def test_selection_limits():
    assert np.allclose(selection_probabilities([0.3, 0.3, 0.3], 0.7), 1 / 3)
    assert selection_probabilities([1.0, 0.0, 0.9], 1e-3)[0] > 1 - 1e-12


def test_best_of_k_lowest_index_tie_break():
    rng = np.random.default_rng(0)
    assert select_next([0.5, 1.0, 1.0], "best_of_k", 0.7, rng) == 1
    with pytest.raises(ValueError):
        select_next([0.0], "greedy", 0.7, rng)


def test_reward_weighted_frequencies():
    rng = np.random.default_rng(1)
    counts = np.bincount([select_next([1.0, 0.0, -1.0], "reward_weighted", 0.7, rng) for _ in range(20000)], minlength=3)
    assert np.allclose(counts / 20000, [0.7710, 0.1847, 0.0443], atol=0.01)


def test_step_group_shares_prefix_and_is_reproducible():
    task = generate_task(0, 3, 8)
    prefix = Prefix(initial_state(task))
    pol = PolicyModel(8)
    g1 = sample_step_group(pol, prefix, 5, 1.0, np.random.default_rng(3))
    g2 = sample_step_group(pol, prefix, 5, 1.0, np.random.default_rng(3))
    assert [b.tokens for b in g1.candidates] == [b.tokens for b in g2.candidates]
    assert g1.k == 5 and g1.prefix is prefix
    assert len({g1.prefix.text() for _ in g1.candidates}) == 1
    assert sample_step_group(pol, prefix, 1, 1.0, np.random.default_rng(0)).k == 1
    with pytest.raises(ValueError):
        sample_step_group(pol, prefix, 0, 1.0, np.random.default_rng(0))


def test_pinned_policy_one_hop():
    task = generate_task(5, 1, 8)
    rec = rollout_truncated(task, chain_following_policy(8, margin=50.0), OracleJudge(), RolloutConfig(), np.random.default_rng(0))
    assert rec.steps_used == 2 and rec.em == 1 and rec.search_calls == 1
    assert [g.candidates[g.selected].kind for g in rec.groups] == ["search", "answer"]


def test_budget_one_forces_answer():
    task = generate_task(5, 2, 8)
    pol = chain_following_policy(8, margin=50.0)
    rec = rollout_truncated(task, pol, OracleJudge(), RolloutConfig(budget=1), np.random.default_rng(0))
    assert len(rec.groups) == 1 and rec.forced_answer and rec.answer.kind == "answer"


def test_answer_at_first_step_skips_search():
    pol = PolicyModel(8)
    for f in range(pol.n_features):
        pol.weights[f, pol.decision_ids[1]] = 50.0
    rec = rollout_truncated(generate_task(1, 2, 8), pol, OracleJudge(), RolloutConfig(), np.random.default_rng(0))
    assert rec.steps_used == 1 and rec.search_calls == 0 and not rec.forced_answer


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 6), st.integers(1, 4))
def test_rollout_terminates_with_one_answer(seed, k, budget):
    task = generate_task(seed, 3, 8)
    cfg = RolloutConfig(k=k, budget=budget)
    rec = rollout_truncated(task, PolicyModel(8), OracleJudge(), cfg, np.random.default_rng(seed))
    assert 1 <= len(rec.groups) <= budget
    assert rec.answer.kind == "answer"
    chosen = [g.candidates[g.selected].kind for g in rec.groups]
    assert chosen.count("answer") == (0 if rec.forced_answer else 1)
    assert "answer" not in chosen[:-1]
    expected = sum(g.tokens_generated for g in rec.groups) + (rec.answer.n_generated if rec.forced_answer else 0)
    assert rec.tokens_generated == expected
    for g in rec.groups:
        if k > 1 and g.rewards.std() > 0:
            assert abs(g.advantages.sum()) <= k * 1e-9


def test_token_cost_is_k_times_single_trajectory():
    pol = chain_following_policy(8, margin=50.0)
    task = generate_task(3, 3, 8)
    single = rollout_single(task, pol, None, RolloutConfig(), np.random.default_rng(0))
    trunc = rollout_truncated(task, pol, OracleJudge(), RolloutConfig(k=5), np.random.default_rng(0))
    assert trunc.tokens_generated == 5 * single.tokens_generated


def test_full_group_identical_rewards():
    pol = chain_following_policy(8, margin=50.0)
    recs = rollout_full_group(generate_task(2, 2, 8), pol, OracleJudge(), 4, "judge_dense_sum", RolloutConfig(), np.random.default_rng(0))
    assert all(r.advantage == 0 for r in recs)
    assert all(g.advantages[0] == 0 for r in recs for g in r.groups)


def test_full_group_two_rewards():
    adv = group_advantages([1.0, 0.0], eps_adv=1e-6)
    assert np.allclose(adv, [0.5 / (0.5 + 1e-6), -0.5 / (0.5 + 1e-6)])
    assert np.round(adv, 5).tolist() == [1.0, -1.0]


def test_full_group_sparse_signal():
    recs = rollout_full_group(generate_task(2, 2, 8), PolicyModel(8), None, 6, "em_sparse", RolloutConfig(), np.random.default_rng(4))
    assert all(r.total_reward == r.em for r in recs)
    with pytest.raises(ValueError):
        rollout_full_group(generate_task(2, 2, 8), PolicyModel(8), None, 1, "em_sparse", RolloutConfig(), np.random.default_rng(4))


@given(
    st.lists(st.booleans(), min_size=2, max_size=7).filter(lambda xs: any(xs) and not all(xs)),
    st.sampled_from([-1, 0, 1]),
    st.sampled_from([-1, 0, 1]),
    st.integers(1, 3),
)
def test_answer_candidates_win_with_bonus(is_answer, think, second, t):
    """Equal judge scores: the early-exit bonus alone separates answers from searches."""
    rewards = [composite_reward(JudgeVerdict(think), JudgeVerdict(second), a, t, 4, 0.1).total for a in is_answer]
    adv = group_advantages(rewards)
    ans = [x for x, a in zip(adv, is_answer) if a]
    srch = [x for x, a in zip(adv, is_answer) if not a]
    assert min(ans) > max(srch)


def test_log_records_are_json():
    rec = rollout_truncated(generate_task(0, 2, 8), PolicyModel(8), OracleJudge(), RolloutConfig(), np.random.default_rng(0))
    lines = rec.log_records()
    assert len(lines) == len(rec.groups)
    row = json.loads(json.dumps(lines[0]))
    assert set(row) >= {"task_id", "step_index", "candidates", "selected", "em", "tokens_generated"}
    assert set(row["candidates"][0]["reward"]) == {"think", "query", "answer", "bonus", "total"}

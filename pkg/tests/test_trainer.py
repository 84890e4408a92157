import numpy as np
import pytest

from slatelab.config import RunConfig
from slatelab.experiments import run_compare
from slatelab.trainer import CSV_COLUMNS, train


def small(**kw):
    cfg = RunConfig().replace(**{"train.steps": 20, "output.trajectories": False})
    return cfg.replace(**kw)


@pytest.mark.parametrize("mode", ["slate", "full_group_dense", "truncated_sparse", "em_final_only", "full_group_sparse"])
def test_every_mode_runs(mode):
    res = train(small(**{"train.mode": mode}))
    assert len(res.metrics) == 20
    toks = [m.tokens for m in res.metrics]
    assert toks == sorted(toks) and toks[-1] > 0
    assert all(0 <= m.em_rate <= 1 for m in res.metrics)
    assert np.all(np.isfinite(res.policy.weights))


def test_per_batch_refresh_and_reference_refresh():
    res = train(small(**{"train.old_policy_refresh": "per_batch", "train.batch_size": 3, "train.ref_refresh": 5}))
    assert len(res.metrics) == 20 and res.metrics[-1].mean_kl >= 0


def test_identical_seeds_bit_identical_parameters():
    a = train(small())
    b = train(small())
    assert np.array_equal(a.policy.weights, b.policy.weights)
    assert a.metrics == b.metrics
    c = train(small(**{"env.seed": 1}))
    assert not np.array_equal(a.policy.weights, c.policy.weights)


def test_stop_tokens():
    res = train(small(**{"train.steps": 100}), stop_tokens=500)
    assert res.tokens >= 500 and res.metrics[-2].tokens < 500


def test_threshold_needs_full_window():
    res = train(small(**{"train.em_window": 50}))
    assert res.tokens_to_threshold(0.0) is None


def test_csv_columns_stable():
    assert CSV_COLUMNS == ("update", "tokens", "mean_step_reward", "mean_total_reward", "em_rate", "mean_kl", "mean_abs_adv", "wall_ms")


def test_wall_time_opt_in():
    assert all(m.wall_ms == 0 for m in train(small()).metrics)


def test_self_comparison_is_identical():
    cfg = small()
    rep = run_compare([("a", cfg), ("b", cfg)], seeds=[0, 1], token_budget=400)
    for seed in (0, 1):
        a, b = rep.by_label("a")[seed], rep.by_label("b")[seed]
        assert (a.tokens, a.final_em) == (b.tokens, b.final_em)

"""The twelve acceptance criteria, one test each.

Every test records a one-line verdict that conftest prints in a final
"acceptance criteria" section, so a single pytest run shows the whole table.
Training runs are memoized on the resolved config, which lets the slate arms
shared by criteria 8, 9 and 10 run once.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

import test_optimizer
import test_policy
from conftest import ACCEPTANCE_LINES
from slatelab import variance_lab as lab
from slatelab.config import RunConfig
from slatelab.experiments import run_compare, run_sweep
from slatelab.judge import OutOfRangeScoreError, parse_judge_response, render_prompt
from slatelab.optimizer import step_objective
from slatelab.sampler import group_advantages
from slatelab.trainer import train

SEEDS = list(range(10))
_RUNS: dict = {}


def record(n: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"[{'PASS' if passed else 'FAIL'}] criterion {n:>2}: {detail}"


def cached_train(cfg: RunConfig, run_dir=None, stop_tokens=None, **kw):
    key = (cfg.to_text(), stop_tokens)
    if key not in _RUNS:
        _RUNS[key] = train(cfg, stop_tokens=stop_tokens, **kw)
    return _RUNS[key]


def base_config() -> RunConfig:
    return RunConfig().replace(
        **{"env.hops": 3, "train.mode": "slate", "train.k": 5, "train.B": 4, "train.lambda": 0.1, "train.eta": 0.7, "output.trajectories": False}
    )


# -- variance theory ----------------------------------------------------------


def test_1_general_bound():
    specs = [
        lab.RewardProcessSpec.iid(1),
        lab.RewardProcessSpec(2, (2 / 3, 2 / 3), future_covariance=0.5),
        lab.RewardProcessSpec(4, (0.2, 0.6, 1.0, 1.4)),
        lab.RewardProcessSpec(4, (2 / 3,) * 4, coupling="prefix_coupled", coupling_strength=0.5),
        lab.RewardProcessSpec(8, (2 / 3,) * 8, future_covariance=0.3),
        lab.RewardProcessSpec(8, tuple(np.linspace(0.1, 1.5, 8)), coupling="prefix_coupled", coupling_strength=0.8),
    ]
    start = time.perf_counter()
    reports = [lab.check_theorem(s, k=5, trials=100_000, seed=i) for i, s in enumerate(specs)]
    elapsed = time.perf_counter() - start
    assert all(r.assumption_flags["nonneg_future_cov"] for r in reports)
    assert {r.T for r in reports} == {1, 2, 4, 8}
    worst = max(r.ratio - 1 - 3 * r.ratio_sigma for r in reports)
    passed = all(r.bound_1 for r in reports) and elapsed <= 120
    ratios = ", ".join(f"T={r.T}:{r.ratio:.3f}" for r in reports)
    record(1, passed, f"{len(reports)} processes, ratios {ratios}; max(ratio - 1 - 3 sigma) = {worst:.3f}; {elapsed:.0f}s")
    assert passed


def test_2_tight_bound_iid():
    start = time.perf_counter()
    r = lab.check_theorem(lab.RewardProcessSpec.iid(4), k=5, trials=100_000, seed=0)
    elapsed = time.perf_counter() - start
    passed = 0.225 <= r.ratio <= 0.275 and elapsed <= 60
    record(2, passed, f"iid T=4 ratio {r.ratio:.4f} (target [0.225, 0.275]); {elapsed:.1f}s")
    assert passed


def test_3_group_centering_identity():
    spec = lab.RewardProcessSpec.iid(4)
    parts = []
    passed = True
    for i, G in enumerate((2, 5, 10)):
        seeds = np.random.SeedSequence([3, i]).spawn(2)
        adv = lab.estimate_traj_adv_variance(spec, G, 100_000, np.random.default_rng(seeds[0]))
        var_r = lab.estimate_reward_variance(spec, 100_000, np.random.default_rng(seeds[1]))
        ratio = lab._ratio(adv, var_r)
        ok = abs(ratio.value - (1 - 1 / G)) <= 3 * ratio.sigma
        passed &= ok
        parts.append(f"G={G}: {ratio.value:.4f} vs {1 - 1 / G:.4f} +/- {3 * ratio.sigma:.4f}")
    record(3, passed, "; ".join(parts))
    assert passed


def test_4_law_of_total_variance():
    spec = lab.RewardProcessSpec(4, (0.4, 0.6, 0.8, 1.0), coupling="prefix_coupled", coupling_strength=0.7)
    rows = []
    passed = True
    for t in (2, 3, 4):
        within, between, total = lab.total_variance_decomposition(spec, t, 100_000, np.random.default_rng(40 + t))
        err = abs(within + between - total) / total
        passed &= err <= 0.02 and within > 0 and between > 0
        rows.append(f"t={t}: {within:.3f}+{between:.3f} vs {total:.3f} ({100 * err:.2f}%)")
    record(4, passed, "prefix-coupled T=4, " + "; ".join(rows))
    assert passed


def test_5_token_cost_and_equal_variance():
    p2 = lab.check_equal_variance_cost(G=8, T=4, trials=100_000, seed=0)
    t = p2.tokens
    passed = p2.cost_ok and p2.variance_ok and t.k_star == 2
    record(
        5,
        passed,
        f"full G=8 cost {t.cost_full:.1f} tok, truncated k=2 cost {t.cost_truncated_k_star:.1f} vs limit 1.25 * full / T = {1.25 * t.cost_full / 4:.1f}; "
        f"step var/k {p2.step_var_over_k.value:.4f} vs traj var/G {p2.traj_var_over_G.value:.4f}",
    )
    assert passed


# -- unit arithmetic and gradients --------------------------------------------


def test_6_worked_examples():
    adv = group_advantages([2, 0, -2], eps_adv=1e-6)
    a = 2 / (math.sqrt(8 / 3) + 1e-6)
    checks = {
        "advantages {2,0,-2}": np.round(adv, 6).tolist() == [round(a, 6), 0.0, round(-a, 6)] and round(a, 5) == 1.22474,
        "clip rho=1.5, A=+1": round(step_objective([math.log(1.5)], [0.0], 1.0, [1], 0.2), 6) == 1.2,
        "clip rho=0.5, A=-1": round(step_objective([math.log(0.5)], [0.0], -1.0, [1], 0.2), 6) == -0.8,
    }
    passed = all(checks.values())
    record(6, passed, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
    assert passed


def test_7_gradient_fidelity():
    failures = []
    for name, fn in (
        ("grad log pi (120 instances)", test_policy.test_grad_log_prob_finite_differences),
        ("grad total objective (100 instances)", test_optimizer.test_total_objective_gradient_finite_differences),
    ):
        try:
            fn()
        except AssertionError as exc:
            failures.append(f"{name}: worst rel err {exc}")
    passed = not failures
    record(7, passed, "central differences h=1e-6, rel err <= 1e-5 on both" if passed else "; ".join(failures))
    assert passed


# -- training dynamics ---------------------------------------------------------


def test_8_slate_reaches_09():
    start = time.perf_counter()
    results = [cached_train(base_config().replace(**{"env.seed": s})) for s in SEEDS]
    elapsed = time.perf_counter() - start
    hits = [r.updates_to_threshold(0.9) for r in results]
    n = sum(h is not None for h in hits)
    passed = n >= 8 and elapsed <= 600
    shown = ",".join("-" if h is None else str(h) for h in hits)
    record(8, passed, f"{n}/10 seeds reach rolling EM 0.9 within 500 updates (first update per seed: {shown}); {elapsed:.0f}s")
    assert passed


def test_9_matched_budget_comparison(tmp_path):
    base = base_config()
    arms = [(m, base.replace(**{"train.mode": m})) for m in ("slate", "full_group_dense", "em_final_only")]
    rep = run_compare(arms, SEEDS, threshold=0.8, runner=cached_train)
    rep.write(tmp_path)
    faster = rep.faster_pairs("slate", "full_group_dense")
    not_above = rep.final_em_not_above("em_final_only", "slate")
    passed = faster >= 7 and not_above >= 8
    record(
        9,
        passed,
        f"slate faster to EM 0.8 than full_group_dense on {faster}/10 pairs; em_final_only final EM <= slate on {not_above}/10; "
        f"mean final EM slate {rep.mean_final_em('slate'):.3f}, full_group_dense {rep.mean_final_em('full_group_dense'):.3f}, "
        f"em_final_only {rep.mean_final_em('em_final_only'):.3f}",
    )
    assert json.loads((tmp_path / "report.json").read_text())["threshold"] == 0.8
    assert passed


def test_10_group_size_sweep():
    rep = run_sweep(base_config(), "train.k", [1, 3, 5, 7], SEEDS, runner=cached_train)
    em = {k: rep.mean_final_em(f"train.k={k}") for k in (1, 3, 5, 7)}
    passed = em[5] >= em[3] >= em[1] and abs(em[7] - em[5]) <= 0.03
    record(10, passed, "aggregate final EM " + ", ".join(f"k={k}: {v:.3f}" for k, v in em.items()))
    assert passed


# -- prompts and determinism ----------------------------------------------------


def test_11_prompt_fidelity(fixtures_dir):
    fields = json.loads((fixtures_dir / "prompts" / "fields.json").read_text())
    identical = all(
        render_prompt(kind, fields).encode() == (fixtures_dir / "prompts" / f"{kind}_rendered.txt").read_bytes() for kind in ("think", "query", "answer")
    )
    roundtrip = all(parse_judge_response(f"<explanation> e </explanation>\n<score> {s} </score>").score == s for s in (-1, 0, 1))
    rejected = 0
    for bad in ("2", "-2", "7"):
        try:
            parse_judge_response(f"<explanation> e </explanation>\n<score> {bad} </score>")
        except OutOfRangeScoreError:
            rejected += 1
    passed = identical and roundtrip and rejected == 3
    record(11, passed, f"golden prompts byte-identical: {identical}; scores -1/0/+1 round-trip: {roundtrip}; out-of-range rejected {rejected}/3")
    assert passed


@pytest.mark.parametrize("mode", ["slate", "full_group_dense"])
def test_12_determinism(tmp_path, mode):
    cfg = base_config().replace(**{"train.mode": mode, "train.steps": 40, "env.seed": 3, "output.trajectories": True, "output.checkpoint_every": 20})
    train(cfg, run_dir=tmp_path / "a")
    train(cfg, run_dir=tmp_path / "b")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("metrics.csv", "trajectories.jsonl", "checkpoints/final.json"))
    previous = ACCEPTANCE_LINES.get(12, "")
    ok_so_far = not previous.startswith("[FAIL]")
    modes = (previous.split("modes: ")[-1] + "," if previous else "") + mode
    record(12, same and ok_so_far, f"repeated runs give identical metrics CSV, trajectory and checkpoint bytes; modes: {modes}")
    assert same

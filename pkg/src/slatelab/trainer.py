"""Training loop for every mode, with metrics, trajectory logs and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import TRUNCATED_MODES, RunConfig
from .env import generate_task
from .judge import OracleJudge, RemoteJudge, RemoteJudgeConfig
from .optimizer import UpdateConfig, apply_update, step_units, surrogate, trajectory_units
from .policy import PolicyModel, save_checkpoint
from .sampler import RolloutConfig, StepGroup, TrajectoryRecord, rollout_full_group, rollout_single, rollout_truncated

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "update",
    "tokens",
    "mean_step_reward",
    "mean_total_reward",
    "em_rate",
    "mean_kl",
    "mean_abs_adv",
    "wall_ms",
)

REWARD_MODES = {"slate": "dense", "truncated_sparse": "em_continuation", "em_final_only": "em_final"}
FULL_GROUP_MODES = {"full_group_dense": "judge_dense_sum", "full_group_sparse": "em_sparse"}

# disjoint task streams for training and evaluation
_TRAIN_STREAM = 0
_EVAL_STREAM = 1


@dataclass
class MetricsRecord:
    update: int
    tokens: int
    mean_step_reward: float
    mean_total_reward: float
    em_rate: float
    mean_kl: float
    mean_abs_adv: float
    wall_ms: int = 0

    def row(self) -> list[str]:
        return [
            str(self.update),
            str(self.tokens),
            f"{self.mean_step_reward:.10g}",
            f"{self.mean_total_reward:.10g}",
            f"{self.em_rate:.10g}",
            f"{self.mean_kl:.10g}",
            f"{self.mean_abs_adv:.10g}",
            str(self.wall_ms),
        ]


@dataclass
class TrainResult:
    config: RunConfig
    metrics: list[MetricsRecord]
    policy: PolicyModel
    eval_em: list[int] = field(default_factory=list)
    run_dir: Path | None = None

    @property
    def tokens(self) -> int:
        return self.metrics[-1].tokens if self.metrics else 0

    @property
    def final_em(self) -> float:
        return self.metrics[-1].em_rate if self.metrics else 0.0

    def _full_window(self, m: MetricsRecord) -> bool:
        t = self.config.train
        return m.update * t.eval_episodes >= t.em_window

    def tokens_to_threshold(self, threshold: float) -> int | None:
        """Cumulative tokens at the first update whose (full) rolling EM reaches ``threshold``."""
        for m in self.metrics:
            if self._full_window(m) and m.em_rate >= threshold:
                return m.tokens
        return None

    def updates_to_threshold(self, threshold: float) -> int | None:
        for m in self.metrics:
            if self._full_window(m) and m.em_rate >= threshold:
                return m.update
        return None


def task_seed(master: int, stream: int, index: int) -> int:
    return (master * 2 + stream) * 1_000_003 + index


def make_judge(cfg: RunConfig):
    if cfg.judge.mode == "oracle":
        return OracleJudge()
    j = cfg.judge
    return RemoteJudge(
        RemoteJudgeConfig(
            endpoint=j.endpoint,
            model=j.model,
            temperature=j.temperature,
            retries=j.retries,
            timeout=j.timeout,
            response_path=j.response_path,
            max_concurrency=j.max_concurrency,
            strict=j.strict,
        )
    )


def rollout_config(cfg: RunConfig) -> RolloutConfig:
    t = cfg.train
    return RolloutConfig(
        k=t.k,
        budget=t.B,
        lam=t.lam,
        eta=t.eta,
        strategy=t.selection,
        eps_adv=t.eps_adv,
        std=t.std,
        temperature=t.temperature,
        reward=REWARD_MODES.get(t.mode, "dense"),
        top_k=cfg.env.top_k,
    )


def update_config(cfg: RunConfig) -> UpdateConfig:
    t = cfg.train
    return UpdateConfig(
        clip_eps=t.clip_eps,
        kl_beta=t.kl_beta,
        learning_rate=t.learning_rate,
        old_policy_refresh=t.old_policy_refresh,
    )


class _RunWriter:
    def __init__(self, run_dir: Path, cfg: RunConfig):
        self.dir = run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        (run_dir / "config.txt").write_text(cfg.to_text())
        self._metrics = open(run_dir / "metrics.csv", "w", newline="")
        self._csv = csv.writer(self._metrics, lineterminator="\n")
        self._csv.writerow(CSV_COLUMNS)
        self._traj = open(run_dir / "trajectories.jsonl", "w") if cfg.output.trajectories else None

    def metrics(self, record: MetricsRecord) -> None:
        self._csv.writerow(record.row())
        self._metrics.flush()

    def trajectory(self, rec: TrajectoryRecord, update: int) -> None:
        if self._traj is None:
            return
        for line in rec.log_records(update=update):
            self._traj.write(json.dumps(line, sort_keys=True) + "\n")

    def checkpoint(self, policy: PolicyModel, name: str) -> None:
        save_checkpoint(policy, self.dir / "checkpoints" / f"{name}.json")

    def close(self) -> None:
        self._metrics.close()
        if self._traj is not None:
            self._traj.close()


def train(
    cfg: RunConfig,
    judge=None,
    run_dir: str | Path | None = None,
    stop_tokens: int | None = None,
    on_metrics: Callable[[MetricsRecord], None] | None = None,
) -> TrainResult:
    """Run ``cfg.train.steps`` updates (or until ``stop_tokens`` tokens are spent).

    One update consumes ``batch_size`` tasks.  With ``per_group`` refresh the
    parameters move after every step group (every task for full-group modes);
    with ``per_batch`` the whole batch is sampled first and the same updates
    are applied afterwards, against the batch-start log-probabilities.
    """
    cfg.validate()
    t = cfg.train
    stop = stop_tokens if stop_tokens is not None else (t.token_budget or None)
    judge = judge if judge is not None else make_judge(cfg)
    policy = PolicyModel(cfg.env.vocab_size, think_len=t.think_len, payload_len=t.payload_len)
    reference = policy.frozen_copy()
    rcfg = rollout_config(cfg)
    ucfg = update_config(cfg)
    seeds = np.random.SeedSequence(cfg.env.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    eval_rng = np.random.default_rng(seeds[1])
    truncated = t.mode in TRUNCATED_MODES

    writer = _RunWriter(Path(run_dir), cfg) if run_dir is not None else None
    metrics: list[MetricsRecord] = []
    eval_em: list[int] = []
    tokens = 0
    start = time.perf_counter()

    def update(units, stats):
        _, grad = surrogate(units, policy, reference, ucfg, stats=stats)
        apply_update(policy, grad, ucfg.learning_rate)

    try:
        for u in range(1, t.steps + 1):
            if stop is not None and tokens >= stop:
                break
            stats: dict = {}
            pending: list[list] = []
            records: list[TrajectoryRecord] = []
            groups: list[StepGroup] = []
            totals: list[float] = []
            per_group = t.old_policy_refresh == "per_group"
            for b in range(t.batch_size):
                task = generate_task(task_seed(cfg.env.seed, _TRAIN_STREAM, (u - 1) * t.batch_size + b), cfg.env.hops, cfg.env.vocab_size)
                if truncated:
                    hook = (lambda g: update(step_units([g]), stats)) if per_group else (lambda g: pending.append(step_units([g])))
                    rec = rollout_truncated(task, policy, judge, rcfg, rng, on_group=hook)
                    records.append(rec)
                    groups.extend(rec.groups)
                    totals.append(sum(g.rewards[g.selected] for g in rec.groups))
                else:
                    recs = rollout_full_group(task, policy, judge, t.G, FULL_GROUP_MODES[t.mode], rcfg, rng)
                    records.extend(recs)
                    groups.extend(g for r in recs for g in r.groups)
                    totals.extend(r.total_reward for r in recs)
                    units = trajectory_units(recs)
                    if per_group:
                        update(units, stats)
                    else:
                        pending.append(units)
            for units in pending:
                update(units, stats)
            if t.ref_refresh and u % t.ref_refresh == 0:
                reference = policy.frozen_copy()

            tokens += sum(r.tokens_generated for r in records)
            for _ in range(t.eval_episodes):
                idx = len(eval_em)
                task = generate_task(task_seed(cfg.env.seed, _EVAL_STREAM, idx), cfg.env.hops, cfg.env.vocab_size)
                eval_em.append(rollout_single(task, policy, None, rcfg, eval_rng).em)
            window = eval_em[-t.em_window :]
            step_rewards = [bd.total for g in groups for bd in g.breakdowns]
            advantages = [abs(a) for g in groups if g.advantages is not None for a in g.advantages]
            record = MetricsRecord(
                update=u,
                tokens=tokens,
                mean_step_reward=float(np.mean(step_rewards)) if step_rewards else 0.0,
                mean_total_reward=float(np.mean(totals)) if totals else 0.0,
                em_rate=float(np.mean(window)) if window else 0.0,
                mean_kl=float(np.mean(stats["kl"])) if stats.get("kl") else 0.0,
                mean_abs_adv=float(np.mean(advantages)) if advantages else 0.0,
                wall_ms=int((time.perf_counter() - start) * 1000) if cfg.output.wall_time else 0,
            )
            metrics.append(record)
            if on_metrics is not None:
                on_metrics(record)
            if writer is not None:
                if u % cfg.output.log_every == 0 or u == t.steps:
                    writer.metrics(record)
                for rec in records:
                    writer.trajectory(rec, u)
                if cfg.output.checkpoint_every and u % cfg.output.checkpoint_every == 0:
                    writer.checkpoint(policy, f"update_{u:06d}")
        if writer is not None:
            if metrics and metrics[-1].update % cfg.output.log_every != 0 and metrics[-1].update != t.steps:
                writer.metrics(metrics[-1])
            writer.checkpoint(policy, "final")
    finally:
        if writer is not None:
            writer.close()
    return TrainResult(cfg, metrics, policy, eval_em, Path(run_dir) if run_dir is not None else None)

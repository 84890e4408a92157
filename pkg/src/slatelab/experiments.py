"""Paired-seed comparisons under matched token budgets, and group-size sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .trainer import TrainResult, train

# arms after the first may run this many times longer in updates to reach the matched budget
STEP_CAP_FACTOR = 10


@dataclass
class ArmResult:
    label: str
    seed: int
    tokens: int
    updates: int
    final_em: float
    tokens_to_threshold: int | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComparisonReport:
    threshold: float
    arms: list[ArmResult] = field(default_factory=list)

    def labels(self) -> list[str]:
        seen: list[str] = []
        for a in self.arms:
            if a.label not in seen:
                seen.append(a.label)
        return seen

    def by_label(self, label: str) -> dict[int, ArmResult]:
        return {a.seed: a for a in self.arms if a.label == label}

    def faster_pairs(self, a: str, b: str) -> int:
        """Seeds on which arm ``a`` hits the threshold with strictly fewer tokens than ``b``.

        Never reaching the threshold counts as infinitely many tokens.
        """
        A, B = self.by_label(a), self.by_label(b)
        inf = float("inf")
        wins = 0
        for seed in A.keys() & B.keys():
            ta = A[seed].tokens_to_threshold
            tb = B[seed].tokens_to_threshold
            ta = inf if ta is None else ta
            tb = inf if tb is None else tb
            wins += ta < tb
        return wins

    def final_em_not_above(self, a: str, b: str) -> int:
        """Seeds on which arm ``a`` finishes with EM no higher than arm ``b``."""
        A, B = self.by_label(a), self.by_label(b)
        return sum(A[s].final_em <= B[s].final_em for s in A.keys() & B.keys())

    def mean_final_em(self, label: str) -> float:
        return float(np.mean([a.final_em for a in self.arms if a.label == label]))

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "arms": [a.to_json() for a in self.arms],
            "summary": {lbl: {"mean_final_em": self.mean_final_em(lbl)} for lbl in self.labels()},
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with open(out / "arms.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "seed", "tokens", "updates", "final_em", "tokens_to_threshold"])
            for a in self.arms:
                w.writerow([a.label, a.seed, a.tokens, a.updates, f"{a.final_em:.10g}", "" if a.tokens_to_threshold is None else a.tokens_to_threshold])


def _arm(label: str, seed: int, res: TrainResult, threshold: float) -> ArmResult:
    return ArmResult(label, seed, res.tokens, len(res.metrics), res.final_em, res.tokens_to_threshold(threshold))


def run_compare(
    arms: Sequence[tuple[str, RunConfig]],
    seeds: Sequence[int],
    threshold: float = 0.8,
    token_budget: int | None = None,
    out_dir: str | Path | None = None,
    runner: Callable[..., TrainResult] = train,
) -> ComparisonReport:
    """Paired runs sharing task streams; every arm of a seed spends the same token budget.

    Without an explicit ``token_budget``, the first arm runs its configured
    number of updates and the tokens it spent become the budget for the rest.
    """
    if len(arms) < 2:
        raise ValueError("comparison needs at least two arms")
    report = ComparisonReport(threshold)
    for seed in seeds:
        budget = token_budget
        for i, (label, base) in enumerate(arms):
            cfg = base.replace(**{"env.seed": seed})
            if budget is None and i == 0:
                res = runner(cfg, run_dir=_run_dir(out_dir, label, seed))
                budget = res.tokens
            else:
                cfg = cfg.replace(**{"train.steps": cfg.train.steps * STEP_CAP_FACTOR})
                res = runner(cfg, run_dir=_run_dir(out_dir, label, seed), stop_tokens=budget)
            report.arms.append(_arm(label, seed, res, threshold))
    if out_dir is not None:
        report.write(out_dir)
    return report


def run_sweep(
    base: RunConfig,
    key: str,
    values: Sequence,
    seeds: Sequence[int],
    threshold: float = 0.8,
    out_dir: str | Path | None = None,
    runner: Callable[..., TrainResult] = train,
) -> ComparisonReport:
    """Same number of updates for every value of ``key`` (e.g. ``train.k``), paired over seeds."""
    report = ComparisonReport(threshold)
    for seed in seeds:
        for value in values:
            label = f"{key}={value}"
            cfg = base.replace(**{key: value, "env.seed": seed})
            res = runner(cfg, run_dir=_run_dir(out_dir, label, seed))
            report.arms.append(_arm(label, seed, res, threshold))
    if out_dir is not None:
        report.write(out_dir)
    return report


def _run_dir(out_dir, label: str, seed: int) -> Path | None:
    if out_dir is None:
        return None
    return Path(out_dir) / f"{label}-seed{seed}"

"""Monte-Carlo measurement of step-level versus trajectory-level advantage variance.

Synthetic reward processes are driven by i.i.d. action draws ``u_t`` uniform on
{-1, 0, +1}.  The step reward is

    r_t = s_t u_t + gamma * s_{t-1} u_{t-1} + kappa * u_1 * [t >= 2 and coupled]

with ``s_t = sqrt(1.5 v_t)`` so that the action noise at step ``t`` has
variance ``v_t``.  ``gamma`` (the future-covariance knob) sets
``Cov(r_t, r_{t+1} | prefix) = gamma * v_t``; coupling makes later rewards
depend on the first action, which moves mass from the within-prefix to the
between-prefix variance term.

Advantages here are the unnormalized centered ones, ``R_i - mean(R)`` for
full-trajectory groups and ``r_t^(j) - mean_j r_t`` for step groups.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

Z95 = 1.959963984540054
N_BATCHES = 50
SYMMETRY_TOL = 0.1
SIGMA_MULT = 3.0

RewardFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RewardProcessSpec:
    T: int
    step_variance_profile: tuple[float, ...]
    future_covariance: float = 0.0
    coupling: str = "independent"  # or "prefix_coupled"
    coupling_strength: float = 0.5

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if len(self.step_variance_profile) != self.T:
            raise ValueError("step_variance_profile must have T entries")
        if any(v < 0 for v in self.step_variance_profile):
            raise ValueError("step variances must be >= 0")
        if self.coupling not in ("independent", "prefix_coupled"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        object.__setattr__(self, "step_variance_profile", tuple(float(v) for v in self.step_variance_profile))

    @classmethod
    def iid(cls, T: int, v: float = 2.0 / 3.0) -> "RewardProcessSpec":
        """Uniform ternary rewards (variance 2/3 at the default ``v``) at every step."""
        return cls(T, (v,) * T)

    @property
    def scales(self) -> np.ndarray:
        return np.sqrt(1.5 * np.asarray(self.step_variance_profile))

    @property
    def vbar(self) -> float:
        return float(np.mean(self.step_variance_profile))

    def rewards(self, u: np.ndarray) -> np.ndarray:
        """Step rewards for action draws ``u`` of shape (..., T)."""
        a = u * self.scales
        r = a.copy()
        r[..., 1:] += self.future_covariance * a[..., :-1]
        if self.coupling == "prefix_coupled" and self.T > 1:
            r[..., 1:] += self.coupling_strength * u[..., :1]
        return r

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "step_variance_profile": list(self.step_variance_profile),
            "future_covariance": self.future_covariance,
            "coupling": self.coupling,
            "coupling_strength": self.coupling_strength,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float  # Monte-Carlo standard error (batch means)

    @property
    def halfwidth(self) -> float:
        return Z95 * self.sigma


def batch_means(samples: np.ndarray, n_batches: int = N_BATCHES) -> Estimate:
    x = np.asarray(samples, dtype=np.float64).ravel()
    nb = min(n_batches, len(x))
    if nb < 2:
        return Estimate(float(x.mean()), float("nan"))
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    return Estimate(float(x.mean()), float(means.std(ddof=1) / math.sqrt(nb)))


def _ratio(num: Estimate, den: Estimate) -> Estimate:
    if den.value == 0:
        return Estimate(float("nan") if num.value == 0 else float("inf"), float("nan"))
    r = num.value / den.value
    rel = math.hypot(num.sigma / den.value, r * den.sigma / den.value)
    return Estimate(r, rel)


def _reward_fn(process) -> RewardFn:
    return process.rewards if hasattr(process, "rewards") else process


def _draw(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(-1, 2, size=shape).astype(np.float64)


# -- exact enumeration ------------------------------------------------------


@dataclass(frozen=True)
class ExactMoments:
    var_reward: float
    exp_cond_var_step: tuple[float, ...]  # E_prefix Var[r_t | prefix]
    within: tuple[float, ...]  # E_prefix Var[R | tau_{<t}]
    between: tuple[float, ...]  # Var_prefix E[R | tau_{<t}]
    min_future_cov: tuple[float, ...]  # min over prefixes of Cov(r_t, F_t | prefix)
    step_between: tuple[float, ...]  # Var_prefix E[r_t | prefix]

    @property
    def inter_step(self) -> float:
        return self.var_reward - sum(self.exp_cond_var_step)


def enumerate_actions(T: int) -> np.ndarray:
    grids = np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * T), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def exact_moments(process, T: int | None = None) -> ExactMoments:
    """Closed-form moments by enumerating all 3**T equiprobable action sequences."""
    T = process.T if T is None else T
    if T > 10:
        raise ValueError("exact enumeration is limited to T <= 10")
    r = _reward_fn(process)(enumerate_actions(T))
    R = r.sum(axis=1)
    ecv, within, between, mincov, step_between = [], [], [], [], []
    for t in range(1, T + 1):
        n_prefix = 3 ** (t - 1)
        rt = r[:, t - 1].reshape(n_prefix, -1)
        Rt = R.reshape(n_prefix, -1)
        Ft = r[:, t:].sum(axis=1).reshape(n_prefix, -1)
        ecv.append(float(rt.var(axis=1).mean()))
        step_between.append(float(rt.mean(axis=1).var()))
        within.append(float(Rt.var(axis=1).mean()))
        between.append(float(Rt.mean(axis=1).var()))
        cov = ((rt - rt.mean(axis=1, keepdims=True)) * (Ft - Ft.mean(axis=1, keepdims=True))).mean(axis=1)
        mincov.append(float(cov.min()))
    return ExactMoments(float(R.var()), tuple(ecv), tuple(within), tuple(between), tuple(mincov), tuple(step_between))


def assumption_flags(spec: RewardProcessSpec, tol: float = 1e-12) -> dict[str, bool]:
    """Which of the three theorem assumptions the process satisfies.

    Non-negative future covariance is checked exactly over every prefix.
    Conditional independence requires no carried-over action term and no
    coupling.  Variance symmetry allows a relative spread of ``SYMMETRY_TOL``.
    """
    m = exact_moments(spec)
    prof = np.asarray(spec.step_variance_profile)
    mean = prof.mean()
    symmetric = bool(mean == 0 or np.all(np.abs(prof - mean) <= SYMMETRY_TOL * mean))
    return {
        "nonneg_future_cov": bool(min(m.min_future_cov) >= -tol),
        "conditional_independence": spec.future_covariance == 0 and spec.coupling == "independent",
        "variance_symmetry": symmetric,
    }


# -- Monte-Carlo estimators ---------------------------------------------------


def estimate_traj_adv_variance(process, G: int, trials: int, rng: np.random.Generator, T: int | None = None) -> Estimate:
    """Var[R_i - mean_l R_l] for groups of G full trajectories."""
    if G < 2:
        raise ValueError("G must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    T = process.T if T is None else T
    R = _reward_fn(process)(_draw(rng, (trials, G, T))).sum(axis=-1)
    adv = R - R.mean(axis=1, keepdims=True)
    # every member of a group has the same marginal law; pool them per trial
    return batch_means((adv**2).mean(axis=1))


def estimate_reward_variance(process, trials: int, rng: np.random.Generator, T: int | None = None) -> Estimate:
    T = process.T if T is None else T
    R = _reward_fn(process)(_draw(rng, (trials, T))).sum(axis=-1)
    # var = E[(R - mu)^2]; the batch-means error ignores the O(1/n) mean correction
    return batch_means((R - R.mean()) ** 2 * trials / max(trials - 1, 1))


def estimate_step_adv_variance(
    process,
    k: int,
    trials: int,
    t: int,
    rng: np.random.Generator,
    T: int | None = None,
) -> Estimate:
    """E_prefix Var[r_t^(j) - mean_l r_t^(l) | prefix] with k samples per prefix."""
    if k < 2:
        raise ValueError("k must be >= 2")
    T = process.T if T is None else T
    if not 1 <= t <= T:
        raise ValueError(f"t must lie in [1, {T}]")
    prefix = _draw(rng, (trials, 1, t - 1))
    step = _draw(rng, (trials, k, 1))
    u = np.concatenate([np.broadcast_to(prefix, (trials, k, t - 1)), step, np.zeros((trials, k, T - t))], axis=-1)
    rt = _reward_fn(process)(u)[..., t - 1]
    adv = rt - rt.mean(axis=1, keepdims=True)
    return batch_means((adv**2).mean(axis=1))


def total_variance_decomposition(
    process,
    t: int,
    trials: int,
    rng: np.random.Generator,
    inner: int = 4,
    target: str = "trajectory",
    T: int | None = None,
) -> tuple[float, float, float]:
    """(within, between, total) for the trajectory reward (or the step-t reward).

    ``within`` and ``between`` come from ``trials`` prefixes with ``inner``
    continuations each; ``total`` is an independent plain estimate from
    ``trials * inner`` fresh trajectories.
    """
    if trials < 2 or inner < 2:
        raise ValueError("need trials >= 2 and inner >= 2")
    if target not in ("trajectory", "step"):
        raise ValueError(f"unknown target {target!r}")
    T = process.T if T is None else T
    fn = _reward_fn(process)

    def quantity(r):
        return r.sum(axis=-1) if target == "trajectory" else r[..., t - 1]

    prefix = _draw(rng, (trials, 1, t - 1))
    rest = _draw(rng, (trials, inner, T - t + 1))
    x = quantity(fn(np.concatenate([np.broadcast_to(prefix, (trials, inner, t - 1)), rest], axis=-1)))
    cond_var = x.var(axis=1, ddof=1)
    within = float(cond_var.mean())
    between = float(x.mean(axis=1).var(ddof=1) - within / inner)
    fresh = quantity(fn(_draw(rng, (trials * inner, T))))
    total = float(fresh.var(ddof=1))
    return within, between, total


# -- reports ------------------------------------------------------------------


@dataclass
class VarianceReport:
    spec: dict
    config_hash: str
    T: int
    k: int
    G: int
    trials: int
    var_traj_adv: float
    var_traj_sigma: float
    exp_cond_var_step_adv: list[float]
    step_sigmas: list[float]
    within: float
    between: float
    total: float
    decomposition_t: int
    ratio: float
    ratio_sigma: float
    ci_halfwidth: float
    bound_1: bool
    bound_1_over_T: bool
    assumption_flags: dict[str, bool]
    token_cost_full: int = 0
    token_cost_truncated: int = 0
    exact: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)

    @property
    def all_assumptions(self) -> bool:
        return all(self.assumption_flags.values())

    @property
    def enabled_bounds_hold(self) -> bool:
        """The general bound is always enforced; the 1/T bound only when every assumption holds."""
        return self.bound_1 and (self.bound_1_over_T or not self.all_assumptions)

    def to_json(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        row = {
            "config_hash": self.config_hash,
            "T": self.T,
            "k": self.k,
            "G": self.G,
            "trials": self.trials,
            "var_traj": f"{self.var_traj_adv:.10g}",
        }
        for t, v in enumerate(self.exp_cond_var_step_adv, 1):
            row[f"var_step_t{t}"] = f"{v:.10g}"
        row.update(
            within=f"{self.within:.10g}",
            between=f"{self.between:.10g}",
            total=f"{self.total:.10g}",
            ratio=f"{self.ratio:.10g}",
            bound_1=int(self.bound_1),
            bound_1_over_T=int(self.bound_1_over_T),
            assumption_flags=";".join(f"{k}={int(v)}" for k, v in self.assumption_flags.items()),
            tokens_full=self.token_cost_full,
            tokens_trunc=self.token_cost_truncated,
        )
        return row


def check_theorem(
    spec: RewardProcessSpec,
    k: int = 5,
    trials: int = 100_000,
    seed: int = 0,
    decomposition_t: int | None = None,
    normalized: bool = False,
) -> VarianceReport:
    """Measure both sides of the general and 1/T bounds with ``G = k``.

    ``ratio`` is the largest over steps of E_prefix Var[step advantage]
    divided by Var[trajectory advantage].
    """
    G = k
    seeds = np.random.SeedSequence(seed).spawn(spec.T + 3)
    traj = estimate_traj_adv_variance(spec, G, trials, np.random.default_rng(seeds[0]))
    steps = [estimate_step_adv_variance(spec, k, trials, t, np.random.default_rng(seeds[t])) for t in range(1, spec.T + 1)]
    per_step = [_ratio(s, traj) for s in steps]
    worst = max(per_step, key=lambda e: (e.value, e.sigma))
    dt = decomposition_t or spec.T
    within, between, total = total_variance_decomposition(spec, dt, max(2, trials // 4), np.random.default_rng(seeds[-2]))
    flags = assumption_flags(spec)
    tol = SIGMA_MULT * worst.sigma if math.isfinite(worst.sigma) else 0.0
    ratio = worst.value
    exact = exact_moments(spec) if spec.T <= 10 else None
    report = VarianceReport(
        spec=spec.to_json(),
        config_hash=hashlib.sha256(f"{spec.digest()}:{k}:{trials}:{seed}".encode()).hexdigest()[:12],
        T=spec.T,
        k=k,
        G=G,
        trials=trials,
        var_traj_adv=traj.value,
        var_traj_sigma=traj.sigma,
        exp_cond_var_step_adv=[s.value for s in steps],
        step_sigmas=[s.sigma for s in steps],
        within=within,
        between=between,
        total=total,
        decomposition_t=dt,
        ratio=ratio,
        ratio_sigma=worst.sigma,
        ci_halfwidth=worst.halfwidth,
        # a process with no reward variance at all satisfies both bounds trivially
        bound_1=bool(traj.value == 0 or ratio <= 1 + tol),
        bound_1_over_T=bool(traj.value == 0 or ratio <= (1 + SYMMETRY_TOL) / spec.T + tol),
        assumption_flags=flags,
    )
    if exact is not None:
        var_adv_traj = (1 - 1 / G) * exact.var_reward
        report.exact = {
            "var_reward": exact.var_reward,
            "var_traj_adv": var_adv_traj,
            "exp_cond_var_step_adv": [(1 - 1 / k) * v for v in exact.exp_cond_var_step],
            "ratio": max((1 - 1 / k) * v for v in exact.exp_cond_var_step) / var_adv_traj if var_adv_traj else None,
            "within": exact.within[dt - 1],
            "between": exact.between[dt - 1],
            "inter_step": exact.inter_step,
        }
    if normalized:
        report.normalized = normalized_advantage_variance(spec, k, min(trials, 20_000), np.random.default_rng(seeds[-1]))
    return report


def normalized_advantage_variance(spec: RewardProcessSpec, k: int, trials: int, rng: np.random.Generator, eps: float = 1e-6) -> dict:
    """Second moments of std-normalized advantages (the trainer's form), for context only."""

    def norm(x):
        sd = x.std(axis=1, keepdims=True)
        return np.where(sd > 0, (x - x.mean(axis=1, keepdims=True)) / (sd + eps), 0.0)

    R = spec.rewards(_draw(rng, (trials, k, spec.T))).sum(axis=-1)
    out = {"traj": float((norm(R) ** 2).mean())}
    for t in range(1, spec.T + 1):
        prefix = _draw(rng, (trials, 1, t - 1))
        u = np.concatenate([np.broadcast_to(prefix, (trials, k, t - 1)), _draw(rng, (trials, k, 1)), np.zeros((trials, k, spec.T - t))], axis=-1)
        out[f"step_t{t}"] = float((norm(spec.rewards(u)[..., t - 1]) ** 2).mean())
    return out


def write_reports(reports: Sequence[VarianceReport], out_dir: str | Path, stem: str = "variance") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n")
    (out / f"{stem}.csv").write_text(reports_csv(reports))


def reports_csv(reports: Sequence[VarianceReport]) -> str:
    rows = [r.csv_row() for r in reports]
    columns: list[str] = []
    for row in rows:
        columns += [c for c in row if c not in columns]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- probes -------------------------------------------------------------------


def violation_probe(v: float = 2.0, small: float = 0.02, seed: int = 0, trials: int = 100_000, k: int = 5) -> VarianceReport:
    """Two steps where the second reward cancels the first action: r_2 = a_2 - a_1.

    Cov(r_1, F_1) = -v < 0, Var[R] = ``small``, so the general bound fails.
    """
    spec = RewardProcessSpec(2, (v, small), future_covariance=-1.0)
    return check_theorem(spec, k=k, trials=trials, seed=seed)


@dataclass
class InterStepProbe:
    searched: int
    with_nonneg_future_cov: int
    negative_inter_step: int
    negative_with_nonneg_future_cov: int
    example: dict | None

    def to_json(self) -> dict:
        return asdict(self)


class TabularProcess:
    """r_t = table_t[u_{t-1}, u_t] with the previous action set to 0 at t = 1."""

    def __init__(self, tables: np.ndarray):
        self.tables = np.asarray(tables, dtype=np.float64)  # (T, 3, 3)
        self.T = self.tables.shape[0]

    def rewards(self, u: np.ndarray) -> np.ndarray:
        idx = u.astype(int) + 1
        prev = np.concatenate([np.ones_like(idx[..., :1]), idx[..., :-1]], axis=-1)
        t = np.arange(self.T)
        return self.tables[t, prev, idx]


def inter_step_probe(n: int = 2000, T: int = 3, seed: int = 0) -> InterStepProbe:
    """Search random ternary-table processes for negative inter-step terms.

    The inter-step term is Var[R] - sum_t E_prefix Var[r_t | prefix]; the
    probe counts how often it is negative, overall and among processes whose
    future covariance is non-negative for every prefix.
    """
    rng = np.random.default_rng(seed)
    neg = neg_a1 = a1 = 0
    example = None
    for _ in range(n):
        tables = rng.integers(-1, 2, size=(T, 3, 3))
        m = exact_moments(TabularProcess(tables))
        ok = min(m.min_future_cov) >= -1e-12
        a1 += ok
        if m.inter_step < -1e-12:
            neg += 1
            if ok:
                neg_a1 += 1
                if example is None:
                    example = {
                        "tables": tables.tolist(),
                        "var_reward": m.var_reward,
                        "sum_exp_cond_var": float(sum(m.exp_cond_var_step)),
                        "inter_step": m.inter_step,
                    }
    return InterStepProbe(n, a1, neg, neg_a1, example)


# -- token cost ---------------------------------------------------------------


@dataclass
class TokenCostReport:
    G: int
    T: int
    L: float  # mean tokens of one full trajectory
    cost_full: float  # G * L
    cost_truncated_k_eq_G: float | None  # measured, k = G
    cost_truncated_k_star: float | None  # measured, k = k_star
    k_star: int
    predicted_truncated: float  # G * L / T

    @property
    def ratio_to_prediction(self) -> float | None:
        if self.cost_truncated_k_star is None:
            return None
        return self.cost_truncated_k_star / self.predicted_truncated

    def to_json(self) -> dict:
        return {**asdict(self), "ratio_to_prediction": self.ratio_to_prediction}


def _tokens(rec) -> int:
    return int(rec["tokens_generated"] if isinstance(rec, dict) else rec.tokens_generated)


def token_cost_accounting(
    full_logs: Iterable,
    G: int,
    T: int,
    truncated_logs: Iterable | None = None,
    truncated_full_k_logs: Iterable | None = None,
) -> TokenCostReport:
    """Measured token costs against the G*L versus G*L/T cost model.

    ``full_logs`` are single full trajectories; ``truncated_logs`` are
    truncated rollouts at k = max(2, round(G/T)); ``truncated_full_k_logs``
    truncated rollouts at k = G.
    """
    full = [_tokens(r) for r in full_logs]
    if not full:
        raise ValueError("no full-trajectory logs")
    L = float(np.mean(full))

    def mean_or_none(logs):
        if logs is None:
            return None
        vals = [_tokens(r) for r in logs]
        return float(np.mean(vals)) if vals else None

    return TokenCostReport(
        G=G,
        T=T,
        L=L,
        cost_full=G * L,
        cost_truncated_k_eq_G=mean_or_none(truncated_full_k_logs),
        cost_truncated_k_star=mean_or_none(truncated_logs),
        k_star=max(2, round(G / T)),
        predicted_truncated=G * L / T,
    )


def measure_env_token_costs(
    G: int = 8,
    hops: int = 3,
    vocab_size: int = 8,
    n_tasks: int = 50,
    seed: int = 0,
    margin: float = 6.0,
) -> TokenCostReport:
    """Token counts from real rollouts of a near chain-following policy (T = hops + 1 steps)."""
    from .env import generate_task
    from .judge import OracleJudge
    from .policy import chain_following_policy
    from .sampler import RolloutConfig, rollout_single, rollout_truncated

    T = hops + 1
    policy = chain_following_policy(vocab_size, margin=margin)
    judge = OracleJudge()
    rng = np.random.default_rng(seed)
    k_star = max(2, round(G / T))
    full, trunc, trunc_g = [], [], []
    for i in range(n_tasks):
        task = generate_task(seed * 1_000_003 + i, hops, vocab_size)
        cfg = RolloutConfig(k=k_star, budget=T)
        full += [rollout_single(task, policy, None, cfg, rng) for _ in range(G)]
        trunc.append(rollout_truncated(task, policy, judge, cfg, rng))
        trunc_g.append(rollout_truncated(task, policy, judge, RolloutConfig(k=G, budget=T), rng))
    return token_cost_accounting(full, G, T, trunc, trunc_g)


@dataclass
class EqualVarianceCostCheck:
    tokens: TokenCostReport
    step_var_over_k: Estimate  # (1/k) E Var[step advantage], k = k_star
    traj_var_over_G: Estimate  # (1/G) Var[trajectory advantage]
    cost_ok: bool
    variance_ok: bool

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens.to_json(),
            "step_var_over_k": asdict(self.step_var_over_k),
            "traj_var_over_G": asdict(self.traj_var_over_G),
            "cost_ok": self.cost_ok,
            "variance_ok": self.variance_ok,
        }


def check_equal_variance_cost(G: int = 8, T: int = 4, trials: int = 100_000, seed: int = 0, n_tasks: int = 50, cost_tol: float = 0.25) -> EqualVarianceCostCheck:
    """Token cost at k* = G/T against (1/T) of the full-group cost, plus the equal-variance condition."""
    tokens = measure_env_token_costs(G=G, hops=T - 1, n_tasks=n_tasks, seed=seed)
    spec = RewardProcessSpec.iid(T)
    seeds = np.random.SeedSequence(seed).spawn(T + 1)
    k = tokens.k_star
    steps = [estimate_step_adv_variance(spec, k, trials, t, np.random.default_rng(seeds[t])) for t in range(1, T + 1)]
    worst = max(steps, key=lambda e: e.value)
    traj = estimate_traj_adv_variance(spec, G, trials, np.random.default_rng(seeds[0]))
    lhs = Estimate(worst.value / k, worst.sigma / k)
    rhs = Estimate(traj.value / G, traj.sigma / G)
    cost_ok = tokens.cost_truncated_k_star is not None and tokens.cost_truncated_k_star <= (1 + cost_tol) * tokens.cost_full / T
    variance_ok = lhs.value <= rhs.value + SIGMA_MULT * math.hypot(lhs.sigma, rhs.sigma)
    return EqualVarianceCostCheck(tokens, lhs, rhs, bool(cost_ok), bool(variance_ok))


# -- live environment source --------------------------------------------------


def live_step_and_traj_variance(
    policy,
    hops: int = 3,
    vocab_size: int = 8,
    k: int = 5,
    n_prefixes: int = 200,
    budget: int = 4,
    seed: int = 0,
) -> dict:
    """The same two sides measured on env rollouts scored by the oracle judge.

    Rewards after an answer are zero, so the trajectory reward is the sum of
    dense step rewards along the path.  Assumptions hold only approximately.
    """
    from .env import generate_task, initial_state
    from .judge import OracleJudge
    from .sampler import Prefix, RolloutConfig, advance, dense_reward, rollout_single, sample_step_group

    judge = OracleJudge()
    cfg = RolloutConfig(k=k, budget=budget)
    rng = np.random.default_rng(seed)
    traj_samples = []
    step_samples = {t: [] for t in range(1, budget + 1)}
    for i in range(n_prefixes):
        task = generate_task(seed * 1_000_003 + i, hops, vocab_size)
        R = np.array([rollout_single(task, policy, judge, cfg, rng).total_reward for _ in range(k)])
        traj_samples.append(float(((R - R.mean()) ** 2).mean()))
        prefix = Prefix(initial_state(task))
        done = False
        for t in range(1, budget + 1):
            if done:
                step_samples[t].append(0.0)
                continue
            group = sample_step_group(policy, prefix, k, 1.0, rng, step_index=t)
            r = np.array([dense_reward(judge, prefix, b, t, cfg).total for b in group.candidates])
            step_samples[t].append(float(((r - r.mean()) ** 2).mean()))
            nxt = group.candidates[int(rng.integers(k))]
            if nxt.kind == "answer":
                done = True
            else:
                prefix = advance(prefix, nxt, cfg, policy.n_entities)
    traj = batch_means(np.array(traj_samples), n_batches=10)
    steps = {t: batch_means(np.array(v), n_batches=10) for t, v in step_samples.items()}
    return {
        "var_traj_adv": asdict(traj),
        "exp_cond_var_step_adv": {t: asdict(e) for t, e in steps.items()},
        "ratio": max(e.value for e in steps.values()) / traj.value if traj.value else None,
    }

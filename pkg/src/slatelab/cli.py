"""Command-line entry point: ``slatelab {train,compare,sweep,variance,judge-smoke}``.

Run-config keys can be overridden on any training subcommand with
``--section.key=value`` flags, e.g. ``slatelab train --train.k=3``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import httpx

from .config import ConfigError, RunConfig, load_config
from .experiments import run_compare, run_sweep
from .judge import (
    JudgeTransportError,
    MalformedResponseError,
    OutOfRangeScoreError,
    RemoteJudgeConfig,
    remote_score_raw,
    render_prompt,
)
from .trainer import train
from . import variance_lab as lab

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_JUDGE = 3
EXIT_BOUND = 4

GOLDEN_DIR = Path(__file__).parent / "judge" / "golden"
STUB_RESPONSE = "<explanation> stub judge </explanation>\n<score> 0 </score>"

log = logging.getLogger("slatelab")


def _seeds(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out += range(int(lo), int(hi) + 1)
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError("empty seed list")
    return out


def _load(args, overrides: Sequence[str]) -> RunConfig:
    cfg = load_config(args.config, overrides)
    if getattr(args, "out", None):
        cfg.output.dir = args.out
    return cfg


def cmd_train(args, overrides) -> int:
    cfg = _load(args, overrides)
    res = train(cfg, run_dir=cfg.output.dir)
    last = res.metrics[-1] if res.metrics else None
    if last is None:
        print(f"no updates run; headers written to {cfg.output.dir}")
    else:
        print(f"{cfg.train.mode}: {last.update} updates, {last.tokens} tokens, rolling EM {last.em_rate:.3f} -> {cfg.output.dir}")
    return EXIT_OK


def cmd_compare(args, overrides) -> int:
    base = _load(args, overrides)
    arms = [(mode, base.replace(**{"train.mode": mode})) for mode in args.modes.split(",")]
    for _, cfg in arms:
        cfg.validate()
    report = run_compare(arms, _seeds(args.seeds), args.threshold, args.token_budget, base.output.dir)
    for label in report.labels():
        arms_ = report.by_label(label).values()
        hits = [a.tokens_to_threshold for a in arms_ if a.tokens_to_threshold is not None]
        print(f"{label:>18}: mean final EM {report.mean_final_em(label):.3f}; reached {args.threshold} on {len(hits)}/{len(arms_)} seeds")
    first = arms[0][0]
    for label, _ in arms[1:]:
        print(f"{first} faster than {label} on {report.faster_pairs(first, label)} seeds")
    return EXIT_OK


def cmd_sweep(args, overrides) -> int:
    base = _load(args, overrides)
    values = [v.strip() for v in args.values.split(",")]
    for v in values:
        base.replace(**{args.key: v}).validate()
    report = run_sweep(base, args.key, values, _seeds(args.seeds), args.threshold, base.output.dir)
    for label in report.labels():
        print(f"{label:>16}: mean final EM {report.mean_final_em(label):.3f}")
    return EXIT_OK


def _spec_from_args(args) -> lab.RewardProcessSpec:
    profile = [float(v) for v in args.profile.split(",")] if args.profile else [2.0 / 3.0] * args.T
    if len(profile) == 1:
        profile = profile * args.T
    return lab.RewardProcessSpec(args.T, tuple(profile), args.gamma, args.coupling, args.coupling_strength)


def cmd_variance(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unknown arguments: {' '.join(overrides)}")
    try:
        spec = _spec_from_args(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reports = []
    extras: dict = {}
    ok = True
    if args.preset in ("process", "all"):
        reports.append(lab.check_theorem(spec, k=args.k, trials=args.trials, seed=args.seed, normalized=args.normalized))
    if args.preset in ("violation", "all"):
        reports.append(lab.violation_probe(seed=args.seed, trials=args.trials, k=args.k))
    for r in reports:
        flags = ",".join(k for k, v in r.assumption_flags.items() if not v) or "none"
        print(
            f"T={r.T} k=G={r.k}: ratio {r.ratio:.4f} +/- {r.ci_halfwidth:.4f}; "
            f"general bound {'holds' if r.bound_1 else 'VIOLATED'}; "
            f"1/T bound {'holds' if r.bound_1_over_T else 'fails'}; violated assumptions: {flags}"
        )
        ok &= r.enabled_bounds_hold
    if args.preset in ("token-cost", "all"):
        p2 = lab.check_equal_variance_cost(G=args.G, T=args.T, trials=args.trials, seed=args.seed)
        extras["equal_variance_cost"] = p2.to_json()
        t = p2.tokens
        print(f"tokens: full G*L = {t.cost_full:.1f}, truncated at k*={t.k_star}: {t.cost_truncated_k_star:.1f} (predicted {t.predicted_truncated:.1f})")
        print(f"cost condition {'holds' if p2.cost_ok else 'fails'}; variance condition {'holds' if p2.variance_ok else 'fails'}")
        ok &= p2.cost_ok and p2.variance_ok
        for r in reports:
            r.token_cost_full = int(round(t.cost_full))
            r.token_cost_truncated = int(round(t.cost_truncated_k_star or 0))
    if args.preset in ("inter-step", "all"):
        probe = lab.inter_step_probe(seed=args.seed)
        extras["inter_step_probe"] = probe.to_json()
        print(
            f"inter-step probe: {probe.negative_inter_step}/{probe.searched} processes with negative inter-step terms, "
            f"{probe.negative_with_nonneg_future_cov} of them with non-negative future covariance"
        )
    if args.out:
        out = Path(args.out)
        if reports:
            lab.write_reports(reports, out)
        if extras:
            out.mkdir(parents=True, exist_ok=True)
            (out / "extras.json").write_text(json.dumps(extras, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_BOUND


def first_difference(a: str, b: str) -> int | None:
    """Byte offset of the first difference between two texts (UTF-8), or None."""
    x, y = a.encode(), b.encode()
    for i, (p, q) in enumerate(zip(x, y)):
        if p != q:
            return i
    return None if len(x) == len(y) else min(len(x), len(y))


def cmd_judge_smoke(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unknown arguments: {' '.join(overrides)}")
    golden = Path(args.golden_dir) if args.golden_dir else GOLDEN_DIR
    fields = json.loads((golden / "fields.json").read_text())
    status = EXIT_OK
    for kind in ("think", "query", "answer"):
        prompt = render_prompt(kind, fields)
        expected = (golden / f"{kind}_rendered.txt").read_text()
        offset = first_difference(prompt, expected)
        if offset is not None:
            print(f"{kind}: rendered prompt differs from golden file at byte {offset}")
            status = 1
    if status != EXIT_OK:
        return status
    if args.stub:
        client = httpx.Client(transport=httpx.MockTransport(lambda req: httpx.Response(200, json={"choices": [{"text": STUB_RESPONSE}]})))
        endpoint = "http://stub.invalid/v1/completions"
    elif args.endpoint:
        client = httpx.Client(timeout=args.timeout)
        endpoint = args.endpoint
    else:
        raise ConfigError("judge-smoke needs --endpoint or --stub")
    cfg = RemoteJudgeConfig(
        endpoint=endpoint,
        model=args.model,
        temperature=args.temperature,
        retries=args.retries,
        timeout=args.timeout,
        response_path=args.response_path,
    )
    with client:
        for kind in ("think", "query", "answer"):
            verdict, raw = remote_score_raw(cfg, kind, fields, client)
            print(f"[{kind}] score {verdict.score:+d}")
            print(f"[{kind}] raw: {raw}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slatelab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")

    sp = sub.add_parser("train", help="run one training configuration")
    run_args(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("compare", help="paired-seed modes under a matched token budget")
    run_args(sp)
    sp.add_argument("--modes", default="slate,full_group_dense,em_final_only")
    sp.add_argument("--seeds", default="0-9")
    sp.add_argument("--threshold", type=float, default=0.8)
    sp.add_argument("--token-budget", type=int, default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="one config key over several values, paired seeds")
    run_args(sp)
    sp.add_argument("--key", default="train.k")
    sp.add_argument("--values", default="1,3,5,7")
    sp.add_argument("--seeds", default="0-9")
    sp.add_argument("--threshold", type=float, default=0.8)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("variance", help="Monte-Carlo variance checks")
    sp.add_argument("--preset", choices=("process", "violation", "token-cost", "inter-step", "all"), default="process")
    sp.add_argument("--T", type=int, default=4)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--G", type=int, default=8, help="full-group size for the token-cost check")
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--profile", help="comma-separated per-step variances (one value is broadcast)")
    sp.add_argument("--gamma", type=float, default=0.0, help="future-covariance knob")
    sp.add_argument("--coupling", choices=("independent", "prefix_coupled"), default="independent")
    sp.add_argument("--coupling-strength", type=float, default=0.5)
    sp.add_argument("--normalized", action="store_true", help="also measure std-normalized advantages")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_variance)

    sp = sub.add_parser("judge-smoke", help="render the judge prompts and query an endpoint")
    sp.add_argument("--endpoint")
    sp.add_argument("--stub", action="store_true", help="answer from an in-process stub")
    sp.add_argument("--model", default="judge")
    sp.add_argument("--temperature", type=float, default=0.0)
    sp.add_argument("--retries", type=int, default=2)
    sp.add_argument("--timeout", type=float, default=30.0)
    sp.add_argument("--response-path", default="choices.0.text")
    sp.add_argument("--golden-dir")
    sp.set_defaults(func=cmd_judge_smoke)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (JudgeTransportError, MalformedResponseError, OutOfRangeScoreError) as exc:
        print(f"judge error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_JUDGE


if __name__ == "__main__":
    sys.exit(main())

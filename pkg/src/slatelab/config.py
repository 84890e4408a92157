"""Run configuration: flat dotted ``key = value`` files with command-line overrides.

Example file::

    # 3-hop chain, dense judge rewards
    env.hops = 3
    train.mode = slate
    train.k = 5
    output.dir = runs/slate-k5
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

MODES = ("slate", "full_group_dense", "truncated_sparse", "em_final_only", "full_group_sparse")
TRUNCATED_MODES = ("slate", "truncated_sparse", "em_final_only")


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    hops: int = 3
    vocab_size: int = 8
    top_k: int = 3
    seed: int = 0


@dataclass
class TrainSection:
    mode: str = "slate"
    k: int = 5
    G: int = 5
    B: int = 4
    # "lambda" is reserved in Python; the file key is train.lambda
    lam: float = 0.1
    eta: float = 0.7
    eps_adv: float = 1e-6
    clip_eps: float = 0.2
    kl_beta: float = 0.001
    learning_rate: float = 3.0
    steps: int = 500
    batch_size: int = 1
    selection: str = "reward_weighted"
    old_policy_refresh: str = "per_group"
    ref_refresh: int = 0
    temperature: float = 1.0
    std: str = "population"
    think_len: int = 1
    payload_len: int = 1
    eval_episodes: int = 1
    em_window: int = 50
    token_budget: int = 0


@dataclass
class JudgeSection:
    mode: str = "oracle"
    endpoint: str = ""
    model: str = "judge"
    temperature: float = 0.0
    retries: int = 2
    strict: bool = True
    timeout: float = 30.0
    response_path: str = "choices.0.text"
    max_concurrency: int = 4


@dataclass
class OutputSection:
    dir: str = "runs/default"
    log_every: int = 1
    checkpoint_every: int = 100
    trajectories: bool = True
    wall_time: bool = False


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    train: TrainSection = field(default_factory=TrainSection)
    judge: JudgeSection = field(default_factory=JudgeSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        e, t, j, o = self.env, self.train, self.judge, self.output
        checks = [
            (e.hops >= 1, "env.hops must be >= 1"),
            (e.vocab_size >= e.hops + 4, "env.vocab_size must be >= env.hops + 4"),
            (e.top_k >= 1, "env.top_k must be >= 1"),
            (t.mode in MODES, f"train.mode must be one of {', '.join(MODES)}"),
            (t.k >= 1, "train.k must be >= 1"),
            (t.G >= 2, "train.G must be >= 2"),
            (t.B >= 1, "train.B must be >= 1"),
            (t.lam >= 0, "train.lambda must be >= 0"),
            (t.eta > 0, "train.eta must be > 0"),
            (t.eps_adv > 0, "train.eps_adv must be > 0"),
            (0 < t.clip_eps < 1, "train.clip_eps must lie in (0, 1)"),
            (t.kl_beta >= 0, "train.kl_beta must be >= 0"),
            (t.learning_rate > 0, "train.learning_rate must be > 0"),
            (t.steps >= 0, "train.steps must be >= 0"),
            (t.batch_size >= 1, "train.batch_size must be >= 1"),
            (t.selection in ("best_of_k", "reward_weighted"), "train.selection must be best_of_k or reward_weighted"),
            (t.old_policy_refresh in ("per_group", "per_batch"), "train.old_policy_refresh must be per_group or per_batch"),
            (t.ref_refresh >= 0, "train.ref_refresh must be >= 0"),
            (t.temperature > 0, "train.temperature must be > 0"),
            (t.std in ("population", "sample"), "train.std must be population or sample"),
            (1 <= t.think_len <= 4 and 1 <= t.payload_len <= 4, "block lengths must lie in [1, 4]"),
            (t.eval_episodes >= 0, "train.eval_episodes must be >= 0"),
            (t.em_window >= 1, "train.em_window must be >= 1"),
            (t.token_budget >= 0, "train.token_budget must be >= 0"),
            (j.mode in ("oracle", "remote"), "judge.mode must be oracle or remote"),
            (j.mode != "remote" or bool(j.endpoint), "judge.endpoint is required when judge.mode = remote"),
            (j.retries >= 0, "judge.retries must be >= 0"),
            (j.temperature >= 0, "judge.temperature must be >= 0"),
            (j.max_concurrency >= 1, "judge.max_concurrency must be >= 1"),
            (o.log_every >= 1, "output.log_every must be >= 1"),
            (o.checkpoint_every >= 0, "output.checkpoint_every must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    # flat key access -----------------------------------------------------

    def items(self) -> list[tuple[str, Any]]:
        out = []
        for section in ("env", "train", "judge", "output"):
            for f in dataclasses.fields(getattr(self, section)):
                out.append((f"{section}.{_file_key(f.name)}", getattr(getattr(self, section), f.name)))
        return out

    def set(self, key: str, raw: str | Any) -> None:
        section, _, name = key.partition(".")
        if section not in ("env", "train", "judge", "output") or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        attr = _attr_name(name)
        types = {f.name: f.type for f in dataclasses.fields(obj)}
        if attr not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, attr, _coerce(key, raw, type(getattr(obj, attr))))

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"train.k": 3})``."""
        new = RunConfig(
            env=dataclasses.replace(self.env),
            train=dataclasses.replace(self.train),
            judge=dataclasses.replace(self.judge),
            output=dataclasses.replace(self.output),
        )
        for key, value in overrides.items():
            new.set(key, value)
        return new


def _file_key(attr: str) -> str:
    return "lambda" if attr == "lam" else attr


def _attr_name(key: str) -> str:
    return "lam" if key == "lambda" else key


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, raw: Any, kind: type) -> Any:
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, kind):
            return raw
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}")
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return text


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base.replace() if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the file (if any), then ``key=value`` overrides; validated."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config_text(text, cfg)
    for item in overrides:
        key, sep, value = item.lstrip("-").partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        cfg.set(key.strip(), value)
    return cfg.validate()

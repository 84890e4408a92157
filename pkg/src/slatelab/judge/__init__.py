from .oracle import OracleJudge, oracle_score_answer, oracle_score_query, oracle_score_think
from .prompts import (
    MalformedResponseError,
    MissingFieldError,
    OutOfRangeScoreError,
    render_prompt,
)
from .remote import (
    JudgeTransportError,
    RemoteJudge,
    RemoteJudgeConfig,
    remote_score,
    remote_score_raw,
    render_context,
)
from .reward import JudgeVerdict, RewardBreakdown, composite_reward, parse_judge_response

__all__ = [
    "JudgeTransportError",
    "JudgeVerdict",
    "MalformedResponseError",
    "MissingFieldError",
    "OracleJudge",
    "OutOfRangeScoreError",
    "RemoteJudge",
    "RemoteJudgeConfig",
    "RewardBreakdown",
    "composite_reward",
    "oracle_score_answer",
    "oracle_score_query",
    "oracle_score_think",
    "parse_judge_response",
    "remote_score",
    "remote_score_raw",
    "render_context",
    "render_prompt",
]

from __future__ import annotations

import re

THINK_TEMPLATE = """Evaluate the quality of the following reasoning step in a search-based question answering system.

Context: {context}

Current Thinking Step: {thinking}

The reasoning should be based on the previous context and the question, nothing else.

Evaluate this thinking step on these criteria:
1. Relevance: Does it address the question appropriately?
2. Clarity: Is the reasoning clear and logical?
3. Specificity: Does it identify concrete information needs?
4. Progress: Does it move toward answering the question?
5. Faithfulness: Does it accurately reflect the information in the previous context? Is there any out-of-context information?

Provide a score using EXACTLY one of these three values:
- +1: GOOD -- Clear, relevant reasoning that identifies specific information needs and moves toward answering the question
-  0: ACCEPTABLE -- Reasoning is somewhat relevant but vague, lacks specificity, or makes only minimal progress
- -1: BAD -- Irrelevant, misleading, or counterproductive reasoning that does not help answer the question

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>"""

QUERY_TEMPLATE = """Evaluate the quality of the following search query for a question answering system.

Context: {context}

Thinking before this query: {thinking}

Generated Query: {query}

IMPORTANT: This is a multi-step reasoning system. The query does NOT need to directly answer the final question in one step. Instead, evaluate whether it makes good progress toward the answer by retrieving useful intermediate information.

Evaluate this query on these criteria:
1. Relevance: Will it retrieve information that makes progress toward answering the question? (Intermediate steps are valuable!)
2. Specificity: Is it specific enough to get useful results?
3. Searchability: Is it well-formed for a search engine with appropriate keywords? Good queries combine multiple relevant terms.
4. Alignment: Does it align with the thinking step that preceded it?
5. Novelty: Does it explore new information (not redundant with the context)? If the context already contains the answer to what the query is searching for, the query is redundant and unhelpful.

Provide a score using EXACTLY one of these three values:
- +1: GOOD -- Specific, well-formed query that will retrieve useful information to make progress (even if intermediate). Has clear keywords and good searchability. Combines multiple relevant terms or uses specific names/concepts.
-  0: ACCEPTABLE -- Query has some specificity but could be improved. May lack context-specific keywords or be somewhat generic, but shows reasonable attempt at targeting the information need.
- -1: BAD -- Single generic word without context (e.g., just "singer", "perfume", "city"), completely irrelevant to the question, redundant with information already in the context, or so poorly formed it will return millions of unhelpful results.

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>"""

ANSWER_TEMPLATE = """Evaluate if the predicted answer correctly answers the question.

Context: {context}

Ground Truth Answer: {ground_truth}

Predicted Answer: {predicted_answer}

Compare the predicted answer to the ground truth. They don't need to be word-for-word identical, but the predicted answer should convey the same core information.

Provide a score using EXACTLY one of these three values:
- +1: CORRECT -- The predicted answer conveys the same core information as the ground truth
-  0: PARTIALLY CORRECT -- The answer is incomplete, ambiguous, or contains minor inaccuracies
- -1: INCORRECT -- The answer is wrong or contradicts the ground truth

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>"""

TEMPLATES = {"think": THINK_TEMPLATE, "query": QUERY_TEMPLATE, "answer": ANSWER_TEMPLATE}
PLACEHOLDERS = {
    "think": ("context", "thinking"),
    "query": ("context", "thinking", "query"),
    "answer": ("context", "ground_truth", "predicted_answer"),
}


class MissingFieldError(KeyError):
    pass


class MalformedResponseError(ValueError):
    pass


class OutOfRangeScoreError(ValueError):
    pass


def render_prompt(kind: str, fields: dict[str, str]) -> str:
    if kind not in TEMPLATES:
        raise ValueError(f"unknown prompt kind {kind!r}")
    missing = [name for name in PLACEHOLDERS[kind] if name not in fields]
    if missing:
        raise MissingFieldError(f"{kind} prompt needs {missing}")
    # single pass so braces inside field values are never re-substituted
    pattern = re.compile(r"\{(" + "|".join(PLACEHOLDERS[kind]) + r")\}")
    return pattern.sub(lambda m: str(fields[m.group(1)]), TEMPLATES[kind])


_SCORE_RE = re.compile(r"<score>(.*?)</score>", re.S)
_EXPLANATION_RE = re.compile(r"<explanation>(.*?)</explanation>", re.S)
_NUMBER_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")


def parse_score(text: str) -> tuple[int, str]:
    """Return (score, explanation) from the last ``<score>`` block of ``text``."""
    blocks = _SCORE_RE.findall(text)
    if not blocks:
        raise MalformedResponseError("no <score> block in judge response")
    raw = blocks[-1].strip()
    if not _NUMBER_RE.match(raw):
        raise MalformedResponseError(f"unparsable score {raw!r}")
    value = float(raw)
    if value not in (-1.0, 0.0, 1.0):
        raise OutOfRangeScoreError(f"score {raw} outside {{-1, 0, +1}}")
    explanations = _EXPLANATION_RE.findall(text)
    return int(value), explanations[-1].strip() if explanations else ""

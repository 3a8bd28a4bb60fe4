"""Parsing and validation of ``<think>...</think><answer>...</answer>`` responses."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

_TAG_RE = re.compile(r"</?(?:think|answer)>")


class Violation(str, enum.Enum):
    NONE = "NONE"
    MISSING_THINK = "MISSING_THINK"
    MISSING_ANSWER = "MISSING_ANSWER"
    DUPLICATE_TAGS = "DUPLICATE_TAGS"
    WRONG_ORDER = "WRONG_ORDER"


@dataclass(frozen=True)
class ParsedResponse:
    think_text: str
    answer_text: str
    well_formed: bool
    violation: Violation

    def serialize(self) -> str:
        return f"{THINK_OPEN}{self.think_text}{THINK_CLOSE}{ANSWER_OPEN}{self.answer_text}{ANSWER_CLOSE}"


def _malformed(violation: Violation) -> ParsedResponse:
    return ParsedResponse("", "", False, violation)


def parse_response(raw: str) -> ParsedResponse:
    """Split a response into its think and answer blocks.

    Exactly one block of each kind is required, and the think block must be
    closed before the answer block opens. Tags are literal and case-sensitive.
    Text outside the two blocks is ignored. On failure the first violation in
    the order MISSING_THINK, MISSING_ANSWER, DUPLICATE_TAGS, WRONG_ORDER is
    reported.
    """
    text = raw.strip()
    positions: dict[str, list[int]] = {tag: [] for tag in TAGS}
    for match in _TAG_RE.finditer(text):
        positions[match.group(0)].append(match.start())

    if not positions[THINK_OPEN] or not positions[THINK_CLOSE]:
        return _malformed(Violation.MISSING_THINK)
    if not positions[ANSWER_OPEN] or not positions[ANSWER_CLOSE]:
        return _malformed(Violation.MISSING_ANSWER)
    if any(len(found) > 1 for found in positions.values()):
        return _malformed(Violation.DUPLICATE_TAGS)

    t_open, t_close = positions[THINK_OPEN][0], positions[THINK_CLOSE][0]
    a_open, a_close = positions[ANSWER_OPEN][0], positions[ANSWER_CLOSE][0]
    if not (t_open < t_close < a_open < a_close):
        return _malformed(Violation.WRONG_ORDER)

    think = text[t_open + len(THINK_OPEN) : t_close].strip()
    answer = text[a_open + len(ANSWER_OPEN) : a_close].strip()
    return ParsedResponse(think, answer, True, Violation.NONE)


def format_reward(raw: str) -> float:
    """1.0 for a well-formed think-then-answer response, else 0.0."""
    return 1.0 if parse_response(raw).well_formed else 0.0


def extract_answer(raw: str) -> str | None:
    parsed = parse_response(raw)
    return parsed.answer_text if parsed.well_formed else None

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reasonctl.reasoning_format import (
    Violation,
    extract_answer,
    format_reward,
    parse_response,
)

# Plain text that cannot contain a tag token.
tagless = st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=40)


@pytest.mark.parametrize(
    "raw, think, answer",
    [
        ("<think>a</think><answer>b</answer>", "a", "b"),
        ("  preamble <think> x y </think>\n<answer>z</answer> tail ", "x y", "z"),
        ("<think></think><answer></answer>", "", ""),
    ],
)
def test_well_formed(raw, think, answer):
    p = parse_response(raw)
    assert p.well_formed and p.violation is Violation.NONE
    assert (p.think_text, p.answer_text) == (think, answer)


@pytest.mark.parametrize(
    "raw, violation",
    [
        ("hello world", Violation.MISSING_THINK),
        ("<think>x</think>", Violation.MISSING_ANSWER),
        ("<answer>b</answer><think>a</think>", Violation.WRONG_ORDER),
        ("<think>a</think><think>b</think><answer>c</answer>", Violation.DUPLICATE_TAGS),
        ("<answer>b</answer>", Violation.MISSING_THINK),
        ("<think>a<answer>b</think></answer>", Violation.WRONG_ORDER),
        ("<think>a</think><answer>b", Violation.MISSING_ANSWER),
        ("<THINK>a</THINK><answer>b</answer>", Violation.MISSING_THINK),
        ("<answer>b</answer><answer>b</answer>", Violation.MISSING_THINK),
    ],
)
def test_violations(raw, violation):
    p = parse_response(raw)
    assert not p.well_formed
    assert p.violation is violation
    assert format_reward(raw) == 0.0


def test_format_reward_examples():
    assert format_reward("<think>x</think><answer>y</answer>") == 1.0
    assert format_reward("<think>x</think>") == 0.0
    assert format_reward("<think>a</think><think>b</think><answer>c</answer>") == 0.0


def test_extract_answer():
    assert extract_answer("<think>a</think><answer> b </answer>") == "b"
    assert extract_answer("nope") is None


@given(tagless, tagless)
def test_well_formed_for_any_tagless_content(a, b):
    raw = f"<think>{a}</think><answer>{b}</answer>"
    assert format_reward(raw) == 1.0


@given(tagless, tagless, st.text(alphabet=" \t\n", max_size=5), st.text(alphabet=" \t\n", max_size=5))
def test_whitespace_invariance(a, b, lead, trail):
    for raw in (f"<think>{a}</think><answer>{b}</answer>", f"<answer>{b}</answer><think>{a}</think>", a):
        assert format_reward(lead + raw + trail) == format_reward(raw)


@given(tagless, tagless, tagless)
def test_answer_first_scores_zero(a, b, mid):
    assert format_reward(f"<answer>{b}</answer>{mid}<think>{a}</think>") == 0.0


@given(tagless, tagless)
def test_round_trip_fixed_point(a, b):
    p = parse_response(f"<think>{a}</think><answer>{b}</answer>")
    again = parse_response(p.serialize())
    assert again == p
    assert parse_response(again.serialize()) == again


@given(st.lists(st.sampled_from(["<think>", "</think>", "<answer>", "</answer>", "x", " "]), max_size=10))
def test_violation_iff_not_well_formed(parts):
    p = parse_response("".join(parts))
    assert p.well_formed == (p.violation is Violation.NONE)
    if p.well_formed:
        raw = "".join(parts)
        assert raw.index("<think>") < raw.index("<answer>")


def test_regex_declarative_oracle_agrees_on_samples():
    pattern = re.compile(r"^(?:(?!</?(?:think|answer)>).)*<think>((?:(?!</?(?:think|answer)>).)*)</think>"
                         r"((?:(?!</?(?:think|answer)>).)*)<answer>((?:(?!</?(?:think|answer)>).)*)</answer>"
                         r"(?:(?!</?(?:think|answer)>).)*$", re.S)  # fmt: skip
    for raw in ["<think>a</think>mid<answer>b</answer>", "<think>a</think>", "x<think></think><answer>z</answer>y"]:
        m = pattern.match(raw)
        p = parse_response(raw)
        assert p.well_formed == bool(m)
        if m:
            assert p.think_text == m.group(1).strip() and p.answer_text == m.group(3).strip()

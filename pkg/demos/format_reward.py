"""
Format reward on reasoning responses
====================================

A response earns 1.0 only when it has exactly one think block followed by
exactly one answer block. Everything else earns 0.0 and carries the first
violation found.
"""

from reasonctl.reasoning_format import format_reward, parse_response

samples = [
    "<think>two boxes, one tall</think><answer>a tall red box beside a small one</answer>",
    "<answer>a car</answer><think>late thought</think>",
    "<think>no answer at all</think>",
    "<think>a</think><think>b</think><answer>c</answer>",
    "<THINK>upper case tags do not count</THINK><answer>x</answer>",
]

for s in samples:
    p = parse_response(s)
    tag = "ok" if p.well_formed else p.violation.value
    print(f"{format_reward(s):.1f}  {tag:<15} {s[:60]}")

# The answer text is what goes to the image generator.
print(repr(parse_response(samples[0]).answer_text))

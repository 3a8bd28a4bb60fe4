"""Reason-then-generate tooling for controllable image generation.

A reasoning policy reads a control image and a short caption, writes an
enriched caption, and an image generator renders it. This package curates
the reasoning data, trains the policy (SFT then group-relative RL), ranks
best-of-K candidates at inference time, and evaluates the results. Every
large model sits behind a backend protocol with a deterministic mock.
"""

__version__ = "0.1.0"

from .control_maps import CannyParams, ControlMap, ControlType, binarize, canny_extract  # noqa: E402
from .reasoning_format import ParsedResponse, Violation, format_reward, parse_response  # noqa: E402

__all__ = [
    "CannyParams",
    "ControlMap",
    "ControlType",
    "ParsedResponse",
    "Violation",
    "binarize",
    "canny_extract",
    "format_reward",
    "parse_response",
]

"""Scalar rewards: RL alignment + format reward, and the candidate-ranking reward."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .control_maps import ControlMap, load_image
from .errors import BackendError, ReasonCtlError
from .reasoning_format import parse_response

logger = logging.getLogger(__name__)


class UnscorableCandidate(ReasonCtlError):
    pass


@dataclass(frozen=True)
class RewardBreakdown:
    align: float
    format: float
    total: float
    empty_answer: bool = False


@dataclass(frozen=True)
class OrmReward:
    """Candidate reward. ``semantic`` and ``structural_penalty`` are the
    weighted (and optionally normalised) terms; ``raw_*`` keep the backend
    outputs."""

    semantic: float
    structural_penalty: float
    total: float
    raw_semantic: float
    raw_penalty: float


def normalize_score(raw: float, raw_range: tuple[float, float]) -> float:
    lo, hi = raw_range
    if not hi > lo:
        raise ValueError(f"invalid scorer range {raw_range}")
    return float(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))


def alignment_reward(gt_image, enhanced_prompt: str, scorer) -> float:
    """Image-text alignment of the ground-truth image and an enhanced prompt,
    mapped from the scorer's declared raw range onto [0, 1]."""
    if not enhanced_prompt.strip():
        logger.warning("empty enhanced prompt; alignment reward set to 0")
        return 0.0
    return normalize_score(scorer.score(gt_image, enhanced_prompt), scorer.raw_range)


def rft_reward(gt_image, response: str, scorer) -> RewardBreakdown:
    parsed = parse_response(response)
    if not parsed.well_formed:
        return RewardBreakdown(0.0, 0.0, 0.0)
    empty = not parsed.answer_text.strip()
    align = 0.0 if empty else alignment_reward(gt_image, parsed.answer_text, scorer)
    return RewardBreakdown(align, 1.0, align + 1.0, empty_answer=empty)


def make_rft_reward(scorer, loader: Callable = load_image) -> Callable:
    """Build ``reward_fn(record, response)`` that scores against ``record.gt_image_path``.

    Ground-truth images are loaded once per path.
    """
    cache: dict[str, np.ndarray] = {}

    def reward_fn(record, response: str) -> RewardBreakdown:
        path = str(record.gt_image_path)
        if path not in cache:
            cache[path] = loader(path)
        return rft_reward(cache[path], response, scorer)

    return reward_fn


def orm_reward_with_map(
    candidate_image,
    original_prompt: str,
    control_map: ControlMap,
    scorer,
    perceptual,
    extractor,
    semantic_weight: float = 1.0,
    structural_weight: float = 1.0,
) -> tuple[OrmReward, ControlMap]:
    try:
        extracted = extractor.extract(candidate_image, control_map.control_type)
    except BackendError as exc:
        raise UnscorableCandidate(f"control extraction failed: {exc}") from exc
    if extracted.control_type != control_map.control_type:
        raise UnscorableCandidate(
            f"extractor returned {extracted.control_type.value}, expected {control_map.control_type.value}"
        )
    raw_semantic = float(scorer.score(candidate_image, original_prompt))
    raw_penalty = float(perceptual.distance(extracted, control_map))
    semantic = semantic_weight * raw_semantic
    penalty = structural_weight * raw_penalty
    return OrmReward(semantic, penalty, semantic - penalty, raw_semantic, raw_penalty), extracted


def orm_reward(
    candidate_image,
    original_prompt: str,
    control_map: ControlMap,
    scorer,
    perceptual,
    extractor,
    semantic_weight: float = 1.0,
    structural_weight: float = 1.0,
) -> OrmReward:
    """Semantic score against the ORIGINAL prompt minus the perceptual
    distance between the re-extracted control map and the requested one.

    Raises :class:`UnscorableCandidate` when extraction fails.
    """
    reward, _ = orm_reward_with_map(
        candidate_image, original_prompt, control_map, scorer, perceptual, extractor,
        semantic_weight, structural_weight,
    )  # fmt: skip
    return reward


def _minmax(x: np.ndarray) -> np.ndarray:
    span = x.max() - x.min()
    if span <= 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def combine_orm_terms(
    raw_semantic: Sequence[float],
    raw_penalty: Sequence[float],
    semantic_weight: float = 1.0,
    structural_weight: float = 1.0,
    normalize: bool = False,
) -> list[OrmReward]:
    """Recombine raw ranking terms for a whole candidate set.

    With ``normalize`` each term is min-max scaled across the set before
    weighting, so that a ~20-scale semantic score does not swamp a [0, 1]
    distance.
    """
    s = np.asarray(raw_semantic, dtype=np.float64)
    p = np.asarray(raw_penalty, dtype=np.float64)
    if normalize and s.size:
        s_used, p_used = _minmax(s), _minmax(p)
    else:
        s_used, p_used = s, p
    out = []
    for rs, rp, su, pu in zip(s, p, s_used, p_used):
        sem = semantic_weight * float(su)
        pen = structural_weight * float(pu)
        out.append(OrmReward(sem, pen, sem - pen, float(rs), float(rp)))
    return out

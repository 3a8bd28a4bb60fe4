"""Best-of-K inference: sample enhanced prompts, render candidates, keep the best."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .backends import Backends
from .control_maps import LABEL, ControlMap
from .curation import question_text
from .errors import BackendError, ReasonCtlError, StageError
from .reasoning_format import parse_response
from .rewards import OrmReward, UnscorableCandidate, combine_orm_terms, orm_reward_with_map
from .utils import append_jsonl, array_digest, derive_seed, json_digest

logger = logging.getLogger(__name__)

DEFAULT_K = 10


class NoValidPrompt(ReasonCtlError):
    pass


class NoScorableCandidate(ReasonCtlError):
    pass


@dataclass
class Candidate:
    index: int
    enhanced_prompt: str
    seed: int
    image: np.ndarray | None = None
    extracted_map: ControlMap | None = None
    reward: OrmReward | None = None
    scorable: bool = True
    error: str | None = None
    timings: dict = field(default_factory=dict)


@dataclass
class SelectionResult:
    winner: Candidate
    all_candidates: list[Candidate]
    audit: list[dict]


@dataclass(frozen=True)
class InferenceConfig:
    k: int = DEFAULT_K
    temperature: float = 1.0
    retry_budget: int = 3
    semantic_weight: float = 1.0
    structural_weight: float = 1.0
    normalize: bool = False
    fallback_to_original: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class InferenceRequest:
    original_prompt: str
    control_map: ControlMap
    k: int = DEFAULT_K
    seed: int = 0


@dataclass
class InferenceResult:
    image: np.ndarray
    selection: SelectionResult
    audit: dict


def enhance_prompts(
    policy,
    question: str,
    k: int,
    seed: int,
    temperature: float = 1.0,
    retry_budget: int = 3,
    log: list | None = None,
) -> list[str]:
    """Sample ``k`` responses and keep their answers as enhanced prompts.

    A malformed sample is resampled up to ``retry_budget`` times with derived
    seeds and dropped after that. Duplicates are kept.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    samples = policy.sample(question, k, temperature, seed)
    prompts = []
    for slot, text in enumerate(samples):
        parsed = parse_response(text)
        attempt = 0
        while not parsed.well_formed and attempt < retry_budget:
            attempt += 1
            text = policy.sample(question, 1, temperature, derive_seed(seed, "resample", slot, attempt))[0]
            parsed = parse_response(text)
        if parsed.well_formed:
            prompts.append(parsed.answer_text)
        else:
            logger.info("dropping enhancement slot %d after %d resamples (%s)", slot, attempt, parsed.violation.value)
            if log is not None:
                log.append({"slot": slot, "violation": parsed.violation.value, "resamples": attempt})
    if not prompts:
        raise NoValidPrompt(f"no well-formed enhancement among {k} samples")
    return prompts


def generate_candidates(generator, prompts: Sequence[str], control_map: ControlMap, seeds: Sequence[int]) -> list[Candidate]:
    if not prompts:
        raise ValueError("generate_candidates needs at least one prompt")
    if len(seeds) != len(prompts):
        raise ValueError("one seed per prompt is required")
    out = []
    for i, (prompt, seed) in enumerate(zip(prompts, seeds)):
        cand = Candidate(i, prompt, int(seed))
        t0 = time.perf_counter()
        try:
            image = np.asarray(generator.generate(prompt, control_map, int(seed)))
            if image.shape[:2] != control_map.shape:
                raise BackendError("MALFORMED_OUTPUT", f"image shape {image.shape[:2]} != control {control_map.shape}")
            cand.image = image
        except BackendError as exc:
            logger.warning("candidate %d generation failed: %s", i, exc)
            cand.scorable, cand.error = False, str(exc)
        cand.timings["generate_s"] = time.perf_counter() - t0
        out.append(cand)
    return out


def _argmax_lowest_index(candidates: Sequence[Candidate]) -> Candidate | None:
    best = None
    for cand in sorted(candidates, key=lambda c: c.index):
        if not cand.scorable or cand.reward is None:
            continue
        if best is None or cand.reward.total > best.reward.total:
            best = cand
    return best


def candidate_audit(cand: Candidate) -> dict:
    row = {
        "index": cand.index,
        "prompt": cand.enhanced_prompt,
        "seed": cand.seed,
        "scorable": cand.scorable,
        "error": cand.error,
        "image_digest": None if cand.image is None else array_digest(cand.image),
    }
    if cand.reward is not None:
        r = cand.reward
        row.update(
            semantic=r.semantic, structural_penalty=r.structural_penalty, total=r.total,
            raw_semantic=r.raw_semantic, raw_penalty=r.raw_penalty,
        )  # fmt: skip
    return row


def select_best(
    candidates: Sequence[Candidate],
    original_prompt: str,
    control_map: ControlMap,
    backends: Backends,
    weights: tuple[float, float] = (1.0, 1.0),
    normalize: bool = False,
) -> SelectionResult:
    """Score every scorable candidate and return the highest total.

    The semantic term is always scored against ``original_prompt``, never
    the candidate's enhanced prompt. Ties go to the lowest index.
    """
    scored = []
    for cand in candidates:
        if not cand.scorable or cand.image is None:
            cand.scorable = False
            continue
        t0 = time.perf_counter()
        try:
            raw, cand.extracted_map = orm_reward_with_map(
                cand.image, original_prompt, control_map,
                backends.scorer, backends.perceptual, backends.extractor,
            )  # fmt: skip
            scored.append((cand, raw))
        except UnscorableCandidate as exc:
            logger.warning("candidate %d is unscorable: %s", cand.index, exc)
            cand.scorable, cand.error = False, str(exc)
        cand.timings["score_s"] = time.perf_counter() - t0
    if not scored:
        raise NoScorableCandidate("no scorable candidates")
    combined = combine_orm_terms(
        [r.raw_semantic for _, r in scored],
        [r.raw_penalty for _, r in scored],
        weights[0], weights[1], normalize,
    )  # fmt: skip
    for (cand, _), reward in zip(scored, combined):
        cand.reward = reward
    winner = _argmax_lowest_index(candidates)
    audit = [candidate_audit(c) for c in sorted(candidates, key=lambda c: c.index)]
    return SelectionResult(winner, list(candidates), audit)


def run_inference(
    request: InferenceRequest,
    backends: Backends,
    config: InferenceConfig | None = None,
    audit_path: str | Path | None = None,
    audit_extra: dict | None = None,
) -> InferenceResult:
    """Question -> K enhanced prompts -> K images -> ranked winner."""
    config = config or InferenceConfig(k=request.k)
    cmap = request.control_map
    k = request.k
    fallback_used = False
    drops: list = []

    def stage(name, fn):
        try:
            return fn()
        except ReasonCtlError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc

    question = question_text(cmap.control_type, request.original_prompt)
    try:
        prompts = stage(
            "enhance",
            lambda: enhance_prompts(
                backends.policy, question, k, derive_seed(request.seed, "enhance"),
                config.temperature, config.retry_budget, drops,
            ),
        )  # fmt: skip
    except StageError as exc:
        if not (config.fallback_to_original and isinstance(exc.cause, NoValidPrompt)):
            raise
        logger.warning("falling back to the original prompt: %s", exc)
        prompts, fallback_used = [request.original_prompt], True

    seeds = [derive_seed(request.seed, "generate", i) for i in range(len(prompts))]
    candidates = stage("generate", lambda: generate_candidates(backends.generator, prompts, cmap, seeds))
    selection = stage(
        "select",
        lambda: select_best(
            candidates, request.original_prompt, cmap, backends,
            (config.semantic_weight, config.structural_weight), config.normalize,
        ),
    )  # fmt: skip

    req_desc = {
        "original_prompt": request.original_prompt,
        "control_type": cmap.control_type.value,
        "control_digest": array_digest(cmap.payload),
        "k": k,
        "seed": request.seed,
    }
    audit = {
        "request_digest": json_digest(req_desc),
        **req_desc,
        "num_classes": cmap.num_classes if cmap.kind == LABEL else None,
        "question": question,
        "fallback_used": fallback_used,
        "dropped_slots": drops,
        "candidates": selection.audit,
        "winner": selection.winner.index,
        "weights": [config.semantic_weight, config.structural_weight],
        "normalize": config.normalize,
        "tool_version": __version__,
        **(audit_extra or {}),
    }
    if audit_path is not None:
        append_jsonl(audit_path, audit)
    return InferenceResult(selection.winner.image, selection, audit)

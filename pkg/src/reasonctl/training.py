"""Supervised and group-relative reinforcement fine-tuning of the prompt policy.

The trainer never touches model parameters. Every loss here depends on the
parameters only through sequence log-probabilities, so each step hands the
backend a :class:`~reasonctl.backends.GradientSignal` holding
d(loss)/d(log pi(o | q)) per sequence and lets the backend do the rest.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .backends import GradientSignal
from .errors import BackendError, ConfigurationError, DataError, NumericalError, ReasonCtlError
from .reasoning_format import format_reward
from .utils import append_jsonl, canonical_json, derive_seed, json_digest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 12
    kl_coefficient: float = 0.04
    learning_rate: float = 1e-5
    batch_size: int = 1
    steps: int | None = 2400
    epochs: int = 1
    temperature: float = 1.0
    epsilon: float = 1e-8
    clip_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigurationError("group_size must be at least 2")
        if self.kl_coefficient < 0:
            raise ConfigurationError("kl_coefficient must be non-negative")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.steps is not None and self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.clip_ratio is not None and not self.clip_ratio > 0:
            raise ConfigurationError("clip_ratio must be positive when set")

    @classmethod
    def sft_defaults(cls, **overrides) -> "TrainConfig":
        # One epoch, Adam lr 5e-6, batch 6 in the reference setup.
        return cls(**{"learning_rate": 5e-6, "batch_size": 6, "steps": None, "epochs": 1, **overrides})

    @classmethod
    def rft_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**{"learning_rate": 1e-5, "batch_size": 1, "steps": 2400, **overrides})

    def digest(self) -> str:
        return json_digest(asdict(self))


@dataclass
class TrajectoryGroup:
    question: str
    responses: list[str]
    logprobs_current: np.ndarray
    logprobs_ref: np.ndarray
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    # Sampling-time log-probs; only the clipped-ratio objective reads them.
    logprobs_old: np.ndarray | None = None
    seed: int = 0

    @property
    def size(self) -> int:
        return len(self.responses)


@dataclass
class Checkpoint:
    phase: str
    step: int
    config_digest: str
    state_digest: str
    state_ref: str | None = None
    metrics: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingAborted(ReasonCtlError):
    def __init__(self, message: str, last_good: Checkpoint):
        self.last_good = last_good
        super().__init__(f"{message} (last good step {last_good.step})")


def write_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(ckpt.to_dict()) + "\n", encoding="utf-8")


def read_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Checkpoint(**data)
    except (OSError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint metadata {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def sft_loss(records: Sequence, policy, learning_rate: float = 0.0) -> tuple[float, GradientSignal]:
    """Mean negative log-likelihood of the oracle responses, with its signal."""
    if not records:
        raise DataError("sft_loss needs a non-empty batch")
    n = len(records)
    logps = [policy.sequence_logprob(r.question_text, r.response_text) for r in records]
    for i, lp in enumerate(logps):
        if not math.isfinite(lp):
            raise NumericalError(f"non-finite log-probability for batch item {i}")
    loss = -sum(logps) / n
    items = tuple((r.question_text, r.response_text, -1.0 / n) for r in records)
    return max(loss, 0.0), GradientSignal(items, learning_rate)


def compute_advantages(rewards, epsilon: float = 1e-8) -> np.ndarray:
    """Group z-scores using the population standard deviation.

    Groups whose reward spread is at most ``epsilon`` carry no preference
    signal and get all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("advantages need a 1-D reward vector of length >= 2")
    std = r.std()
    if not std > epsilon:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_estimate(logprob_ref, logprob_current) -> np.ndarray:
    """Per-sequence KL estimator exp(d) - d - 1 with d = ref - current (>= 0)."""
    d = np.asarray(logprob_ref, dtype=np.float64) - np.asarray(logprob_current, dtype=np.float64)
    return np.expm1(d) - d


def rft_objective(group: TrajectoryGroup, config: TrainConfig) -> tuple[float, GradientSignal]:
    """Loss to minimise: the negated group objective, averaged over the group.

    The objective per response is A_i * log pi(o_i | q) - beta * KL_i. With
    ``config.clip_ratio`` set, the advantage term becomes the clipped
    importance-ratio surrogate against ``group.logprobs_old``.
    """
    if group.advantages is None:
        raise DataError("advantages must be filled before computing the objective")
    adv = np.asarray(group.advantages, dtype=np.float64)
    lc = np.asarray(group.logprobs_current, dtype=np.float64)
    lr = np.asarray(group.logprobs_ref, dtype=np.float64)
    for name, vec in (("current", lc), ("reference", lr), ("advantage", adv)):
        bad = np.flatnonzero(~np.isfinite(vec))
        if bad.size:
            raise NumericalError(f"non-finite {name} value for response index {int(bad[0])}")
    G = group.size
    if not (adv.size == lc.size == lr.size == G):
        raise DataError("group vectors must all have length G")
    beta = config.kl_coefficient
    kl = kl_estimate(lr, lc)
    # d KL / d lc = 1 - exp(lr - lc)
    dkl = -np.expm1(lr - lc)

    if config.clip_ratio is None:
        policy_term = adv * lc
        dpolicy = adv
    else:
        old = lc if group.logprobs_old is None else np.asarray(group.logprobs_old, dtype=np.float64)
        eps = config.clip_ratio
        ratio = np.exp(lc - old)
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
        unclipped_wins = ratio * adv <= clipped * adv
        policy_term = np.minimum(ratio * adv, clipped * adv)
        dpolicy = np.where(unclipped_wins, ratio * adv, 0.0)

    objective = float((policy_term - beta * kl).sum() / G)
    coef = -(dpolicy - beta * dkl) / G
    items = tuple((group.question, o, float(c)) for o, c in zip(group.responses, coef))
    return -objective, GradientSignal(items, config.learning_rate)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def sample_group(policy, reference, question: str, config: TrainConfig, seed: int) -> TrajectoryGroup:
    """Draw ``group_size`` responses and score them under policy and reference."""
    if config.group_size < 2:
        raise ConfigurationError("group_size must be at least 2")
    try:
        responses = policy.sample(question, config.group_size, config.temperature, seed)
    except BackendError as exc:
        logger.warning("group sampling failed (%s); retrying once", exc)
        responses = policy.sample(question, config.group_size, config.temperature, seed)
    if len(responses) != config.group_size:
        raise DataError(f"policy returned {len(responses)} responses, expected {config.group_size}")
    lc = np.array([policy.sequence_logprob(question, o) for o in responses])
    lr = np.array([reference.sequence_logprob(question, o) for o in responses])
    return TrajectoryGroup(question, list(responses), lc, lr, logprobs_old=lc.copy(), seed=seed)


# --------------------------------------------------------------------------
# Training loops
# --------------------------------------------------------------------------


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, "epoch", epoch)).permutation(n)


def _state_digest(policy) -> str:
    fn = getattr(policy, "params_digest", None)
    return fn() if fn else ""


def _apply(policy, signal, phase, step, config, metrics) -> str:
    try:
        return policy.apply_update(signal)
    except Exception as exc:
        last = Checkpoint(phase, step, config.digest(), _state_digest(policy), metrics=metrics)
        raise TrainingAborted(f"{phase} update failed at step {step + 1}: {exc}", last) from exc


def train_sft(
    dataset: Sequence,
    policy,
    config: TrainConfig,
    log_path: str | Path | None = None,
    start_step: int = 0,
    log_extra: dict | None = None,
) -> Checkpoint:
    """Run ``config.steps`` (default: ``epochs`` full passes) of SFT updates."""
    records = list(dataset)
    if not records:
        raise DataError("SFT needs a non-empty dataset")
    n, B = len(records), config.batch_size
    steps_per_epoch = math.ceil(n / B)
    total = config.steps if config.steps is not None else config.epochs * steps_per_epoch
    losses: list[float] = []
    metrics: dict = {}
    for local in range(total):
        step = start_step + local
        epoch, k = divmod(step, steps_per_epoch)
        order = _epoch_order(n, config.seed, epoch)
        batch = [records[i] for i in order[k * B : (k + 1) * B]]
        loss, signal = sft_loss(batch, policy, config.learning_rate)
        metrics = {"loss": loss}
        _apply(policy, signal, "sft", step, config, metrics)
        losses.append(loss)
        if log_path is not None:
            append_jsonl(log_path, {"phase": "sft", "step": step + 1, "loss": loss, "batch": len(batch), **(log_extra or {})})
    metrics = {"steps": total, "losses": losses}
    if losses:
        metrics["first_loss"], metrics["last_loss"] = losses[0], losses[-1]
    return Checkpoint("sft", start_step + total, config.digest(), _state_digest(policy), metrics=metrics)


RewardFn = Callable[[object, str], object]


def _reward_value(r) -> float:
    return float(getattr(r, "total", r))


def train_rft(
    dataset: Sequence,
    policy,
    reference,
    reward_fn: RewardFn,
    config: TrainConfig,
    log_path: str | Path | None = None,
    start_step: int = 0,
    log_extra: dict | None = None,
    on_step: Callable[[int, dict], None] | None = None,
) -> Checkpoint:
    """Group-relative RL: sample, reward, normalise, update, for ``config.steps`` steps.

    ``reward_fn(record, response)`` returns a float or a
    :class:`~reasonctl.rewards.RewardBreakdown`. Records without a
    ground-truth image are skipped.
    """
    if reference is None:
        raise ConfigurationError("RFT requires a frozen reference policy")
    records = [r for r in dataset if getattr(r, "gt_image_path", None) is not None]
    if not records:
        raise DataError("RFT needs at least one record with a ground-truth image")
    n = len(records)
    total = config.steps if config.steps is not None else config.epochs * n
    history: list[dict] = []
    for local in range(total):
        step = start_step + local
        epoch, k = divmod(step, n)
        rec = records[_epoch_order(n, config.seed, epoch)[k]]
        group = sample_group(policy, reference, rec.question_text, config, derive_seed(config.seed, "rft", step))
        group.rewards = np.array([_reward_value(reward_fn(rec, o)) for o in group.responses])
        group.advantages = compute_advantages(group.rewards, config.epsilon)
        loss, signal = rft_objective(group, config)
        row = {
            "phase": "rft",
            "step": step + 1,
            "loss": loss,
            "objective": -loss,
            "reward_mean": float(group.rewards.mean()),
            "reward_std": float(group.rewards.std()),
            "kl": float(kl_estimate(group.logprobs_ref, group.logprobs_current).mean()),
            "format_rate": float(np.mean([format_reward(o) for o in group.responses])),
        }
        _apply(policy, signal, "rft", step, config, row)
        history.append(row)
        if log_path is not None:
            append_jsonl(log_path, {**row, **(log_extra or {})})
        if on_step is not None:
            on_step(step + 1, row)
    metrics = {"steps": total}
    if history:
        metrics["format_rate_curve"] = [h["format_rate"] for h in history]
        metrics["reward_mean_curve"] = [h["reward_mean"] for h in history]
        metrics["last"] = history[-1]
    return Checkpoint("rft", start_step + total, config.digest(), _state_digest(policy), metrics=metrics)

"""Backend contracts for every external model, plus deterministic mocks.

Images cross every interface as 8-bit RGB arrays of shape (H, W, 3).
Adapters for real models implement the same protocols and convert
internally.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .control_maps import BINARY, GRAY, LABEL, ControlMap, ControlType, canny_extract, to_luma
from .errors import BackendError, BackendErrorKind, DataError, TransportError
from .reasoning_format import ANSWER_CLOSE, ANSWER_OPEN, TAGS, THINK_CLOSE, THINK_OPEN
from .utils import array_digest, derive_seed, text_digest, unit_interval

Image = np.ndarray


@dataclass(frozen=True)
class GradientSignal:
    """Opaque update request from a trainer to a policy backend.

    Each item is ``(question, response, coefficient)`` where ``coefficient``
    is d(loss)/d(log pi(response | question)). The backend descends
    ``sum(coefficient * grad log pi)`` with the given learning rate.
    """

    items: tuple[tuple[str, str, float], ...]
    learning_rate: float


@runtime_checkable
class ReferencePolicy(Protocol):
    def sequence_logprob(self, question: str, response: str) -> float: ...


@runtime_checkable
class PolicyBackend(Protocol):
    def sample(self, question: str, count: int, temperature: float, seed: int) -> list[str]: ...

    def sequence_logprob(self, question: str, response: str) -> float: ...

    def apply_update(self, signal: GradientSignal) -> str: ...

    def snapshot(self) -> ReferencePolicy: ...


@runtime_checkable
class GeneratorBackend(Protocol):
    def generate(self, prompt: str, control: ControlMap, seed: int) -> Image: ...


@runtime_checkable
class ImageTextScorer(Protocol):
    raw_range: tuple[float, float]

    def score(self, image: Image, text: str) -> float: ...


@runtime_checkable
class PerceptualDistance(Protocol):
    def distance(self, a, b) -> float: ...


@runtime_checkable
class ControlExtractorBackend(Protocol):
    def extract(self, image: Image, control_type: ControlType) -> ControlMap: ...


@runtime_checkable
class OracleClient(Protocol):
    def complete(
        self,
        system_prompt: str,
        user_prompt: str,
        attachments: Sequence[Image],
        seed: int,
        timeout: float | None = None,
    ) -> str: ...


@runtime_checkable
class FeatureExtractor(Protocol):
    dim: int

    def features(self, image: Image) -> np.ndarray: ...


RETRYABLE = (BackendErrorKind.TRANSPORT, BackendErrorKind.TIMEOUT)


def call_with_retry(
    fn: Callable[[], str],
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
):
    """Call ``fn`` with at most ``retries`` retries and exponential backoff.

    Only transport and timeout failures are retried; the last error is
    re-raised once the budget is spent.
    """
    attempt = 0
    while True:
        try:
            return fn()
        except BackendError as exc:
            if exc.kind not in RETRYABLE or attempt >= retries:
                raise
            sleep(backoff * (2**attempt))
            attempt += 1


def as_rgb(image) -> Image:
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an RGB raster, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


# --------------------------------------------------------------------------
# Mock policy
# --------------------------------------------------------------------------

EOS = "<eos>"
UNK = "<unk>"
DEFAULT_WORDS = (
    "a", "red", "car", "tree", "sky", "person", "street",
    "house", "dog", "sunny", "night", "indoor",
)  # fmt: skip

_TOKEN_RE = re.compile(r"</?(?:think|answer)>|(?:(?!</?(?:think|answer)>)\S)+")
# Context = the last structural tag emitted (or the start of the sequence).
_CONTEXTS = ("<bos>",) + TAGS
_NEXT_TAG = {
    "<bos>": THINK_OPEN,
    THINK_OPEN: THINK_CLOSE,
    THINK_CLOSE: ANSWER_OPEN,
    ANSWER_OPEN: ANSWER_CLOSE,
    ANSWER_CLOSE: EOS,
}


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class _CategoricalPolicy:
    """Shared read path for the live mock policy and its frozen snapshots."""

    def __init__(self, vocab: Sequence[str], n_buckets: int, W: np.ndarray, U: np.ndarray):
        self.vocab = tuple(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.n_buckets = n_buckets
        self.W = W
        self.U = U

    def tokenize(self, text: str) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(tok, unk) for tok in _TOKEN_RE.findall(text)]

    def detokenize(self, ids: Iterable[int]) -> str:
        out, prev_word = [], False
        for i in ids:
            tok = self.vocab[i]
            if tok in TAGS:
                out.append(tok)
                prev_word = False
            else:
                out.append((" " if prev_word else "") + tok)
                prev_word = True
        return "".join(out)

    def bucket(self, question: str) -> int:
        return int(text_digest(question)[:8], 16) % self.n_buckets

    def _contexts(self, ids: Sequence[int]) -> list[int]:
        ctx, out = 0, []
        for i in ids:
            out.append(ctx)
            tok = self.vocab[i]
            if tok in TAGS:
                ctx = _CONTEXTS.index(tok)
        out.append(ctx)  # context in which EOS is emitted
        return out

    def _positions(self, question: str, response: str):
        ids = self.tokenize(response) + [self.index[EOS]]
        return self.bucket(question), ids, self._contexts(ids[:-1])

    def sequence_logprob(self, question: str, response: str) -> float:
        b, ids, ctxs = self._positions(question, response)
        logp = _log_softmax(self.W[ctxs] + self.U[b])
        return float(logp[np.arange(len(ids)), ids].sum())

    def logprob_gradient(self, question: str, response: str) -> tuple[np.ndarray, np.ndarray]:
        """Analytic gradient of ``sequence_logprob`` w.r.t. (W, U)."""
        b, ids, ctxs = self._positions(question, response)
        logits = self.W[ctxs] + self.U[b]
        delta = -np.exp(_log_softmax(logits))
        delta[np.arange(len(ids)), ids] += 1.0
        gW = np.zeros_like(self.W)
        np.add.at(gW, ctxs, delta)
        gU = np.zeros_like(self.U)
        gU[b] = delta.sum(axis=0)
        return gW, gU


class FrozenPolicy(_CategoricalPolicy):
    """Immutable reference snapshot of a :class:`MockPolicy`."""

    def __init__(self, vocab, n_buckets, W, U):
        W, U = W.copy(), U.copy()
        W.setflags(write=False)
        U.setflags(write=False)
        super().__init__(vocab, n_buckets, W, U)

    def params_digest(self) -> str:
        return array_digest(np.concatenate([self.W.ravel(), self.U.ravel()]))


class MockPolicy(_CategoricalPolicy):
    """Tiny trainable categorical sequence policy.

    The next-token distribution depends on the last structural tag emitted
    and on a hashed bucket of the question. ``tag_prior`` biases each context
    toward the tag that continues a well-formed response; it stands in for a
    base model with weak format-following.
    """

    def __init__(
        self,
        seed: int = 0,
        words: Sequence[str] = DEFAULT_WORDS,
        n_buckets: int = 8,
        tag_prior: float = 2.0,
        init_scale: float = 0.01,
        max_tokens: int = 32,
        max_grad_norm: float = 5.0,
    ):
        vocab = list(TAGS) + [EOS, UNK] + [w for w in words if w not in TAGS]
        rng = np.random.default_rng(derive_seed(seed, "mock-policy-init"))
        W = init_scale * rng.standard_normal((len(_CONTEXTS), len(vocab)))
        U = init_scale * rng.standard_normal((n_buckets, len(vocab)))
        super().__init__(vocab, n_buckets, W, U)
        self.W[:, self.index[UNK]] -= 4.0
        for c, ctx in enumerate(_CONTEXTS):
            self.W[c, self.index[_NEXT_TAG[ctx]]] += tag_prior
        self.max_tokens = max_tokens
        self.max_grad_norm = max_grad_norm
        self.step = 0
        self._lock = threading.Lock()

    def sample(self, question: str, count: int, temperature: float = 1.0, seed: int = 0) -> list[str]:
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        rng = np.random.default_rng(derive_seed(seed, "sample", question))
        b = self.bucket(question)
        eos = self.index[EOS]
        probs = np.exp(_log_softmax((self.W + self.U[b]) / temperature))
        cdf = np.cumsum(probs, axis=1)
        out = []
        for _ in range(count):
            ids, ctx = [], 0
            for _ in range(self.max_tokens):
                tok = int(min(np.searchsorted(cdf[ctx], rng.random() * cdf[ctx, -1], side="right"), len(self.vocab) - 1))
                if tok == eos:
                    break
                ids.append(tok)
                if self.vocab[tok] in TAGS:
                    ctx = _CONTEXTS.index(self.vocab[tok])
            out.append(self.detokenize(ids))
        return out

    def apply_update(self, signal: GradientSignal) -> str:
        gW = np.zeros_like(self.W)
        gU = np.zeros_like(self.U)
        for question, response, coef in signal.items:
            if coef == 0.0:
                continue
            dW, dU = self.logprob_gradient(question, response)
            gW += coef * dW
            gU += coef * dU
        norm = float(np.sqrt((gW**2).sum() + (gU**2).sum()))
        scale = signal.learning_rate
        if self.max_grad_norm and norm > self.max_grad_norm:
            scale *= self.max_grad_norm / norm
        with self._lock:
            if norm > 0.0:
                self.W -= scale * gW
                self.U -= scale * gU
            self.step += 1
        return self.params_digest()

    def snapshot(self) -> FrozenPolicy:
        return FrozenPolicy(self.vocab, self.n_buckets, self.W, self.U)

    def params_digest(self) -> str:
        return array_digest(np.concatenate([self.W.ravel(), self.U.ravel()]))

    def save_state(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            np.savez(fh, W=self.W, U=self.U, step=np.array(self.step), vocab=np.array(self.vocab))

    def load_state(self, path: str | Path) -> None:
        with np.load(path) as data:
            if tuple(str(v) for v in data["vocab"]) != self.vocab:
                raise DataError(f"policy state at {path} has a different vocabulary")
            self.W = data["W"].astype(np.float64)
            self.U = data["U"].astype(np.float64)
            self.step = int(data["step"])


# --------------------------------------------------------------------------
# Mock image-side backends
# --------------------------------------------------------------------------


class MockScorer:
    """Hashes (image digest, text) to a stable value inside ``raw_range``.

    ``table`` overrides specific pairs: keys are ``(array_digest(image), text)``.
    """

    def __init__(
        self,
        raw_range: tuple[float, float] = (0.0, 1.0),
        table: Mapping[tuple[str, str], float] | None = None,
        salt: str = "",
    ):
        self.raw_range = (float(raw_range[0]), float(raw_range[1]))
        self.table = dict(table or {})
        self.salt = salt

    def score(self, image: Image, text: str) -> float:
        key = array_digest(np.asarray(image))
        if (key, text) in self.table:
            return float(self.table[(key, text)])
        u = unit_interval(text_digest(self.salt + key + "\x00" + text))
        lo, hi = self.raw_range
        return lo + u * (hi - lo)


class MockGenerator:
    """Paints a prompt-dependent colour over the control structure."""

    def __init__(self, fail_seeds: Iterable[int] = ()):
        self.fail_seeds = set(fail_seeds)

    def generate(self, prompt: str, control: ControlMap, seed: int) -> Image:
        if seed in self.fail_seeds:
            raise BackendError(BackendErrorKind.TRANSPORT, f"mock generator failure for seed {seed}")
        rng = np.random.default_rng(derive_seed(seed, "generate", prompt))
        if control.kind == LABEL:
            n = max(int(control.num_classes) - 1, 1)
            structure = (control.payload * (255 // n)).astype(np.float64)
        else:
            structure = control.to_uint8().astype(np.float64)
        base = rng.integers(0, 256, size=3).astype(np.float64)
        weight = 0.6 + 0.3 * rng.random()
        noise = rng.integers(-3, 4, size=structure.shape + (3,))
        img = weight * structure[..., None] + (1.0 - weight) * base + noise
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _as_gray_float(x) -> np.ndarray:
    if isinstance(x, ControlMap):
        return x.to_uint8().astype(np.float64)
    arr = np.asarray(x)
    return to_luma(arr) if arr.ndim == 3 else arr.astype(np.float64)


class MockPerceptual:
    """Mean absolute 8-bit difference scaled to [0, 1]."""

    def distance(self, a, b) -> float:
        x, y = _as_gray_float(a), _as_gray_float(b)
        if x.shape != y.shape:
            raise DataError(f"shape mismatch {x.shape} vs {y.shape}")
        return float(np.abs(x - y).mean() / 255.0)


class MockExtractor:
    """Deterministic stand-in for learned control extractors.

    CANNY uses the native detector; DEPTH is luma; HED and LINEART are
    inverted luma; SEG quantises luma into ``seg_classes`` bands.
    """

    def __init__(self, seg_classes: int = 4, fail_types: Iterable[ControlType] = ()):
        self.seg_classes = seg_classes
        self.fail_types = {ControlType(t) for t in fail_types}

    def extract(self, image: Image, control_type: ControlType) -> ControlMap:
        control_type = ControlType(control_type)
        if control_type in self.fail_types:
            raise BackendError(BackendErrorKind.MALFORMED_OUTPUT, f"mock extractor refuses {control_type.value}")
        if control_type == ControlType.CANNY:
            return canny_extract(image)
        luma = np.clip(np.rint(to_luma(np.asarray(image))), 0, 255).astype(np.uint8)
        if control_type == ControlType.DEPTH:
            return ControlMap(control_type, luma, GRAY)
        if control_type == ControlType.SEG:
            labels = (luma.astype(np.int32) * self.seg_classes) // 256
            return ControlMap(control_type, labels, LABEL, self.seg_classes)
        return ControlMap(control_type, 255 - luma, GRAY)


class ScriptedOracle:
    """Replays scripted completions; raises TransportError when exhausted.

    ``script`` is either a sequence replayed in call order, or a mapping from
    request seed to its own sequence (safe under concurrent callers). Items
    that are exceptions are raised instead of returned.
    """

    def __init__(self, script: Sequence | Mapping[int, Sequence]):
        self._lock = threading.Lock()
        if isinstance(script, Mapping):
            self.keyed = True
            self._queues = {int(k): list(v) for k, v in script.items()}
        else:
            self.keyed = False
            self._queue = list(script)
        self.calls: list[dict] = []

    @property
    def concurrent_safe(self) -> bool:
        return self.keyed

    def complete(self, system_prompt, user_prompt, attachments, seed, timeout=None) -> str:
        with self._lock:
            self.calls.append(
                {
                    "system": system_prompt,
                    "user": user_prompt,
                    "attachments": [array_digest(np.asarray(a)) for a in attachments],
                    "seed": seed,
                }
            )
            queue = self._queues.get(int(seed), []) if self.keyed else self._queue
            if not queue:
                raise TransportError("mock oracle script exhausted")
            item = queue.pop(0)
        if isinstance(item, BaseException):
            raise item
        return str(item)


class MockFeatures:
    """Fixed random projection of an 8x8 block-mean luma thumbnail."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(derive_seed(seed, "mock-features"))
        self._proj = rng.standard_normal((64 + 3, dim)) / 8.0

    def features(self, image: Image) -> np.ndarray:
        img = as_rgb(image).astype(np.float64)
        luma = to_luma(img)
        rows = np.array_split(np.arange(luma.shape[0]), 8)
        cols = np.array_split(np.arange(luma.shape[1]), 8)
        thumb = np.array(
            [[luma[np.ix_(r, c)].mean() if r.size and c.size else 0.0 for c in cols] for r in rows]
        )
        v = np.concatenate([thumb.ravel(), img.reshape(-1, 3).mean(axis=0)]) / 255.0
        return v @ self._proj


def mock_policy(seed: int = 0, **kwargs) -> MockPolicy:
    return MockPolicy(seed=seed, **kwargs)


def mock_scorer(raw_range=(0.0, 1.0), table=None, salt: str = "") -> MockScorer:
    return MockScorer(raw_range=raw_range, table=table, salt=salt)


def mock_generator(fail_seeds: Iterable[int] = ()) -> MockGenerator:
    return MockGenerator(fail_seeds)


def mock_perceptual() -> MockPerceptual:
    return MockPerceptual()


def mock_extractor(**kwargs) -> MockExtractor:
    return MockExtractor(**kwargs)


def mock_oracle(script) -> ScriptedOracle:
    return ScriptedOracle(script)


def mock_features(d: int = 16, seed: int = 0) -> MockFeatures:
    return MockFeatures(d, seed)


@dataclass
class Backends:
    """The set of model backends a pipeline run is wired to.

    ``scorer`` is the semantic image-text scorer used for candidate ranking;
    ``alignment_scorer`` is the one used for the RL alignment reward.
    """

    policy: PolicyBackend | None = None
    generator: GeneratorBackend | None = None
    scorer: ImageTextScorer | None = None
    alignment_scorer: ImageTextScorer | None = None
    perceptual: PerceptualDistance | None = None
    extractor: ControlExtractorBackend | None = None
    oracle: OracleClient | None = None
    features: FeatureExtractor | None = None
    extra: dict = field(default_factory=dict)


def mock_backends(seed: int = 0) -> Backends:
    return Backends(
        policy=mock_policy(seed),
        generator=mock_generator(),
        scorer=mock_scorer(raw_range=(0.0, 30.0), salt="semantic"),
        alignment_scorer=mock_scorer(raw_range=(-1.0, 1.0), salt="alignment"),
        perceptual=mock_perceptual(),
        extractor=mock_extractor(),
        oracle=None,
        features=mock_features(16, seed),
    )

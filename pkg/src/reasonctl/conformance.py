"""Interface conformance checks shared by the mocks and real adapters.

Each ``check_*`` function raises ``AssertionError`` on the first violated
contract. Run them from a test suite against any adapter instance.
"""

from __future__ import annotations

import math

import numpy as np

from .backends import (
    ControlExtractorBackend,
    FeatureExtractor,
    GeneratorBackend,
    GradientSignal,
    ImageTextScorer,
    OracleClient,
    PerceptualDistance,
    PolicyBackend,
)
from .control_maps import ControlMap, ControlType


def probe_image(seed: int = 0, size: tuple[int, int] = (32, 40)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = np.zeros(size + (3,), dtype=np.uint8)
    img[:] = rng.integers(0, 256, size=3)
    h, w = size
    img[h // 4 : 3 * h // 4, w // 4 : 3 * w // 4] = rng.integers(0, 256, size=3)
    return img


def check_policy(policy, question: str = "describe the layout", seed: int = 3) -> None:
    assert isinstance(policy, PolicyBackend)
    a = policy.sample(question, 4, 1.0, seed)
    b = policy.sample(question, 4, 1.0, seed)
    assert a == b, "sampling must be seed-deterministic"
    assert len(a) == 4
    for r in a:
        lp = policy.sequence_logprob(question, r)
        assert math.isfinite(lp) and lp <= 0.0

    ref = policy.snapshot()
    before = [ref.sequence_logprob(question, r) for r in a]
    target = a[0]
    lp0 = policy.sequence_logprob(question, target)
    policy.apply_update(GradientSignal(((question, target, -1.0),), 0.05))
    assert policy.sequence_logprob(question, target) > lp0, "a reinforcing update must raise the target logprob"
    assert [ref.sequence_logprob(question, r) for r in a] == before, "snapshots must be immutable"


def check_generator(generator, control: ControlMap, prompt: str = "a red car", seed: int = 5) -> None:
    assert isinstance(generator, GeneratorBackend)
    img = np.asarray(generator.generate(prompt, control, seed))
    assert img.dtype == np.uint8 and img.ndim == 3 and img.shape[2] == 3
    assert img.shape[:2] == control.shape, "output size must equal control size"


def check_scorer(scorer, image: np.ndarray | None = None) -> None:
    assert isinstance(scorer, ImageTextScorer)
    image = probe_image() if image is None else image
    lo, hi = scorer.raw_range
    assert hi > lo
    s1, s2 = scorer.score(image, "a"), scorer.score(image, "a")
    assert s1 == s2, "scores must be deterministic"
    assert math.isfinite(s1)


def check_perceptual(perceptual, a: np.ndarray | None = None, b: np.ndarray | None = None) -> None:
    assert isinstance(perceptual, PerceptualDistance)
    a = probe_image(0) if a is None else a
    b = probe_image(1) if b is None else b
    assert perceptual.distance(a, a) == 0.0
    d_ab, d_ba = perceptual.distance(a, b), perceptual.distance(b, a)
    assert d_ab >= 0.0
    assert math.isclose(d_ab, d_ba, rel_tol=1e-12, abs_tol=1e-12), "distance must be symmetric"


def check_extractor(extractor, types=tuple(ControlType), image: np.ndarray | None = None) -> None:
    assert isinstance(extractor, ControlExtractorBackend)
    image = probe_image() if image is None else image
    for t in types:
        cmap = extractor.extract(image, t)
        assert cmap.control_type == ControlType(t)
        assert cmap.shape == image.shape[:2], "extraction must keep dimensions"


def check_oracle(oracle, image: np.ndarray | None = None, seed: int = 0) -> None:
    assert isinstance(oracle, OracleClient)
    image = probe_image() if image is None else image
    out = oracle.complete("system", "user", [image], seed)
    assert isinstance(out, str)


def check_features(features, images=None) -> None:
    assert isinstance(features, FeatureExtractor)
    images = images or [probe_image(i) for i in range(3)]
    vecs = [np.asarray(features.features(im)) for im in images]
    assert all(v.shape == (features.dim,) for v in vecs), "feature dimension must be constant"
    assert np.array_equal(vecs[0], np.asarray(features.features(images[0])))

"""Small synthetic corpora for demos and desk-scale pipeline runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backends import DEFAULT_WORDS, MockExtractor
from .control_maps import ControlType, canny_extract, save_control_map, save_image
from .curation import request_seed
from .utils import rng_for, write_jsonl

CAPTIONS = ("a red car", "a dog on a street", "a house at night", "", "a person under a tree", "sunny sky")


def shapes_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """RGB image with a few bright rectangles on a dark flat background."""
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = rng.integers(0, 80, size=3)
    for _ in range(int(rng.integers(1, 4))):
        y0, x0 = rng.integers(0, size - 16, size=2)
        h, w = rng.integers(8, 24, size=2)
        img[y0 : y0 + h, x0 : x0 + w] = rng.integers(170, 256, size=3)
    return img


def oracle_response(rng: np.random.Generator, kind: str = "clean") -> str:
    words = list(DEFAULT_WORDS)
    think = " ".join(rng.choice(words, size=int(rng.integers(2, 6))))
    answer = " ".join(rng.choice(words, size=int(rng.integers(2, 6))))
    if kind == "malformed":
        return f"<answer>{answer}</answer><think>{think}</think>"
    if kind == "leaky":
        return f"<think>{think} as the ground truth image shows</think><answer>{answer}</answer>"
    return f"<think>{think}</think><answer>{answer}</answer>"


def make_corpus(root: str | Path, n: int = 6, seed: int = 0, control_type: ControlType = ControlType.CANNY) -> Path:
    """Write control maps, ground-truth images and a curation manifest.

    Every fourth row gets a malformed scripted response, every fifth a
    response that mentions the ground truth, and the last row has no
    scripted response so that its oracle call fails.
    Returns the manifest path.
    """
    root = Path(root)
    control_type = ControlType(control_type)
    rows = []
    for i in range(n):
        rng = rng_for(seed, "corpus", i)
        gt = shapes_image(rng)
        if control_type == ControlType.CANNY:
            cmap = canny_extract(gt)
        else:
            cmap = MockExtractor().extract(gt, control_type)
        rid = f"{control_type.value.lower()}-{i:04d}"
        ctrl_path = root / "control" / f"{rid}.png"
        gt_path = root / "gt" / f"{rid}.png"
        save_control_map(cmap, ctrl_path)
        save_image(gt, gt_path)
        kind = "malformed" if i % 4 == 3 else "leaky" if i % 5 == 4 else "clean"
        responses = [] if i == n - 1 else [oracle_response(rng, kind)]
        rows.append(
            {
                "id": rid,
                "control_type": control_type.value,
                "control_image": f"control/{rid}.png",
                "gt_image": f"gt/{rid}.png",
                "prompt": CAPTIONS[i % len(CAPTIONS)],
                "mock_responses": responses,
            }
        )
    manifest = root / "manifest.jsonl"
    write_jsonl(manifest, rows)
    return manifest


def oracle_script_from_manifest(rows: list[dict], seed: int) -> dict[int, list[str]]:
    """Key each row's scripted responses by its per-request oracle seed."""
    return {request_seed(seed, row["id"]): list(row.get("mock_responses", [])) for row in rows}


import numpy as np
import pytest
from hypothesis import settings

from reasonctl.control_maps import ControlMap, ControlType
from reasonctl.curation import CurationRecord

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_record(i=0, response="<think>t</think><answer>a car</answer>", control_type=ControlType.CANNY, gt="gt.png"):
    from reasonctl.reasoning_format import parse_response

    p = parse_response(response)
    return CurationRecord(
        id=f"r{i:04d}",
        control_type=control_type,
        control_image_path="ctrl.png",
        gt_image_path=gt,
        original_prompt="a car",
        question_text=f"question {i}",
        response_text=response,
        think_text=p.think_text,
        answer_text=p.answer_text,
        well_formed=p.well_formed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def canny_map():
    payload = np.zeros((32, 32), dtype=np.uint8)
    payload[:, 16] = 1
    return ControlMap(ControlType.CANNY, payload)


PIPELINE_CONFIG = """\
seed: 7
curation:
  backoff: 0.0
  retries: 1
training:
  sft:
    learning_rate: 0.1
    steps: 30
  rft:
    learning_rate: 0.1
    steps: 20
    group_size: 4
    reference: init
inference:
  k: 4
"""


def setup_corpus(root, n=8, seed=7):
    from reasonctl.synthetic import make_corpus

    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.yaml").write_text(PIPELINE_CONFIG)
    make_corpus(root / "corpus", n=n, seed=seed)
    return root / "cfg.yaml"


def run_pipeline(root, out, main=None):
    """curate -> train-sft -> train-rft -> infer (x2) -> evaluate, via the CLI."""
    from reasonctl.cli import main as cli_main

    main = main or cli_main
    cfg = str(root / "cfg.yaml")
    corpus = root / "corpus"
    o = root / out
    steps = [
        ["curate", "--manifest", str(corpus / "manifest.jsonl")],
        ["train-sft", "--dataset", str(o / "dataset.jsonl")],
        ["train-rft", "--dataset", str(o / "dataset.jsonl"), "--init", str(o / "checkpoint_sft.json")],
    ]
    for i, prompt in enumerate(["a red car", "a dog on a street"]):
        steps.append(
            ["infer", "--prompt", prompt, "--control", str(corpus / "control" / f"canny-{i:04d}.png"),
             "--checkpoint", str(o / "checkpoint_rft.json"), "--name", f"canny-{i:04d}.png", "--out", str(o / "gen")]
        )  # fmt: skip
    steps.append(["evaluate", "--generated", str(o / "gen"), "--reference", str(corpus / "gt"), "--control-type", "CANNY"])
    for argv in steps:
        if "--out" not in argv:
            argv = argv + ["--out", str(o)]
        code = main(argv + ["--config", cfg])
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    return o


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

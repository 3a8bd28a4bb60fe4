"""
The whole pipeline through the command line
===========================================

curate -> train-sft -> train-rft -> infer -> evaluate on a synthetic corpus,
all with mock backends. Every artefact lands under one output directory.
"""

import tempfile
from pathlib import Path

from reasonctl.cli import main
from reasonctl.synthetic import make_corpus

root = Path(tempfile.mkdtemp())
manifest = make_corpus(root / "corpus", n=8, seed=7)
cfg = root / "config.yaml"
cfg.write_text(
    "seed: 7\n"
    "curation: {backoff: 0.0, retries: 1}\n"
    "training:\n"
    "  sft: {learning_rate: 0.1, steps: 30}\n"
    "  rft: {learning_rate: 0.1, steps: 20, group_size: 4, reference: init}\n"
    "inference: {k: 4}\n"
)
out = root / "out"
common = ["--config", str(cfg), "--out", str(out)]

steps = [
    ["curate", "--manifest", str(manifest)],
    ["train-sft", "--dataset", str(out / "dataset.jsonl")],
    ["train-rft", "--dataset", str(out / "dataset.jsonl"), "--init", str(out / "checkpoint_sft.json")],
    ["infer", "--prompt", "a red car", "--control", str(root / "corpus/control/canny-0000.png"),
     "--checkpoint", str(out / "checkpoint_rft.json"), "--name", "gen/canny-0000.png"],
    ["infer", "--prompt", "a dog on a street", "--control", str(root / "corpus/control/canny-0001.png"),
     "--checkpoint", str(out / "checkpoint_rft.json"), "--name", "gen/canny-0001.png"],
    ["evaluate", "--generated", str(out / "gen"), "--reference", str(root / "corpus/gt"), "--control-type", "CANNY"],
]  # fmt: skip
for argv in steps:
    code = main(argv[:1] + common + argv[1:])
    print(f"{argv[0]:<10} exit {code}")

for p in sorted(out.rglob("*")):
    if p.is_file():
        print(" ", p.relative_to(out))

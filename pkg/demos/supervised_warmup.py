"""
Supervised warm-up on curated reasoning
=======================================

Curate a small synthetic corpus through a scripted oracle, filter out
malformed or leaky responses, then fit the mock policy by maximum
likelihood. The mean negative log-likelihood should fall.
"""

import tempfile
from pathlib import Path

from reasonctl.backends import mock_oracle, mock_policy
from reasonctl.curation import CurationRequest, curate, filter_dataset
from reasonctl.synthetic import make_corpus, oracle_script_from_manifest
from reasonctl.training import TrainConfig, train_sft
from reasonctl.utils import read_jsonl

root = Path(tempfile.mkdtemp())
manifest = make_corpus(root, n=10, seed=3)
rows = read_jsonl(manifest)

requests = [
    CurationRequest(r["id"], r["control_type"], root / r["control_image"], root / r["gt_image"], r["prompt"])
    for r in rows
]
oracle = mock_oracle(oracle_script_from_manifest(rows, seed=3))
records, failures = curate(requests, oracle, seed=3, backoff=0.0, retries=1)
kept, rejected = filter_dataset(records)
print(f"curated {len(records)}, failed {len(failures)}, kept {len(kept.records)}")
for rec in rejected:
    print("  rejected", rec.id, rec.rejected_reason.value)

policy = mock_policy(seed=3)
ckpt = train_sft(kept.records, policy, TrainConfig.sft_defaults(learning_rate=0.1, batch_size=2, steps=40, seed=3))
print(f"nll {ckpt.metrics['first_loss']:.2f} -> {ckpt.metrics['last_loss']:.2f}")

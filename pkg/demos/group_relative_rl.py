"""
Group-relative RL on the mock policy
====================================

Sample a group of responses per question, z-score their rewards within the
group and push the policy toward the above-average ones. With format
correctness as the only reward the format rate climbs from roughly 0.1.
"""

import numpy as np

from reasonctl.backends import mock_policy
from reasonctl.control_maps import ControlType
from reasonctl.curation import CurationRecord
from reasonctl.reasoning_format import format_reward
from reasonctl.training import TrainConfig, compute_advantages, kl_estimate, train_rft

# Advantages: population z-scores, all zero when the group has no spread
print(compute_advantages([0.0, 0.0, 1.0, 1.0]))
print(compute_advantages([0.5, 0.5, 0.5]))

# The per-sample KL penalty is non-negative and zero where the policies agree
print(kl_estimate(np.array([-2.0, -1.0]), np.array([-2.0, -1.5])))


def record(i):
    return CurationRecord(
        id=f"q{i}", control_type=ControlType.CANNY, control_image_path="c.png", gt_image_path="g.png",
        original_prompt="", question_text=f"question {i}", response_text="", think_text=None,
        answer_text=None, well_formed=False,
    )  # fmt: skip


policy = mock_policy(seed=0)
reference = policy.snapshot()
cfg = TrainConfig(group_size=12, kl_coefficient=0.0, learning_rate=0.1, steps=200, seed=0)
ckpt = train_rft([record(i) for i in range(8)], policy, reference, lambda rec, o: format_reward(o), cfg)

curve = np.array(ckpt.metrics["format_rate_curve"])
for lo in range(0, 200, 40):
    print(f"steps {lo + 1:3d}-{lo + 40:3d}: format rate {curve[lo:lo + 40].mean():.2f}")

"""
Best-of-K selection with the ranking reward
===========================================

Each of K enhanced prompts produces a candidate image. Candidates are ranked
by their semantic score against the user's ORIGINAL prompt minus the
perceptual distance between the control map re-extracted from the image and
the input control map. Ties go to the earliest candidate.
"""

import numpy as np

from reasonctl.backends import mock_backends
from reasonctl.control_maps import canny_extract
from reasonctl.selection import InferenceRequest, run_inference
from reasonctl.synthetic import shapes_image

rng = np.random.default_rng(11)
control = canny_extract(shapes_image(rng))
# The untrained mock policy rarely writes a well-formed response, so some
# slots are dropped after resampling and K shrinks.
backends = mock_backends(seed=11)

result = run_inference(InferenceRequest("a red car on a street", control, k=4, seed=11), backends)
for row in result.audit["candidates"]:
    if row["scorable"]:
        print(f"#{row['index']} total {row['total']:+.3f}  semantic {row['semantic']:.3f}  "
              f"penalty {row['structural_penalty']:.3f}  prompt {row['prompt']!r}")  # fmt: skip
print("winner:", result.audit["winner"], "image", result.image.shape)

# K=1 disables test-time scaling: one prompt, one image, no ranking choice
single = run_inference(InferenceRequest("a red car on a street", control, k=1, seed=11), backends)
print("k=1 candidates:", len(single.audit["candidates"]), "fallback to original prompt:", single.audit["fallback_used"])

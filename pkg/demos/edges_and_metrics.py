"""
Canny edges and consistency metrics
===================================

Extract edges with the native Canny implementation and compare maps with
edge F1, SSIM and RMSE. Finish with a Frechet distance between two sets of
feature vectors.
"""

import numpy as np

from reasonctl.control_maps import canny_extract
from reasonctl.metrics import edge_f1, fit_gaussian, frechet_distance, rmse, ssim
from reasonctl.synthetic import shapes_image

rng = np.random.default_rng(5)
img = shapes_image(rng, size=96)
edges = canny_extract(img)
print("edge pixels:", int(edges.payload.sum()), "of", edges.payload.size)

# Shift by one pixel: exact F1 drops, a 1px tolerance recovers it
shifted = np.roll(img, 1, axis=1)
e2 = canny_extract(shifted)
print(f"F1 exact {edge_f1(e2, edges):.3f}  with 1px tolerance {edge_f1(e2, edges, tolerance_px=1):.3f}")

gray = img.mean(axis=2)
noisy = np.clip(gray + rng.normal(0, 20, gray.shape), 0, 255)
print(f"SSIM self {ssim(gray, gray):.3f}  vs noisy {ssim(gray, noisy):.3f}")
print(f"RMSE vs noisy {rmse(gray, noisy):.2f}")

a = rng.normal(0, 1, (200, 8))
b = rng.normal(0.5, 1, (200, 8))
print(f"FD same {frechet_distance(fit_gaussian(a), fit_gaussian(a)):.4f}  shifted {frechet_distance(fit_gaussian(a), fit_gaussian(b)):.3f}")

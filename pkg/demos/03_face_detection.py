"""Landmark rasters and the template-matching detector."""

# %% Rasterize the canonical landmarks and detect them back
import numpy as np

from guided_portraits.face import CANONICAL_LANDMARKS, DETECTION_CSV_HEADER, Detector, rasterize
from guided_portraits.guidance import default_memory

memory = default_memory()
det = Detector(memory)
face = rasterize(CANONICAL_LANDMARKS, 32, 32)
res = det.detect(face)
print(DETECTION_CSV_HEADER)
print(res.csv_row())

# %% A shifted face is found with its shift
moved = rasterize(CANONICAL_LANDMARKS.shifted(3 / 32, -2 / 32), 32, 32)
res = det.detect(moved)
print("shift recovered:", res.shift, "confidence", round(res.confidence, 3))

# %% Confidence drops as noise replaces the face; pure noise is rejected
rng = np.random.default_rng(0)
noise = rng.standard_normal((32, 32))
for w in (0.0, 0.3, 0.6, 0.9, 1.0):
    r = det.detect((1 - w) * face + w * noise)
    print(f"noise weight {w:.1f}: found={r.found} confidence={r.confidence:.3f}")

"""Frame sampling and preprocessing.

Each video is reduced to 16 frames taken 5 apart from the middle of the
recording, so one clip spans 80 raw frames. Short recordings repeat their
last frame. Every frame is centre-cropped to a square and resized.
"""

import numpy as np

from dualview_slr.dataset import center_crop_box, preprocess_frame, sample_frame_indices

for n in (200, 80, 30, 1):
    print(f"{n:4d} raw frames -> {sample_frame_indices(n)}")

# a landscape 1920x1080 frame keeps its central 1080x1080 square
top, left, side = center_crop_box(1080, 1920)
print(f"crop box: top={top} left={left} side={side}")

frame = np.random.default_rng(0).integers(0, 256, (1080, 1920, 3), dtype=np.uint8)
out = preprocess_frame(frame, 256)
print("preprocessed:", tuple(out.shape), out.dtype, f"mean={out.mean():+.3f}")

"""
Drawing a pose skeleton over a frame
====================================

Builds a small frame, places a handful of landmarks on it, renders the
bones and joints, and writes the composited result as a PPM next to the
plain overlay. Pass a directory as the first argument to keep the files.
"""
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from posevinet.imaging import (Image, SkeletonStyle, composite, parse_landmarks,
                               render_skeleton, write_ppm)

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
out.mkdir(parents=True, exist_ok=True)

# a gray gradient stands in for a camera frame
h, w = 96, 128
ramp = np.linspace(40, 160, w).astype(np.uint8)
frame = Image(np.repeat(np.tile(ramp, (h, 1))[..., None], 3, axis=2))

# landmarks arrive as normalized coordinates, the same document the CLI reads
doc = {"width": w, "height": h, "landmarks": [
    {"id": 0, "x": 0.50, "y": 0.20},
    {"id": 11, "x": 0.40, "y": 0.40}, {"id": 12, "x": 0.60, "y": 0.40},
    {"id": 13, "x": 0.33, "y": 0.60}, {"id": 14, "x": 0.70, "y": 0.55},
    {"id": 15, "x": 0.38, "y": 0.80}, {"id": 16, "x": 0.78, "y": 0.35},
    {"id": 23, "x": 0.44, "y": 0.85}, {"id": 24, "x": 0.56, "y": 0.85, "visibility": 0.3},
]}
landmarks, _, _ = parse_landmarks(json.dumps(doc))
print(len(landmarks.visible()), "of", len(landmarks.points), "landmarks are visible")

style = SkeletonStyle(line_thickness=2, joint_radius=3)
overlay = render_skeleton(landmarks, h, w, style)
print("overlay covers", int(overlay.pixels.any(axis=-1).sum()), "pixels")

# nonblack overlay pixels win, everything else keeps the frame
result = composite(frame, overlay)
(out / "overlay.ppm").write_bytes(write_ppm(overlay))
(out / "composited.ppm").write_bytes(write_ppm(result))
print("wrote", out / "composited.ppm")

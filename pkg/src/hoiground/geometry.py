"""Normalized-box helpers shared by grounding, detection, evaluation, and bench."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError

Box = tuple[float, float, float, float]  # (x1, y1, x2, y2), all in [0, 1]


def validate_box(box) -> Box:
    """Check a normalized xyxy box; degenerate or out-of-range boxes are rejected."""
    box = tuple(float(v) for v in box)
    if len(box) != 4:
        raise ArgumentError(f"box must have 4 coordinates, got {len(box)}")
    x1, y1, x2, y2 = box
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise ArgumentError(f"degenerate or out-of-range box {box}")
    return box


def box_iou(a, b) -> float:
    """Intersection over union of two xyxy boxes."""
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def union_box(a, b) -> Box:
    """Smallest axis-aligned box covering both inputs."""
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    return (min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))


def box_center(box) -> np.ndarray:
    x1, y1, x2, y2 = (float(v) for v in box)
    return np.array([(x1 + x2) / 2.0, (y1 + y2) / 2.0])

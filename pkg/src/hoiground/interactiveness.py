"""Interactiveness scoring.

Per-patch sigmoid scores over the similarity fields, importance-weighted
aggregation to image level, pairwise geometric mean, and the instance form
that multiplies a box-local score with the image-level importance mass
falling inside the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .grounding import RegionMask, SimilarityField
from .numerics import scaled_sigmoid


@dataclass
class InteractivenessReport:
    """Image-level interactiveness: human, per-object-class, and pairwise scores."""

    r_h: float
    r_o: np.ndarray   # (n_classes,)
    r_ho: np.ndarray  # (n_classes,)


@dataclass
class InstanceInteractiveness:
    """Instance gate and its two factors: box-local score x masked global mass."""

    r: float
    local: float
    masked_global: float


def patch_interactiveness(field: SimilarityField, params) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise scaled sigmoid over the human and object similarity fields."""
    s_h = scaled_sigmoid(field.human, params.sig_inter_h.log_temp, params.sig_inter_h.bias)
    s_o = scaled_sigmoid(field.objects, params.sig_inter_o.log_temp, params.sig_inter_o.bias)
    return s_h, s_o


def image_interactiveness(alpha: np.ndarray, s_hat: np.ndarray) -> float:
    """Importance-weighted mean of patch interactiveness (a convex combination)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if alpha.shape != s_hat.shape:
        raise ShapeError(f"alpha {alpha.shape} and scores {s_hat.shape} differ")
    return float(alpha @ s_hat)


def pairwise_interactiveness(r_h: float, r_o: float) -> float:
    """Geometric mean of the human and object scores."""
    if not (r_h > 0 and r_o > 0):
        raise ArgumentError(f"interactiveness scores must be positive, got ({r_h}, {r_o})")
    return float(np.sqrt(r_h * r_o))


def image_report(
    field: SimilarityField, alpha_h: np.ndarray, alpha_o: np.ndarray, params
) -> InteractivenessReport:
    """Assemble the image-level report for every object class.

    ``alpha_o`` holds one importance row per object class, matching
    ``field.objects``.
    """
    s_h_hat, s_o_hat = patch_interactiveness(field, params)
    r_h = image_interactiveness(alpha_h, s_h_hat)
    r_o = np.array(
        [image_interactiveness(alpha_o[k], s_o_hat[k]) for k in range(field.n_classes)]
    )
    r_ho = np.array([pairwise_interactiveness(r_h, float(v)) for v in r_o])
    return InteractivenessReport(r_h=r_h, r_o=r_o, r_ho=r_ho)


def instance_interactiveness(
    alpha_inst: np.ndarray,
    s_hat: np.ndarray,
    alpha_image: np.ndarray,
    mask: RegionMask,
) -> InstanceInteractiveness:
    """Instance gate: local interactiveness times masked global importance mass.

    ``alpha_inst`` must be the box-masked importance built with the same mask;
    ``alpha_image`` is the unmasked image-level importance of the same field.
    With a full-image mask the global factor is the full importance mass (1 up
    to summation), collapsing to plain image-level interactiveness.
    """
    alpha_inst = np.asarray(alpha_inst, dtype=np.float64)
    alpha_image = np.asarray(alpha_image, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if not (alpha_inst.shape == alpha_image.shape == s_hat.shape == mask.include.shape):
        raise ShapeError(
            f"grid mismatch: inst {alpha_inst.shape}, image {alpha_image.shape}, "
            f"scores {s_hat.shape}, mask {mask.include.shape}"
        )
    local = float(alpha_inst @ s_hat)
    masked_global = float(alpha_image[mask.include].sum())
    return InstanceInteractiveness(r=local * masked_global, local=local, masked_global=masked_global)

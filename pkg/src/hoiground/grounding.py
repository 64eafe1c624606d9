"""Pairwise instance grounding.

Turns a patch feature map plus text embeddings into per-patch similarity
fields, softmax patch-importance weights (optionally restricted to a box
region), and pooled query vectors for a human-object pair.

The similarity fields are the expensive part (they project every patch); on
the shared inference path they are computed once per image and reused for
every instance pair, which is what the efficiency benchmark measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, EmptyMaskError, ShapeError
from .geometry import Box, box_center, validate_box
from .instrument import COUNTERS
from .numerics import cosine_rows, masked_softmax, matmul


@dataclass
class FeatureMap:
    """A grid_h x grid_w grid of d_v-dimensional patch vectors.

    ``patches`` is stored row-major with shape (grid_h * grid_w, d_v). The
    grid maps onto the normalized [0,1]^2 image; the center of cell (i, j)
    is ((j + 0.5) / grid_w, (i + 0.5) / grid_h).
    """

    grid_h: int
    grid_w: int
    patches: np.ndarray

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ArgumentError(f"grid must be at least 1x1, got {self.grid_h}x{self.grid_w}")
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 2 or self.patches.shape[0] != self.grid_h * self.grid_w:
            raise ShapeError(
                f"patches shape {self.patches.shape} does not match grid "
                f"{self.grid_h}x{self.grid_w}"
            )
        if not np.all(np.isfinite(self.patches)):
            raise ArgumentError("feature map contains non-finite values")

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def dim(self) -> int:
        return self.patches.shape[1]

    def centers(self) -> np.ndarray:
        """(n_patches, 2) array of normalized (x, y) patch centers, row-major.

        Computed once and cached; treat the result as read-only.
        """
        cached = getattr(self, "_centers", None)
        if cached is None:
            ii, jj = np.divmod(np.arange(self.n_patches), self.grid_w)
            cached = np.stack([(jj + 0.5) / self.grid_w, (ii + 0.5) / self.grid_h], axis=1)
            self._centers = cached
        return cached

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "FeatureMap":
        """Build from a (grid_h, grid_w, d_v) array."""
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 3:
            raise ShapeError(f"expected a rank-3 grid, got shape {grid.shape}")
        h, w, d = grid.shape
        return cls(h, w, grid.reshape(h * w, d))

    def to_grid(self) -> np.ndarray:
        return self.patches.reshape(self.grid_h, self.grid_w, self.dim)


@dataclass
class RegionMask:
    """Per-patch membership bits for a box region, kept alongside its source box."""

    include: np.ndarray  # bool, (n_patches,)
    box: Box

    def __post_init__(self):
        self.include = np.asarray(self.include, dtype=bool)

    @property
    def n_included(self) -> int:
        return int(self.include.sum())


@dataclass
class SimilarityField:
    """Per-patch cosine similarities: one field for the human, one per object class."""

    human: np.ndarray    # (n_patches,)
    objects: np.ndarray  # (n_classes, n_patches)

    @property
    def n_classes(self) -> int:
        return self.objects.shape[0]


def patch_similarity(fm: FeatureMap, bank, params) -> SimilarityField:
    """Project patches and text embeddings into the shared space and compare.

    Returns cosine similarities in [-1, 1] for the human embedding and every
    object-class embedding. This is the single per-image grounding pass that
    instance-level inference amortizes across pairs.
    """
    if fm.dim != params.d_v:
        raise ShapeError(f"feature dim {fm.dim} does not match params d_v {params.d_v}")
    if bank.dim != params.d_t:
        raise ShapeError(f"bank dim {bank.dim} does not match params d_t {params.d_t}")
    COUNTERS.grounding_passes += 1
    proj_h = matmul(fm.patches, params.proj_patch_h)
    proj_o = matmul(fm.patches, params.proj_patch_o)
    text_h = bank.human @ params.proj_text_h
    text_o = bank.objects @ params.proj_text_o
    human = cosine_rows(proj_h, text_h)
    objects = np.stack([cosine_rows(proj_o, text_o[k]) for k in range(text_o.shape[0])])
    return SimilarityField(human=human, objects=objects)


def patch_importance(
    field: np.ndarray, tau_p: float, mask: RegionMask | None = None
) -> np.ndarray:
    """Softmax patch-importance weights over a similarity field.

    With a mask, excluded patches get exactly zero weight and the softmax
    renormalizes over the surviving ones; a full mask reproduces the unmasked
    result exactly.

    Raises:
        EmptyMaskError: the mask excludes every patch (callers should build
            masks through :func:`box_to_mask`, which never returns one).
    """
    include = None
    if mask is not None:
        include = mask.include
        if not include.any():
            raise EmptyMaskError("region mask covers no patch")
    return masked_softmax(field, tau_p, include)


def box_to_mask(box, fm: FeatureMap) -> RegionMask:
    """Rasterize a normalized box to patch membership by patch-center test.

    A patch belongs to the region iff its center lies inside the (closed) box.
    If no center falls inside, the single patch whose center is nearest the
    box center is used instead (ties broken by smallest row-major index), so
    the mask is never empty.
    """
    box = validate_box(box)
    centers = fm.centers()
    x1, y1, x2, y2 = box
    include = (
        (centers[:, 0] >= x1)
        & (centers[:, 0] <= x2)
        & (centers[:, 1] >= y1)
        & (centers[:, 1] <= y2)
    )
    if not include.any():
        dist = np.linalg.norm(centers - box_center(box), axis=1)
        include = np.zeros(fm.n_patches, dtype=bool)
        include[int(np.argmin(dist))] = True
    return RegionMask(include=include, box=box)


def pooled_feature(alpha: np.ndarray, fm: FeatureMap) -> np.ndarray:
    """Importance-weighted sum of patch features."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (fm.n_patches,):
        raise ShapeError(f"alpha shape {alpha.shape} does not match {fm.n_patches} patches")
    return alpha @ fm.patches


def grounded_query(
    alpha_h: np.ndarray, alpha_o: np.ndarray, fm: FeatureMap, params
) -> np.ndarray:
    """Pool human and object features by importance and fuse into one pair query."""
    q_h = pooled_feature(alpha_h, fm)
    q_o = pooled_feature(alpha_o, fm)
    return np.concatenate([q_h, q_o]) @ params.proj_query

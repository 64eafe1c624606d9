"""Synthetic planted-signal scenes.

Every generated image carries one human blob and one blob per object class at
disjoint patch rectangles over Gaussian noise, each blob pointing along its
class's text embedding. A random subset of the object classes interacts: each
interacting class gets its own random action, and that action's signature
vector is added on the union of the interacting blobs (the human blob and the
object blob), so the action is linearly decodable from the features. The
remaining class blobs are present but signature-free, and optional "twin"
blobs duplicate interacting classes without a signature, giving detection
tests a non-interactive instance of the same class.

Image-level labels list exactly the planted (action, object) pairs; instance
boxes and ground-truth triplets are kept for the detection and evaluation
tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import TextEmbeddingBank
from .errors import ArgumentError, GenerationError
from .geometry import Box
from .grounding import FeatureMap
from .training import ImageSample

_PLACEMENT_RESTARTS = 200


@dataclass
class SyntheticSpec:
    grid_h: int = 6
    grid_w: int = 6
    d_v: int = 16
    d_t: int = 16
    n_objects: int = 3
    n_actions: int = 3
    n_images: int = 24
    noise_std: float = 0.1
    seed: int = 0
    scene_seed: int | None = None   # defaults to seed; lets held-out scenes share the bank
    blob_h: int = 2
    blob_w: int = 2
    n_interactions: int = 1
    n_twins: int = 1
    human_strength: float = 1.0
    object_strength: float = 1.0
    action_strength: float = 0.75
    normalize_patches: bool = False  # unit-norm patches, like backbone token features
    distinct_actions: bool = False   # interactions draw distinct actions per image
    balance_actions: bool = False    # equalize action counts across the dataset

    def __post_init__(self):
        for name in ("grid_h", "grid_w", "d_v", "d_t", "n_objects", "n_actions",
                     "n_images", "blob_h", "blob_w"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ArgumentError(f"noise_std must be >= 0, got {self.noise_std}")
        if not (1 <= self.n_interactions <= self.n_objects):
            raise ArgumentError(
                f"n_interactions must be in 1..n_objects, got {self.n_interactions}"
            )
        if not (0 <= self.n_twins <= self.n_interactions):
            raise ArgumentError(
                f"n_twins must be in 0..n_interactions, got {self.n_twins}"
            )


@dataclass
class PlantedInstance:
    box: Box
    class_id: int          # object class index, or the human class id
    interactive: bool


@dataclass
class SyntheticScene:
    image_id: str
    sample: ImageSample
    instances: list[PlantedInstance]
    # ground-truth triplets: (human_box, object_box, object_class, action)
    triplets: list[tuple[Box, Box, int, int]]


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    bank: TextEmbeddingBank
    scenes: list[SyntheticScene]
    human_class_id: int

    @property
    def samples(self) -> list[ImageSample]:
        return [scene.sample for scene in self.scenes]


def _orthonormal_rows(rng: np.random.Generator, n_rows: int, dim: int) -> np.ndarray:
    if n_rows > dim:
        raise ArgumentError(
            f"cannot build {n_rows} orthonormal embeddings in dimension {dim}"
        )
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_rows)))
    return q.T.copy()


def _place_blobs(
    rng: np.random.Generator, spec: SyntheticSpec, n_blobs: int
) -> list[tuple[int, int]]:
    """Top-left corners of disjoint blob rectangles, or raise GenerationError."""
    if spec.blob_h > spec.grid_h or spec.blob_w > spec.grid_w:
        raise GenerationError(
            f"blob {spec.blob_h}x{spec.blob_w} does not fit grid "
            f"{spec.grid_h}x{spec.grid_w}; use a larger grid"
        )
    for _ in range(_PLACEMENT_RESTARTS):
        taken = np.zeros((spec.grid_h, spec.grid_w), dtype=bool)
        corners: list[tuple[int, int]] = []
        for _ in range(n_blobs):
            candidates = [
                (r, c)
                for r in range(spec.grid_h - spec.blob_h + 1)
                for c in range(spec.grid_w - spec.blob_w + 1)
                if not taken[r : r + spec.blob_h, c : c + spec.blob_w].any()
            ]
            if not candidates:
                break
            r, c = candidates[int(rng.integers(len(candidates)))]
            taken[r : r + spec.blob_h, c : c + spec.blob_w] = True
            corners.append((r, c))
        if len(corners) == n_blobs:
            return corners
    raise GenerationError(
        f"could not place {n_blobs} disjoint {spec.blob_h}x{spec.blob_w} blobs on a "
        f"{spec.grid_h}x{spec.grid_w} grid; use a larger grid"
    )


def _blob_box(spec: SyntheticSpec, corner: tuple[int, int]) -> Box:
    r, c = corner
    return (
        c / spec.grid_w,
        r / spec.grid_h,
        (c + spec.blob_w) / spec.grid_w,
        (r + spec.blob_h) / spec.grid_h,
    )


def _blob_patches(spec: SyntheticSpec, corner: tuple[int, int]) -> np.ndarray:
    r, c = corner
    rows = np.arange(r, r + spec.blob_h)
    cols = np.arange(c, c + spec.blob_w)
    return (rows[:, None] * spec.grid_w + cols[None, :]).ravel()


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic dataset: the same spec yields bit-identical output.

    The embedding bank depends only on ``(seed, d_t, n_objects, n_actions)``,
    so specs differing in ``scene_seed`` or scene composition share a bank.
    The human class id in instance records is ``n_objects`` (one past the last
    object class), so it never shadows a real object class.
    """
    bank_rng = np.random.default_rng(spec.seed)
    rows = _orthonormal_rows(bank_rng, 1 + spec.n_objects + spec.n_actions, spec.d_t)
    bank = TextEmbeddingBank(
        human=rows[0],
        objects=rows[1 : 1 + spec.n_objects],
        actions=rows[1 + spec.n_objects :],
        object_names=[f"object_{k}" for k in range(spec.n_objects)],
        action_names=[f"action_{a}" for a in range(spec.n_actions)],
    )
    if spec.d_v == spec.d_t:
        embed = np.eye(spec.d_v)
    else:
        # fixed feature-space embedding of the text directions, d_t -> d_v
        embed = _orthonormal_rows(bank_rng, spec.d_t, spec.d_v).T
    e_h = embed @ bank.human
    e_o = bank.objects @ embed.T
    e_a = bank.actions @ embed.T

    rng = np.random.default_rng(spec.seed if spec.scene_seed is None else spec.scene_seed)
    human_class_id = spec.n_objects
    n_patches = spec.grid_h * spec.grid_w
    balanced_pool: list[int] = []
    if spec.balance_actions:
        # shuffled multiset with equal per-action counts, consumed in order
        total = spec.n_images * spec.n_interactions
        reps = -(-total // spec.n_actions)
        pool = np.tile(np.arange(spec.n_actions), reps)[:total]
        balanced_pool = [int(a) for a in rng.permutation(pool)]
    scenes: list[SyntheticScene] = []
    for i in range(spec.n_images):
        interacting = [int(k) for k in rng.permutation(spec.n_objects)[: spec.n_interactions]]
        if spec.distinct_actions:
            if spec.n_interactions > spec.n_actions:
                raise GenerationError(
                    "distinct_actions requires n_actions >= n_interactions"
                )
            drawn = rng.permutation(spec.n_actions)[: spec.n_interactions]
            actions = {k: int(a) for k, a in zip(interacting, drawn)}
        elif spec.balance_actions:
            at = i * spec.n_interactions
            actions = {
                k: balanced_pool[at + t] for t, k in enumerate(interacting)
            }
        else:
            actions = {k: int(rng.integers(spec.n_actions)) for k in interacting}
        twin_classes = interacting[: spec.n_twins]
        corners = _place_blobs(rng, spec, 1 + spec.n_objects + len(twin_classes))
        X = spec.noise_std * rng.standard_normal((n_patches, spec.d_v))

        human_corner = corners[0]
        human_box = _blob_box(spec, human_corner)
        X[_blob_patches(spec, human_corner)] += spec.human_strength * e_h + sum(
            spec.action_strength * e_a[a] for a in sorted(set(actions.values()))
        )
        instances = [PlantedInstance(box=human_box, class_id=human_class_id, interactive=True)]
        triplets: list[tuple[Box, Box, int, int]] = []
        for k in range(spec.n_objects):
            corner = corners[1 + k]
            X[_blob_patches(spec, corner)] += spec.object_strength * e_o[k]
            box = _blob_box(spec, corner)
            if k in actions:
                X[_blob_patches(spec, corner)] += spec.action_strength * e_a[actions[k]]
                instances.append(PlantedInstance(box=box, class_id=k, interactive=True))
                triplets.append((human_box, box, k, actions[k]))
            else:
                instances.append(PlantedInstance(box=box, class_id=k, interactive=False))
        for t, k in enumerate(twin_classes):
            corner = corners[1 + spec.n_objects + t]
            X[_blob_patches(spec, corner)] += spec.object_strength * e_o[k]
            instances.append(
                PlantedInstance(box=_blob_box(spec, corner), class_id=k, interactive=False)
            )

        if spec.normalize_patches:
            X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)
        fm = FeatureMap(spec.grid_h, spec.grid_w, X)
        labels = {(a, k) for k, a in actions.items()}
        scenes.append(
            SyntheticScene(
                image_id=f"img_{i:04d}",
                sample=ImageSample(fm=fm, labels=labels),
                instances=instances,
                triplets=sorted(triplets, key=lambda t: t[2]),
            )
        )
    return SyntheticDataset(
        spec=spec, bank=bank, scenes=scenes, human_class_id=human_class_id
    )

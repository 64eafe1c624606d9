"""Interaction decoding.

A single-head cross-attention block (residual + layer norm, no feed-forward)
maps a fused pair query to a decoded feature, which is scored against action
text embeddings through a learnable scaled sigmoid. The same block powers the
per-class-query baseline decoder used for comparison and benchmarking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError
from .grounding import FeatureMap
from .instrument import COUNTERS
from .numerics import cosine_rows, masked_softmax, scaled_sigmoid
from .params import LAYER_NORM_EPS, AttentionParams, MLDecoderParams


@dataclass
class TextEmbeddingBank:
    """Frozen text embeddings: one human row, per-object-class and per-action rows.

    ``hoi`` optionally carries one embedding per (action, object) triplet class
    for the baseline decoder, with ``hoi_pairs`` giving each row's
    (action_id, object_id).
    """

    human: np.ndarray       # (d_t,)
    objects: np.ndarray     # (n_objects, d_t)
    actions: np.ndarray     # (n_actions, d_t)
    object_names: list[str] | None = None
    action_names: list[str] | None = None
    hoi: np.ndarray | None = None
    hoi_pairs: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.human = np.asarray(self.human, dtype=np.float64)
        self.objects = np.asarray(self.objects, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.human.ndim != 1:
            raise ShapeError(f"human embedding must be a vector, got {self.human.shape}")
        for name, rows in (("objects", self.objects), ("actions", self.actions)):
            if rows.ndim != 2 or rows.shape[0] < 1:
                raise ShapeError(f"{name} must be a non-empty matrix, got {rows.shape}")
            if rows.shape[1] != self.human.shape[0]:
                raise ShapeError(f"{name} width {rows.shape[1]} != human dim {self.human.shape[0]}")
        stacked = [self.human[None, :], self.objects, self.actions]
        if self.hoi is not None:
            self.hoi = np.asarray(self.hoi, dtype=np.float64)
            if self.hoi.ndim != 2 or self.hoi.shape[1] != self.human.shape[0]:
                raise ShapeError(f"hoi embeddings have bad shape {self.hoi.shape}")
            if self.hoi_pairs is None or len(self.hoi_pairs) != self.hoi.shape[0]:
                raise ArgumentError("hoi embeddings require one (action, object) pair per row")
            for a, o in self.hoi_pairs:
                if not (0 <= a < self.n_actions and 0 <= o < self.n_objects):
                    raise ArgumentError(f"hoi pair ({a}, {o}) out of range")
            stacked.append(self.hoi)
        all_rows = np.concatenate(stacked, axis=0)
        if not np.all(np.isfinite(all_rows)):
            raise ArgumentError("bank contains non-finite embeddings")
        if np.any(np.linalg.norm(all_rows, axis=1) == 0.0):
            raise ArgumentError("bank contains an all-zero embedding row")

    @property
    def dim(self) -> int:
        return self.human.shape[0]

    @property
    def n_objects(self) -> int:
        return self.objects.shape[0]

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]


def layer_norm(
    x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = LAYER_NORM_EPS
) -> np.ndarray:
    mean = x.mean()
    var = ((x - mean) ** 2).mean()
    return scale * ((x - mean) / np.sqrt(var + eps)) + shift


def attention_keys_values(fm: FeatureMap, attn: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Project the feature map once into keys and values (query-independent)."""
    return fm.patches @ attn.w_k, fm.patches @ attn.w_v


def cross_attention(
    query: np.ndarray,
    fm: FeatureMap,
    attn: AttentionParams,
    kv: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """One single-head attention step of ``query`` over all patches.

    Scaled dot-product weights over every patch (no mask), value aggregation,
    output projection, residual, layer norm. ``kv`` short-circuits the key and
    value projections when they were precomputed for the image.
    """
    query = np.asarray(query, dtype=np.float64)
    d = attn.w_q.shape[0]
    if query.shape != (d,):
        raise ShapeError(f"query shape {query.shape} does not match attention dim {d}")
    if fm.dim != d:
        raise ShapeError(f"feature dim {fm.dim} does not match attention dim {d}")
    COUNTERS.decoder_forwards += 1
    keys, values = attention_keys_values(fm, attn) if kv is None else kv
    q_proj = query @ attn.w_q
    weights = masked_softmax(keys @ q_proj / np.sqrt(d), 1.0)
    context = weights @ values
    return layer_norm(query + context @ attn.w_o, attn.ln_scale, attn.ln_shift)


def interaction_decode(
    q_ho: np.ndarray,
    fm: FeatureMap,
    bank: TextEmbeddingBank,
    params,
    kv: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Decode a pair query into per-action scores, each strictly inside (0, 1)."""
    decoded = cross_attention(q_ho, fm, params.attn, kv=kv)
    cos = cosine_rows(bank.actions, decoded @ params.proj_action)
    return scaled_sigmoid(cos, params.sig_action.log_temp, params.sig_action.bias)


def ml_decoder_forward(
    fm: FeatureMap, bank: TextEmbeddingBank, params: MLDecoderParams
) -> np.ndarray:
    """Baseline decoder: one text-derived query per triplet class, full pass.

    Every triplet-class embedding is projected to a query, cross-attended over
    the feature map, and scored by a linear head under the scaled sigmoid.

    Raises:
        ConfigError: the bank carries no triplet-class embeddings.
    """
    if bank.hoi is None:
        raise ConfigError("bank has no triplet-class embeddings for the baseline decoder")
    COUNTERS.baseline_passes += 1
    queries = bank.hoi @ params.proj_query_in
    kv = attention_keys_values(fm, params.attn)
    scores = np.empty(queries.shape[0])
    for t in range(queries.shape[0]):
        decoded = cross_attention(queries[t], fm, params.attn, kv=kv)
        scores[t] = scaled_sigmoid(
            float(decoded @ params.proj_out[:, 0]), params.sig.log_temp, params.sig.bias
        )
    return scores

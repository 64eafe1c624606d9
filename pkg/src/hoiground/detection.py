"""Training-free transfer to instance-level detection.

Proposals from an external detector restrict the grounding softmax to each
instance box (log-space mask), pool instance-aware pair queries, gate them by
local x masked-global interactiveness, and fuse with the detector confidences:

    score(pair, action) = action_score * pair_gate^gamma * (s_h * s_o)^lambda

``detect`` computes all per-image fields once and reuses them across pairs;
``detect_naive`` recomputes everything per pair and exists as the equivalence
oracle and the benchmark's no-sharing compute model.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decoder import TextEmbeddingBank, attention_keys_values, interaction_decode
from .errors import ArgumentError, FormatError
from .geometry import Box, validate_box
from .grounding import (
    FeatureMap,
    box_to_mask,
    grounded_query,
    patch_importance,
    patch_similarity,
)
from .instrument import COUNTERS
from .interactiveness import (
    InstanceInteractiveness,
    instance_interactiveness,
    pairwise_interactiveness,
    patch_interactiveness,
)
from .numerics import COSINE_EPS, scaled_sigmoid
from .params import LAYER_NORM_EPS, ModelParams

DEFAULT_SCORE_THRESHOLD = 0.2
DEFAULT_MIN_INSTANCES = 3
DEFAULT_MAX_INSTANCES = 15
LAMBDA_PRESETS = {"hico-det": 0.5, "v-coco": 2.0}


@dataclass(frozen=True)
class Detection:
    """One proposal from an external detector (humans carry the human class id)."""

    box: Box
    score: float
    class_id: int

    def __post_init__(self):
        object.__setattr__(self, "box", validate_box(self.box))
        if not (0.0 < self.score <= 1.0):
            raise ArgumentError(f"detection score must be in (0, 1], got {self.score}")


@dataclass(frozen=True)
class HOIPrediction:
    """One scored triplet with its multiplicative factor breakdown."""

    human_box: Box
    object_box: Box
    object_class: int
    action: int
    score: float
    s_a: float
    r_ho: float
    det_factor: float


@dataclass
class DetectorConfig:
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    min_instances: int = DEFAULT_MIN_INSTANCES
    max_instances: int = DEFAULT_MAX_INSTANCES
    det_lambda: float = LAMBDA_PRESETS["hico-det"]
    human_class_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.score_threshold < 1.0):
            raise ArgumentError(f"score_threshold must be in [0, 1), got {self.score_threshold}")
        if not (1 <= self.min_instances <= self.max_instances):
            raise ArgumentError(
                f"need 1 <= min_instances <= max_instances, got "
                f"{self.min_instances}..{self.max_instances}"
            )


def filter_proposals(
    dets: list[Detection], cfg: DetectorConfig
) -> tuple[list[Detection], list[Detection]]:
    """Split into (humans, objects) and apply the keep rule per side.

    Each side is sorted by score descending (stable, so ties keep input
    order); proposals at or above the threshold are kept, the highest-scoring
    rejected ones pad the list back up to ``min_instances`` when available,
    and the result is truncated to ``max_instances``.
    """

    def keep(side: list[Detection]) -> list[Detection]:
        ranked = sorted(side, key=lambda det: -det.score)
        passed = [det for det in ranked if det.score >= cfg.score_threshold]
        rejected = [det for det in ranked if det.score < cfg.score_threshold]
        while len(passed) < cfg.min_instances and rejected:
            passed.append(rejected.pop(0))
        return passed[: cfg.max_instances]

    humans = keep([det for det in dets if det.class_id == cfg.human_class_id])
    objects = keep([det for det in dets if det.class_id != cfg.human_class_id])
    return humans, objects


@dataclass
class _InstanceFields:
    """Per-instance grounding products shared across the pairs that use them."""

    alpha: np.ndarray
    gate: InstanceInteractiveness
    pooled: np.ndarray  # importance-weighted patch feature


def _instance_fields(
    det: Detection,
    fm: FeatureMap,
    sim_field: np.ndarray,
    s_hat: np.ndarray,
    alpha_image: np.ndarray,
    tau_p: float,
) -> _InstanceFields:
    mask = box_to_mask(det.box, fm)
    alpha = patch_importance(sim_field, tau_p, mask)
    gate = instance_interactiveness(alpha, s_hat, alpha_image, mask)
    return _InstanceFields(alpha=alpha, gate=gate, pooled=alpha @ fm.patches)


def _decode_pair_block(
    queries: np.ndarray,
    bank: TextEmbeddingBank,
    params: ModelParams,
    kv: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """Per-action scores for a block of fused pair queries, shape (n, n_actions).

    The same attention arithmetic as a single decode, applied row-wise; feature
    keys and values come in precomputed.
    """
    keys, values = kv
    d = params.d
    COUNTERS.decoder_forwards += queries.shape[0]
    q_proj = queries @ params.attn.w_q
    logits = q_proj @ keys.T / np.sqrt(d)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    y = queries + (weights @ values) @ params.attn.w_o
    mean = y.mean(axis=1, keepdims=True)
    var = ((y - mean) ** 2).mean(axis=1, keepdims=True)
    decoded = params.attn.ln_scale * (y - mean) / np.sqrt(var + LAYER_NORM_EPS) \
        + params.attn.ln_shift
    z = decoded @ params.proj_action
    denom = np.maximum(
        np.linalg.norm(z, axis=1, keepdims=True) * np.linalg.norm(bank.actions, axis=1),
        COSINE_EPS,
    )
    cos = np.clip(z @ bank.actions.T / denom, -1.0, 1.0)
    return scaled_sigmoid(cos, params.sig_action.log_temp, params.sig_action.bias)


def detect(
    fm: FeatureMap,
    bank: TextEmbeddingBank,
    params: ModelParams,
    humans: list[Detection],
    objects: list[Detection],
    cfg: DetectorConfig | None = None,
    diagnostics: list[dict] | None = None,
    threads: int = 1,
) -> list[HOIPrediction]:
    """Score every (human, object, action) triple with shared per-image work.

    Similarity fields, patch interactiveness, image-level importances, the
    attention keys/values, and each instance's mask/importance/query are
    computed exactly once per image; pair decoding runs as one batched matrix
    pass. Output order is (human index, object index, action index) regardless
    of ``threads``.

    Pairs whose object class is not in the bank are skipped; when a
    ``diagnostics`` list is supplied each skip appends a record to it.
    """
    cfg = cfg or DetectorConfig()
    if not humans or not objects:
        return []
    sim = patch_similarity(fm, bank, params)
    sh_hat, so_hat = patch_interactiveness(sim, params)
    alpha_h_image = patch_importance(sim.human, params.tau_p)
    known_idx = [j for j, obj in enumerate(objects) if 0 <= obj.class_id < bank.n_objects]
    known = [objects[j] for j in known_idx]
    if diagnostics is not None:
        for j, obj in enumerate(objects):
            if j not in known_idx:
                for i in range(len(humans)):
                    diagnostics.append(
                        {"human": i, "object": j,
                         "reason": f"object class {obj.class_id} not in bank"}
                    )
    if not known:
        return []
    needed_classes = sorted({obj.class_id for obj in known})
    alpha_o_image = {
        k: patch_importance(sim.objects[k], params.tau_p) for k in needed_classes
    }
    kv = attention_keys_values(fm, params.attn)

    human_fields = [
        _instance_fields(h, fm, sim.human, sh_hat, alpha_h_image, params.tau_p)
        for h in humans
    ]
    object_fields = [
        _instance_fields(
            obj, fm, sim.objects[obj.class_id], so_hat[obj.class_id],
            alpha_o_image[obj.class_id], params.tau_p,
        )
        for obj in known
    ]

    n_h, n_o = len(humans), len(known)
    if n_h == 1 and n_o == 1:
        # one pair: take the exact single-query path (sharing is a no-op here)
        q_pair = grounded_query(human_fields[0].alpha, object_fields[0].alpha, fm, params)
        s_a = interaction_decode(q_pair, fm, bank, params, kv=kv)[None, :]
    else:
        # pair rows in (human, object) order: concat pooled features, fuse, decode
        pooled_h = np.stack([f.pooled for f in human_fields])
        pooled_o = np.stack([f.pooled for f in object_fields])
        cat = np.concatenate(
            [np.repeat(pooled_h, n_o, axis=0), np.tile(pooled_o, (n_h, 1))], axis=1
        )
        queries = cat @ params.proj_query
        if threads > 1:
            chunks = [c for c in np.array_split(np.arange(queries.shape[0]), threads)
                      if c.size]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                blocks = list(
                    pool.map(lambda c: _decode_pair_block(queries[c], bank, params, kv),
                             chunks)
                )
            s_a = np.concatenate(blocks, axis=0)
        else:
            s_a = _decode_pair_block(queries, bank, params, kv)

    r_h = np.array([f.gate.r for f in human_fields])
    r_o = np.array([f.gate.r for f in object_fields])
    r_ho = np.sqrt(np.repeat(r_h, n_o) * np.tile(r_o, n_h))
    det_factor = np.repeat([h.score for h in humans], n_o) * np.tile(
        [o.score for o in known], n_h
    )
    fused = s_a * r_ho[:, None] ** params.gamma * det_factor[:, None] ** cfg.det_lambda

    out: list[HOIPrediction] = []
    row = 0
    for human in humans:
        for obj in known:
            for a in range(bank.n_actions):
                out.append(
                    HOIPrediction(
                        human_box=human.box,
                        object_box=obj.box,
                        object_class=obj.class_id,
                        action=a,
                        score=float(fused[row, a]),
                        s_a=float(s_a[row, a]),
                        r_ho=float(r_ho[row]),
                        det_factor=float(det_factor[row]),
                    )
                )
            row += 1
    return out


def detect_naive(
    fm: FeatureMap,
    bank: TextEmbeddingBank,
    params: ModelParams,
    humans: list[Detection],
    objects: list[Detection],
    cfg: DetectorConfig | None = None,
    diagnostics: list[dict] | None = None,
) -> list[HOIPrediction]:
    """Same contract as :func:`detect` with zero sharing between pairs.

    Every per-image and per-instance quantity is recomputed inside the pair
    loop. Exists as the equivalence oracle for ``detect`` and as the compute
    model of the no-caching benchmark strategy.
    """
    cfg = cfg or DetectorConfig()
    if not humans or not objects:
        return []
    out: list[HOIPrediction] = []
    for i, human in enumerate(humans):
        for j, obj in enumerate(objects):
            if not (0 <= obj.class_id < bank.n_objects):
                if diagnostics is not None:
                    diagnostics.append(
                        {"human": i, "object": j,
                         "reason": f"object class {obj.class_id} not in bank"}
                    )
                continue
            sim = patch_similarity(fm, bank, params)
            sh_hat, so_hat = patch_interactiveness(sim, params)
            alpha_h_image = patch_importance(sim.human, params.tau_p)
            alpha_o_image = patch_importance(sim.objects[obj.class_id], params.tau_p)
            h_mask = box_to_mask(human.box, fm)
            o_mask = box_to_mask(obj.box, fm)
            alpha_h = patch_importance(sim.human, params.tau_p, h_mask)
            alpha_o = patch_importance(sim.objects[obj.class_id], params.tau_p, o_mask)
            q_pair = grounded_query(alpha_h, alpha_o, fm, params)
            s_a = interaction_decode(q_pair, fm, bank, params)
            gate_h = instance_interactiveness(alpha_h, sh_hat, alpha_h_image, h_mask)
            gate_o = instance_interactiveness(
                alpha_o, so_hat[obj.class_id], alpha_o_image, o_mask
            )
            r_ho = pairwise_interactiveness(gate_h.r, gate_o.r)
            det_factor = human.score * obj.score
            fused = s_a * r_ho**params.gamma * det_factor**cfg.det_lambda
            out.extend(
                HOIPrediction(
                    human_box=human.box,
                    object_box=obj.box,
                    object_class=obj.class_id,
                    action=a,
                    score=float(fused[a]),
                    s_a=float(s_a[a]),
                    r_ho=r_ho,
                    det_factor=det_factor,
                )
                for a in range(bank.n_actions)
            )
    return out


def read_detections(path) -> tuple[str, list[Detection]]:
    """Parse a detections JSON document: image id plus proposal list."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid detections JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or "image_id" not in doc or "detections" not in doc:
        raise FormatError(f"detections file {path} must carry image_id and detections")
    dets = [
        Detection(box=tuple(entry["box"]), score=float(entry["score"]),
                  class_id=int(entry["class_id"]))
        for entry in doc["detections"]
    ]
    return str(doc["image_id"]), dets


def prediction_record(image_id: str, pred: HOIPrediction) -> dict:
    return {
        "image_id": image_id,
        "human_box": list(pred.human_box),
        "object_box": list(pred.object_box),
        "object_class": pred.object_class,
        "action": pred.action,
        "score": pred.score,
        "factors": {"s_a": pred.s_a, "r_ho": pred.r_ho, "det": pred.det_factor},
    }


def write_predictions(fh, image_id: str, preds: list[HOIPrediction]) -> None:
    """Append predictions as JSON lines to an open text handle."""
    for pred in preds:
        fh.write(json.dumps(prediction_record(image_id, pred)) + "\n")


def read_predictions(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid prediction JSON on line {lineno}: {exc}") from exc
    return records

"""Binary tensor files, embedding-bank sidecars, and dataset directories.

Tensor format (little-endian): magic "RGFT" | u32 version=1 | u32 rank |
u32 dims[rank] | float32 payload, row-major. Float64 in memory, float32 at
rest. Embedding banks are one rank-2 tensor with a JSON sidecar
(``<file>.meta.json``) naming the rows: row 0 is the human embedding, then the
object rows, then the action rows, then optional triplet-class rows.

A dataset directory holds one tensor file per image plus ``manifest.json``
(image ids, label pairs, planted instance boxes), the bank pair, and a
ground-truth file in the evaluator's JSON schema.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .decoder import TextEmbeddingBank
from .errors import FormatError
from .grounding import FeatureMap
from .synthetic import SyntheticDataset
from .training import ImageSample

TENSOR_MAGIC = b"RGFT"
TENSOR_VERSION = 1
MANIFEST_NAME = "manifest.json"
BANK_NAME = "bank.rgft"
GROUND_TRUTH_NAME = "ground_truth.json"


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", TENSOR_VERSION))
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype("<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor file back as float64.

    Raises:
        FormatError: bad magic, unsupported version, truncation, or non-finite
            payload values; messages carry the byte offset.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) != 4 or magic != TENSOR_MAGIC:
            raise FormatError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}", offset=0)
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated tensor file while reading version", offset=fh.tell())
        (version,) = struct.unpack("<I", raw)
        if version != TENSOR_VERSION:
            raise FormatError(f"unsupported tensor version {version}", offset=4)
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated tensor file while reading rank", offset=fh.tell())
        (rank,) = struct.unpack("<I", raw)
        if rank == 0 or rank > 8:
            raise FormatError(f"implausible tensor rank {rank}", offset=8)
        raw = fh.read(4 * rank)
        if len(raw) != 4 * rank:
            raise FormatError("truncated tensor file while reading dims", offset=fh.tell())
        dims = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(dims))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise FormatError(
                f"truncated tensor payload: expected {4 * count} bytes, got {len(payload)}",
                offset=fh.tell(),
            )
        if fh.read(1):
            raise FormatError("trailing bytes after tensor payload", offset=fh.tell() - 1)
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"tensor {path} contains non-finite values")
    return values


def write_feature_map(path, fm: FeatureMap) -> None:
    write_tensor(path, fm.to_grid())


def read_feature_map(path) -> FeatureMap:
    grid = read_tensor(path)
    if grid.ndim != 3:
        raise FormatError(f"feature map tensor must be rank 3, got rank {grid.ndim}")
    return FeatureMap.from_grid(grid)


def _bank_meta_path(bank_path) -> Path:
    return Path(str(bank_path) + ".meta.json")


def write_bank(path, bank: TextEmbeddingBank) -> None:
    rows = [bank.human[None, :], bank.objects, bank.actions]
    if bank.hoi is not None:
        rows.append(bank.hoi)
    write_tensor(path, np.concatenate(rows, axis=0))
    meta = {
        "object_names": bank.object_names or [f"object_{k}" for k in range(bank.n_objects)],
        "action_names": bank.action_names or [f"action_{a}" for a in range(bank.n_actions)],
        "hoi_pairs": [list(p) for p in bank.hoi_pairs] if bank.hoi_pairs else None,
    }
    with open(_bank_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def read_bank(path) -> TextEmbeddingBank:
    rows = read_tensor(path)
    if rows.ndim != 2:
        raise FormatError(f"bank tensor must be rank 2, got rank {rows.ndim}")
    meta_path = _bank_meta_path(path)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"bank sidecar {meta_path} is missing") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid bank sidecar JSON: {exc}") from exc
    object_names = meta["object_names"]
    action_names = meta["action_names"]
    hoi_pairs = meta.get("hoi_pairs")
    n_o, n_a = len(object_names), len(action_names)
    expected = 1 + n_o + n_a + (len(hoi_pairs) if hoi_pairs else 0)
    if rows.shape[0] != expected:
        raise FormatError(
            f"bank tensor has {rows.shape[0]} rows, sidecar describes {expected}"
        )
    return TextEmbeddingBank(
        human=rows[0],
        objects=rows[1 : 1 + n_o],
        actions=rows[1 + n_o : 1 + n_o + n_a],
        object_names=list(object_names),
        action_names=list(action_names),
        hoi=rows[1 + n_o + n_a :] if hoi_pairs else None,
        hoi_pairs=[tuple(p) for p in hoi_pairs] if hoi_pairs else None,
    )


def write_dataset(directory, dataset: SyntheticDataset) -> Path:
    """Materialize a synthetic dataset: tensors, bank, manifest, ground truth,
    and one detections file per image (the planted boxes as unit-score proposals)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "detections").mkdir(exist_ok=True)
    images = []
    gt_images = {}
    for scene in dataset.scenes:
        tensor_name = f"{scene.image_id}.rgft"
        write_feature_map(directory / tensor_name, scene.sample.fm)
        images.append(
            {
                "image_id": scene.image_id,
                "file": tensor_name,
                "labels": [list(pair) for pair in sorted(scene.sample.labels)],
                "instances": [
                    {"box": list(inst.box), "class_id": inst.class_id,
                     "interactive": inst.interactive}
                    for inst in scene.instances
                ],
            }
        )
        gt_images[scene.image_id] = [
            {"human_box": list(hb), "object_box": list(ob),
             "object_class": oc, "action": act}
            for hb, ob, oc, act in scene.triplets
        ]
        det_doc = {
            "image_id": scene.image_id,
            "detections": [
                {"box": list(inst.box), "score": 1.0, "class_id": inst.class_id}
                for inst in scene.instances
            ],
        }
        with open(directory / "detections" / f"{scene.image_id}.json", "w",
                  encoding="utf-8") as fh:
            json.dump(det_doc, fh, indent=1)
    write_bank(directory / BANK_NAME, dataset.bank)
    from .evaluation import write_ground_truth

    write_ground_truth(directory / GROUND_TRUTH_NAME, gt_images)
    manifest = {
        "grid": [dataset.spec.grid_h, dataset.spec.grid_w],
        "d_v": dataset.spec.d_v,
        "d_t": dataset.spec.d_t,
        "human_class_id": dataset.human_class_id,
        "bank": BANK_NAME,
        "ground_truth": GROUND_TRUTH_NAME,
        "images": images,
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST_NAME} in {directory}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest JSON: {exc}") from exc


def load_dataset(directory) -> tuple[list[ImageSample], TextEmbeddingBank, dict]:
    """Read a dataset directory back as (samples, bank, manifest)."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    bank = read_bank(directory / manifest["bank"])
    samples = [
        ImageSample(
            fm=read_feature_map(directory / entry["file"]),
            labels={(int(a), int(o)) for a, o in entry["labels"]},
        )
        for entry in manifest["images"]
    ]
    return samples, bank, manifest

"""Efficiency harness: shared-grounding inference vs the union-crop baseline.

Three strategies over synthetic scenes with a controlled pair count:

* ``grounded``        - :func:`hoiground.detection.detect`: one grounding pass
                        per image, one lightweight decode per pair.
* ``grounded_naive``  - :func:`hoiground.detection.detect_naive`: identical
                        scores, everything recomputed per pair.
* ``mldecoder_crop``  - one full per-class-query decoder pass over the cropped
                        union region of every pair.

Wall times are medians over timed iterations after warmup; forward counts come
from exact instrumentation counters, not estimates. Timing runs never
parallelize pair processing. Absolute speed is machine-bound; only the scaling
shape across pair counts is meaningful.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .decoder import TextEmbeddingBank, ml_decoder_forward
from .detection import Detection, DetectorConfig, detect, detect_naive
from .errors import ArgumentError
from .geometry import union_box, validate_box
from .grounding import FeatureMap, box_to_mask
from .instrument import COUNTERS
from .params import MLDecoderParams, ModelParams, init_ml_decoder_params, init_params

STRATEGIES = ("grounded", "grounded_naive", "mldecoder_crop")
DEFAULT_ITERATIONS = 100
DEFAULT_WARMUP = 10


@dataclass
class BenchScene:
    fm: FeatureMap
    bank: TextEmbeddingBank
    params: ModelParams
    baseline_params: MLDecoderParams
    humans: list[Detection]
    objects: list[Detection]
    cfg: DetectorConfig


@dataclass
class BenchResult:
    strategy: str
    pair_count: int
    median_seconds: float
    min_seconds: float      # noise-robust companion to the median
    throughput_ips: float
    grounding_passes: int
    decoder_forwards: int


def crop_feature_map(fm: FeatureMap, box) -> FeatureMap:
    """Sub-grid of the patches whose centers fall inside the box.

    Falls back to the single nearest-center patch for boxes smaller than a
    cell, so the result is never empty. The crop is a standalone feature map
    over its own normalized extent.
    """
    box = validate_box(box)
    include = box_to_mask(box, fm).include.reshape(fm.grid_h, fm.grid_w)
    rows = np.flatnonzero(include.any(axis=1))
    cols = np.flatnonzero(include.any(axis=0))
    grid = fm.to_grid()[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    return FeatureMap.from_grid(grid)


def _factor_pair(n: int) -> tuple[int, int]:
    """(n_humans, n_objects) with product exactly n, as square as possible."""
    best = 1
    for k in range(1, int(np.sqrt(n)) + 1):
        if n % k == 0:
            best = k
    return best, n // best


def _random_box(rng: np.random.Generator, min_side: float = 0.15) -> tuple:
    x1 = float(rng.uniform(0.0, 1.0 - min_side))
    y1 = float(rng.uniform(0.0, 1.0 - min_side))
    x2 = float(rng.uniform(x1 + min_side, 1.0))
    y2 = float(rng.uniform(y1 + min_side, 1.0))
    return (x1, y1, x2, y2)


def make_bench_scene(
    pair_count: int,
    seed: int = 0,
    grid: int = 16,
    d_v: int = 512,
    d_t: int = 512,
    n_objects: int = 20,
    n_actions: int = 12,
) -> BenchScene:
    """Random scene with exactly ``pair_count`` human-object pairs.

    The bank carries the full (action, object) triplet-class grid so the
    baseline decoder has one query per triplet class.
    """
    if pair_count < 1:
        raise ArgumentError(f"pair_count must be >= 1, got {pair_count}")
    rng = np.random.default_rng(seed)
    fm = FeatureMap(grid, grid, rng.standard_normal((grid * grid, d_v)))
    emb = rng.standard_normal((1 + n_objects + n_actions, d_t))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    human, objects, actions = emb[0], emb[1 : 1 + n_objects], emb[1 + n_objects :]
    hoi_pairs = [(a, o) for a in range(n_actions) for o in range(n_objects)]
    hoi = np.stack([actions[a] + objects[o] for a, o in hoi_pairs])
    hoi /= np.linalg.norm(hoi, axis=1, keepdims=True)
    bank = TextEmbeddingBank(
        human=human, objects=objects, actions=actions, hoi=hoi, hoi_pairs=hoi_pairs
    )
    params = init_params({"d_v": d_v, "d_t": d_t}, seed=seed)
    baseline = init_ml_decoder_params(d_t=d_t, d=d_v, seed=seed)
    n_h, n_o = _factor_pair(pair_count)
    human_id = n_objects
    humans = [
        Detection(box=_random_box(rng), score=float(rng.uniform(0.5, 1.0)),
                  class_id=human_id)
        for _ in range(n_h)
    ]
    dets = [
        Detection(box=_random_box(rng), score=float(rng.uniform(0.5, 1.0)),
                  class_id=int(rng.integers(n_objects)))
        for _ in range(n_o)
    ]
    # scores are drawn above 0.5, so the default 0.2 threshold keeps every proposal
    cfg = DetectorConfig(
        min_instances=1,
        max_instances=max(n_h, n_o),
        human_class_id=human_id,
    )
    return BenchScene(
        fm=fm, bank=bank, params=params, baseline_params=baseline,
        humans=humans, objects=dets, cfg=cfg,
    )


def _run_grounded(scene: BenchScene) -> object:
    return detect(scene.fm, scene.bank, scene.params, scene.humans, scene.objects,
                  scene.cfg)


def _run_grounded_naive(scene: BenchScene) -> object:
    return detect_naive(scene.fm, scene.bank, scene.params, scene.humans,
                        scene.objects, scene.cfg)


def _run_mldecoder_crop(scene: BenchScene) -> object:
    """One full baseline pass per pair over the cropped union region."""
    out = []
    lookup = {pair: t for t, pair in enumerate(scene.bank.hoi_pairs)}
    for human in scene.humans:
        for obj in scene.objects:
            crop = crop_feature_map(scene.fm, union_box(human.box, obj.box))
            scores = ml_decoder_forward(crop, scene.bank, scene.baseline_params)
            rows = [
                scores[lookup[(a, obj.class_id)]] for a in range(scene.bank.n_actions)
            ]
            out.append(np.asarray(rows) * human.score * obj.score)
    return out


_RUNNERS: dict[str, Callable[[BenchScene], object]] = {
    "grounded": _run_grounded,
    "grounded_naive": _run_grounded_naive,
    "mldecoder_crop": _run_mldecoder_crop,
}


def run_benchmark(
    scene_factory: Callable[[int], BenchScene] | None = None,
    pair_counts: list[int] = (1, 50, 200),
    strategies: tuple[str, ...] = STRATEGIES,
    iterations: int = DEFAULT_ITERATIONS,
    warmup: int = DEFAULT_WARMUP,
) -> list[BenchResult]:
    """Time every strategy at every pair count; results sorted for reporting.

    ``decoder_forwards`` reports per-pair decodes for the grounded strategies
    and full baseline passes for ``mldecoder_crop`` (its unit of work).
    """
    if not pair_counts:
        raise ArgumentError("pair_counts must not be empty")
    if iterations < 1:
        raise ArgumentError(f"iterations must be >= 1, got {iterations}")
    for strategy in strategies:
        if strategy not in _RUNNERS:
            raise ArgumentError(
                f"unknown strategy {strategy!r}; known: {sorted(_RUNNERS)}"
            )
    scene_factory = scene_factory or make_bench_scene
    results = []
    for strategy in strategies:
        runner = _RUNNERS[strategy]
        for pair_count in pair_counts:
            scene = scene_factory(pair_count)
            COUNTERS.reset()
            runner(scene)
            counts = COUNTERS.snapshot()
            for _ in range(warmup):
                runner(scene)
            times = []
            for _ in range(iterations):
                start = time.perf_counter()
                runner(scene)
                times.append(time.perf_counter() - start)
            median = float(np.median(times))
            results.append(
                BenchResult(
                    strategy=strategy,
                    pair_count=pair_count,
                    median_seconds=median,
                    min_seconds=float(min(times)),
                    throughput_ips=1.0 / median,
                    grounding_passes=counts["grounding_passes"],
                    decoder_forwards=(
                        counts["baseline_passes"]
                        if strategy == "mldecoder_crop"
                        else counts["decoder_forwards"]
                    ),
                )
            )
    return sorted(results, key=lambda r: (r.strategy, r.pair_count))


def write_results_json(path, results: list[BenchResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in results], fh, indent=1)


def write_results_csv(path, results: list[BenchResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "pair_count", "median_ms", "grounding_passes", "decoder_forwards"]
        )
        for r in results:
            writer.writerow(
                [r.strategy, r.pair_count, f"{r.median_seconds * 1e3:.3f}",
                 r.grounding_passes, r.decoder_forwards]
            )

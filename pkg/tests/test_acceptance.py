"""Acceptance suite: one test per criterion, each printing a PASS line.

Criterion 6 and 7 margins are verified on the pinned reference seeds below;
the runs are deterministic, so the asserted numbers are stable.
"""

import itertools
import time

import numpy as np
import pytest

from hoiground.bench import make_bench_scene, run_benchmark
from hoiground.decoder import TextEmbeddingBank
from hoiground.detection import Detection, DetectorConfig, detect, detect_naive, \
    prediction_record
from hoiground.evaluation import GTEntry, ap_from_flags, evaluate_records
from hoiground.grounding import FeatureMap, box_to_mask, patch_importance, \
    patch_similarity
from hoiground.numerics import masked_softmax, scaled_sigmoid
from hoiground.params import init_params
from hoiground.synthetic import SyntheticSpec, generate_synthetic
from hoiground.training import TrainConfig, classification_forward, gradient_check, train
from tests.conftest import random_bank

FULL_BOX = (0.0, 0.0, 1.0, 1.0)

# reference configuration for criteria 6 and 7 (margins verified once, pinned)
REFERENCE_SEED = 3            # bank / training scenes / fresh init
REFERENCE_SHUFFLE_SEED = 50   # epoch shuffling
REFERENCE_EVAL_SCENE_SEED = 3003
REFERENCE_LR = 0.7
REFERENCE_BATCH = 2
REFERENCE_DATA = dict(
    noise_std=0.1, action_strength=1.0, normalize_patches=True, n_twins=1,
)


def _passed(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] {name}: PASS{suffix}")


def _random_instance(seed, grid=(5, 4), dim=16, n_objects=3, n_actions=3):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(grid[0], grid[1], rng.standard_normal((grid[0] * grid[1], dim)))
    bank = random_bank(rng, n_objects=n_objects, n_actions=n_actions, dim=dim)
    params = init_params({"d_v": dim, "d_t": dim}, seed=seed + 41)
    return fm, bank, params


def test_criterion_1_reduction_chain():
    """Full-image boxes with zero detection-score exponent reproduce the
    image-level classification scores."""
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        fm, bank, params = _random_instance(seed)
        scores = classification_forward(fm, bank, params)
        humans = [Detection(FULL_BOX, 0.8, 77)]
        objects = [Detection(FULL_BOX, 0.6, k) for k in range(bank.n_objects)]
        cfg = DetectorConfig(human_class_id=77, det_lambda=0.0)
        preds = detect(fm, bank, params, humans, objects, cfg)
        assert len(preds) == bank.n_objects * bank.n_actions
        for p in preds:
            worst = max(worst, abs(p.score - scores[p.object_class, p.action]))
    elapsed = time.perf_counter() - start
    assert worst < 1e-10
    assert elapsed < 1.0
    _passed("criterion 1 (reduction chain)", f"max dev {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_oracle_equivalence():
    """Shared-precompute detection equals the naive per-pair recomputation."""
    start = time.perf_counter()
    worst = 0.0
    n_preds = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        gh, gw = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        dim = 12
        fm = FeatureMap(gh, gw, rng.standard_normal((gh * gw, dim)))
        bank = random_bank(rng, n_objects=4, n_actions=3, dim=dim)
        params = init_params({"d_v": dim, "d_t": dim}, seed=seed)

        def rbox():
            x1 = float(rng.uniform(0, 0.8))
            y1 = float(rng.uniform(0, 0.8))
            return (x1, y1, float(rng.uniform(x1 + 0.05, 1.0)),
                    float(rng.uniform(y1 + 0.05, 1.0)))

        humans = [Detection(rbox(), float(rng.uniform(0.2, 1.0)), 66)
                  for _ in range(int(rng.integers(1, 6)))]
        objects = [Detection(rbox(), float(rng.uniform(0.2, 1.0)),
                             int(rng.integers(0, 5)))  # class 4 unknown -> skipped
                   for _ in range(int(rng.integers(1, 6)))]
        cfg = DetectorConfig(human_class_id=66,
                             det_lambda=float(rng.choice([0.5, 2.0])))
        fast = detect(fm, bank, params, humans, objects, cfg)
        naive = detect_naive(fm, bank, params, humans, objects, cfg)
        assert len(fast) == len(naive)
        n_preds += len(fast)
        for pf, pn in zip(fast, naive):
            assert pf.object_box == pn.object_box and pf.action == pn.action
            worst = max(worst, abs(pf.score - pn.score))
    elapsed = time.perf_counter() - start
    assert worst < 1e-12
    assert elapsed < 30.0
    _passed("criterion 2 (oracle equivalence)",
            f"{n_preds} predictions, max dev {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_gradient_correctness():
    """Analytic backward vs central finite differences on the toy model."""
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    fm = FeatureMap(4, 4, rng.standard_normal((16, 16)))
    emb = rng.standard_normal((7, 16))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    bank = TextEmbeddingBank(human=emb[0], objects=emb[1:4], actions=emb[4:7])
    params = init_params({"d_v": 16, "d_t": 16}, seed=101)
    err = gradient_check(fm, bank, params, {(0, 1), (2, 0)}, h=1e-5)
    elapsed = time.perf_counter() - start
    assert err < 1e-4
    assert elapsed < 60.0
    _passed("criterion 3 (gradient correctness)",
            f"max rel err {err:.2e}, {elapsed:.1f}s")


def test_criterion_4_normalization_suite():
    """Softmax mass, partition of unity, and sigmoid range over random cases."""
    start = time.perf_counter()
    rng = np.random.default_rng(12)
    cases = 0

    for _ in range(400):  # masked softmax: unit mass, exact zeros
        n = int(rng.integers(2, 50))
        logits = rng.standard_normal(n) * float(rng.uniform(0.5, 20))
        mask = rng.random(n) < float(rng.uniform(0.2, 0.9))
        if not mask.any():
            mask[int(rng.integers(n))] = True
        out = masked_softmax(logits, float(rng.uniform(0.02, 5.0)), mask)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out[~mask] == 0.0)
        cases += 1

    for _ in range(300):  # masked-global partition of unity over box tilings
        gh, gw = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        fm = FeatureMap(gh, gw, rng.standard_normal((gh * gw, 4)))
        field = rng.standard_normal(gh * gw)
        alpha = patch_importance(field, 0.05)
        # random vertical tiling: columns split at random cut points
        cuts = sorted(set([0, gw] + [int(c) for c in rng.integers(1, gw, size=2)]))
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mask = box_to_mask((lo / gw, 0.0, hi / gw, 1.0), fm)
            total += float(alpha[mask.include].sum())
        assert abs(total - 1.0) <= 1e-12
        cases += 1

    for _ in range(300):  # sigmoid scores strictly inside (0, 1)
        z = float(rng.uniform(-1, 1))
        log_temp = float(rng.uniform(-2, 3))
        bias = float(rng.uniform(-6, 6))
        s = scaled_sigmoid(z, log_temp, bias)
        assert 0.0 < s < 1.0
        cases += 1

    elapsed = time.perf_counter() - start
    assert cases >= 1000
    assert elapsed < 10.0
    _passed("criterion 4 (normalization suite)", f"{cases} cases, {elapsed:.1f}s")


def test_criterion_5_reference_defaults():
    """Literal default values of the temperature, gate, sigmoid, and proposal rule."""
    params = init_params({"d_v": 8, "d_t": 8}, seed=0)
    assert params.tau_p == 0.05
    assert params.gamma == 1.0
    for sig in (params.sig_action, params.sig_inter_h, params.sig_inter_o):
        assert sig.log_temp == np.log(10.0)
        assert sig.bias == -5.0
    cfg = DetectorConfig()
    assert cfg.score_threshold == 0.2
    assert cfg.min_instances == 3
    assert cfg.max_instances == 15
    from hoiground.detection import LAMBDA_PRESETS

    assert LAMBDA_PRESETS == {"hico-det": 0.5, "v-coco": 2.0}
    assert cfg.det_lambda == 0.5
    _passed("criterion 5 (reference defaults)")


@pytest.fixture(scope="module")
def reference_run():
    """Train once on the pinned reference dataset; shared by criteria 6 and 7.

    The training set is the criterion's 24 planted images on the 6x6 grid with
    3 object and 3 action classes; held-out scenes come from the same bank with
    one interaction each plus a signature-free same-class twin instance, on a
    bigger grid so blobs do not crowd each other.
    """
    train_set = generate_synthetic(SyntheticSpec(
        seed=REFERENCE_SEED, n_images=24, n_interactions=3, **REFERENCE_DATA,
    ))
    eval_set = generate_synthetic(SyntheticSpec(
        seed=REFERENCE_SEED, scene_seed=REFERENCE_EVAL_SCENE_SEED,
        n_images=60, n_interactions=1, grid_h=8, grid_w=8, **REFERENCE_DATA,
    ))
    initial = init_params({"d_v": 16, "d_t": 16}, seed=REFERENCE_SEED)
    t0 = time.perf_counter()
    result = train(
        train_set.samples, train_set.bank,
        TrainConfig(lr=REFERENCE_LR, epochs=5, batch_size=REFERENCE_BATCH,
                    seed=REFERENCE_SHUFFLE_SEED),
        params=initial,
    )
    train_seconds = time.perf_counter() - t0
    return train_set, eval_set, initial, result, train_seconds


def _detection_map(dataset, params) -> float:
    preds, gts = [], []
    cfg = DetectorConfig(human_class_id=dataset.human_class_id)
    for scene in dataset.scenes:
        dets = [Detection(box=i.box, score=1.0, class_id=i.class_id)
                for i in scene.instances]
        humans = [d for d in dets if d.class_id == dataset.human_class_id]
        objects = [d for d in dets if d.class_id != dataset.human_class_id]
        for p in detect(scene.sample.fm, dataset.bank, params, humans, objects, cfg):
            preds.append(prediction_record(scene.image_id, p))
        for hb, ob, oc, act in scene.triplets:
            gts.append(GTEntry(scene.image_id, hb, ob, oc, act))
    return evaluate_records(preds, gts).map_full


def test_criterion_6_planted_signal_learning(reference_run):
    """Five epochs on the pinned planted set: loss halves and detection mAP
    with ground-truth boxes clears the trained/untrained margins."""
    start = time.perf_counter()
    train_set, eval_set, initial, result, train_seconds = reference_run
    loss_ratio = result.epoch_losses[-1] / result.epoch_losses[0]
    untrained_map = _detection_map(eval_set, initial)
    trained_map = _detection_map(eval_set, result.params)
    elapsed = time.perf_counter() - start + train_seconds
    assert loss_ratio < 0.5
    assert trained_map >= 0.6
    assert untrained_map <= 0.25
    assert elapsed < 300.0
    _passed(
        "criterion 6 (planted-signal learning)",
        f"loss x{loss_ratio:.3f}, mAP {untrained_map:.3f} -> {trained_map:.3f}, "
        f"{elapsed:.1f}s incl. training",
    )


def test_criterion_7_gating_suppression(reference_run):
    """Interactive pairs outscore non-interactive ones by >= 2x at unit gate
    exponent, and the gap closes monotonically as the exponent goes to zero."""
    start = time.perf_counter()
    _, eval_set, _, result, _ = reference_run
    gammas = [1.0, 0.75, 0.5, 0.25, 0.0]
    mean_ratios = []
    for gamma in gammas:
        params = result.params.with_gamma(gamma)
        cfg = DetectorConfig(human_class_id=eval_set.human_class_id)
        ratios = []
        for scene in eval_set.scenes:
            human_box, int_box, obj_class, action = scene.triplets[0]
            twin = next(
                inst for inst in scene.instances
                if not inst.interactive and inst.class_id == obj_class
            )
            humans = [Detection(human_box, 1.0, eval_set.human_class_id)]
            objects = [Detection(int_box, 1.0, obj_class),
                       Detection(twin.box, 1.0, obj_class)]
            preds = detect(scene.sample.fm, eval_set.bank, params, humans, objects, cfg)
            s_int = next(p.score for p in preds
                         if p.object_box == int_box and p.action == action)
            s_twin = next(p.score for p in preds
                          if p.object_box == twin.box and p.action == action)
            ratios.append(s_int / s_twin)
        mean_ratios.append(float(np.mean(ratios)))
    elapsed = time.perf_counter() - start
    assert mean_ratios[0] >= 2.0
    for earlier, later in zip(mean_ratios, mean_ratios[1:]):
        assert later < earlier  # gap shrinks monotonically as gamma -> 0
    assert elapsed < 60.0
    _passed(
        "criterion 7 (gating suppression)",
        "ratios " + " > ".join(f"{r:.2f}" for r in mean_ratios) + f", {elapsed:.0f}s",
    )


def test_criterion_8_efficiency_trend():
    """One grounding pass per image vs per-pair full passes, and the wall-time
    growth shapes that follow from them."""
    start = time.perf_counter()

    def factory(pair_count):
        # many object classes make the shared per-image grounding pass the
        # dominant cost, which is exactly what the single-forward claim is about
        return make_bench_scene(pair_count, seed=0, grid=16, d_v=512, d_t=512,
                                n_objects=80, n_actions=3)

    # the grounded runs are milliseconds, so give their medians many samples;
    # the crop baseline costs seconds per run and gets the minimum
    results = run_benchmark(
        factory, pair_counts=[1, 200], strategies=("grounded",),
        iterations=25, warmup=5,
    ) + run_benchmark(
        factory, pair_counts=[1, 200], strategies=("mldecoder_crop",),
        iterations=2, warmup=1,
    )
    by = {(r.strategy, r.pair_count): r for r in results}
    for pairs in (1, 200):
        assert by[("grounded", pairs)].grounding_passes == 1
        assert by[("grounded", pairs)].decoder_forwards == pairs
        assert by[("mldecoder_crop", pairs)].grounding_passes == 0
        assert by[("mldecoder_crop", pairs)].decoder_forwards == pairs
    # ratios on per-cell minima: robust to the host's background load, which
    # inflates medians by tens of milliseconds in bursts
    grounded_growth = (by[("grounded", 200)].min_seconds
                       / by[("grounded", 1)].min_seconds)
    baseline_growth = (by[("mldecoder_crop", 200)].min_seconds
                       / by[("mldecoder_crop", 1)].min_seconds)
    elapsed = time.perf_counter() - start
    assert grounded_growth < 3.0
    assert baseline_growth >= 20.0
    assert elapsed < 120.0
    _passed(
        "criterion 8 (efficiency trend)",
        f"grounded x{grounded_growth:.2f}, baseline x{baseline_growth:.1f}, "
        f"{elapsed:.0f}s",
    )


def test_criterion_9_evaluator_correctness():
    """PR staircase equals the exhaustive oracle on every small instance, and
    the hand-computed three-class example matches exactly."""
    start = time.perf_counter()

    def oracle(flags, n_gt):
        prefixes = []
        tp = 0
        for j, flag in enumerate(flags, start=1):
            tp += bool(flag)
            prefixes.append((tp, tp / j))
        return sum(
            max((prec for reached, prec in prefixes if reached >= k), default=0.0)
            for k in range(1, n_gt + 1)
        ) / n_gt

    checked = 0
    for n in range(0, 7):
        for flags in itertools.product([False, True], repeat=n):
            tp = sum(flags)
            for n_gt in range(max(tp, 1), tp + 3):
                assert ap_from_flags(list(flags), n_gt) == pytest.approx(
                    oracle(flags, n_gt), abs=1e-12
                )
                checked += 1

    # hand-computed three-class example: APs 1.0, 1.0, 0.5
    h1, h2 = (0.0, 0.0, 0.5, 0.5), (0.1, 0.1, 0.6, 0.6)
    o1, o2, o3 = (0.5, 0.5, 1.0, 1.0), (0.6, 0.1, 1.0, 0.6), (0.0, 0.5, 0.5, 1.0)
    gts = [
        GTEntry("img1", h1, o1, 0, 0),
        GTEntry("img1", h1, o3, 1, 0),
        GTEntry("img2", h2, o2, 0, 0),
        GTEntry("img2", h2, o2, 0, 1),
    ]

    def pred(image_id, hb, ob, oc, act, score):
        return {"image_id": image_id, "human_box": list(hb), "object_box": list(ob),
                "object_class": oc, "action": act, "score": score}

    preds = [
        pred("img1", h1, o1, 0, 0, 0.9),
        pred("img2", h2, o2, 0, 0, 0.8),
        pred("img1", (0.5, 0.0, 1.0, 0.4), o1, 0, 0, 0.7),
        pred("img2", h2, o2, 0, 1, 0.6),
        pred("img2", h2, o2, 0, 1, 0.5),
        pred("img1", h1, (0.4, 0.5, 0.9, 1.0), 1, 0, 0.9),
        pred("img1", h1, o3, 1, 0, 0.4),
    ]
    report = evaluate_records(preds, gts)
    assert report.per_class_ap[(0, 0)] == pytest.approx(1.0)
    assert report.per_class_ap[(1, 0)] == pytest.approx(1.0)
    assert report.per_class_ap[(0, 1)] == pytest.approx(0.5)
    assert report.map_full == pytest.approx(2.5 / 3)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _passed("criterion 9 (evaluator correctness)",
            f"{checked} enumerated instances, {elapsed:.1f}s")

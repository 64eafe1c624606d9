"""Command-line interface.

Subcommands: gen-data, train, classify, detect, eval, bench. Global options
``--config`` (INI file), ``--seed``, and ``--threads`` apply to every
subcommand; flags given on a subcommand override the config file. All errors
print a single ``ERROR:<category>: message`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import tensorio
from .config import RunConfig, load_config
from .detection import detect, read_detections, write_predictions
from .errors import HoigroundError
from .evaluation import evaluate
from .params import init_params, load_checkpoint, save_checkpoint
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, classification_forward, train


def _fail(category: str, message: str) -> None:
    click.echo(f"ERROR:{category}:{message}", err=True)
    sys.exit(1)


def _command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HoigroundError as exc:
            _fail(exc.category, str(exc))
        except OSError as exc:
            _fail("io", str(exc))

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="INI configuration file.")
@click.option("--seed", type=int, default=None, help="Master seed (overrides config).")
@click.option("--threads", type=int, default=None, help="Parallelism cap (overrides config).")
@click.pass_context
def main(ctx, config_path, seed, threads):
    """Grounded pairwise human-object interaction reasoning toolkit."""
    try:
        config = load_config(config_path)
    except HoigroundError as exc:
        _fail(exc.category, str(exc))
    if seed is not None:
        config.seed = seed
    if threads is not None:
        config.threads = threads
    ctx.obj = config


@main.command("gen-data")
@click.argument("out_dir", type=click.Path())
@click.option("--grid-h", type=int, default=6)
@click.option("--grid-w", type=int, default=6)
@click.option("--d-v", type=int, default=None, help="Feature dim (default: config d_v).")
@click.option("--d-t", type=int, default=None, help="Text dim (default: config d_t).")
@click.option("--objects", type=int, default=3)
@click.option("--actions", type=int, default=3)
@click.option("--images", type=int, default=24)
@click.option("--noise-std", type=float, default=0.1)
@click.option("--blob", type=int, default=2, help="Planted blob side length in patches.")
@click.option("--interactions", type=int, default=1,
              help="Interacting object classes per image.")
@click.option("--twins", type=int, default=1,
              help="Signature-free duplicate instances of interacting classes.")
@click.option("--scene-seed", type=int, default=None,
              help="Scene randomness; defaults to --seed (bank stays tied to --seed).")
@click.option("--normalize/--no-normalize", default=True,
              help="Unit-normalize patch features.")
@click.pass_obj
@_command
def cmd_gen_data(config: RunConfig, out_dir, grid_h, grid_w, d_v, d_t, objects,
                 actions, images, noise_std, blob, interactions, twins, scene_seed,
                 normalize):
    """Generate a planted-signal dataset directory."""
    spec = SyntheticSpec(
        grid_h=grid_h, grid_w=grid_w,
        d_v=d_v if d_v is not None else config.d_v,
        d_t=d_t if d_t is not None else config.d_t,
        n_objects=objects, n_actions=actions, n_images=images,
        noise_std=noise_std, seed=config.seed, scene_seed=scene_seed,
        blob_h=blob, blob_w=blob, n_interactions=interactions, n_twins=twins,
        normalize_patches=normalize,
    )
    dataset = generate_synthetic(spec)
    tensorio.write_dataset(out_dir, dataset)
    click.echo(f"wrote {images} images, bank, manifest, ground truth to {out_dir}")
    click.echo(f"human_class_id = {dataset.human_class_id}")


@main.command("train")
@click.argument("data_dir", type=click.Path())
@click.argument("out_checkpoint", type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--curve", type=click.Path(), default=None,
              help="Also render the loss curve to this image file.")
@click.pass_obj
@_command
def cmd_train(config: RunConfig, data_dir, out_checkpoint, epochs, lr, batch_size, curve):
    """Train on a dataset directory; prints per-epoch loss CSV lines."""
    samples, bank, _ = tensorio.load_dataset(data_dir)
    train_config = TrainConfig(
        lr=lr if lr is not None else config.lr,
        epochs=epochs if epochs is not None else config.epochs,
        batch_size=batch_size if batch_size is not None else config.batch_size,
        focal_gamma=config.focal_gamma,
        focal_alpha=config.focal_alpha,
        seed=config.seed,
    )
    params = init_params(
        {"d_v": samples[0].fm.dim, "d_t": bank.dim, **{
            k: v for k, v in (("d_s", config.d_s), ("d", config.d)) if v is not None
        }},
        seed=config.seed, tau_p=config.tau_p, gamma=config.gamma,
    )
    result = train(samples, bank, train_config, params=params)
    save_checkpoint(result.params, out_checkpoint)
    click.echo("epoch,loss")
    for epoch, loss in enumerate(result.epoch_losses):
        click.echo(f"{epoch},{loss:.6f}")
    if curve:
        from .figures import render_loss_curve

        render_loss_curve(result.epoch_losses, curve)


@main.command("classify")
@click.argument("checkpoint", type=click.Path())
@click.argument("features", type=click.Path())
@click.argument("bank_file", type=click.Path())
@click.pass_obj
@_command
def cmd_classify(config: RunConfig, checkpoint, features, bank_file):
    """Image-level triplet scores as JSON (rows = objects, cols = actions)."""
    params = load_checkpoint(checkpoint)
    fm = tensorio.read_feature_map(features)
    bank = tensorio.read_bank(bank_file)
    scores = classification_forward(fm, bank, params)
    click.echo(json.dumps({
        "object_classes": bank.object_names,
        "action_classes": bank.action_names,
        "scores": scores.tolist(),
    }, indent=1))


@main.command("detect")
@click.argument("checkpoint", type=click.Path())
@click.argument("features", type=click.Path())
@click.argument("bank_file", type=click.Path())
@click.argument("detections_file", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write JSON-lines predictions here instead of stdout.")
@click.option("--lambda", "det_lambda", type=float, default=None,
              help="Detector-score exponent (default from config).")
@click.pass_obj
@_command
def cmd_detect(config: RunConfig, checkpoint, features, bank_file, detections_file,
               out_path, det_lambda):
    """Instance-level predictions for one image, as JSON lines."""
    from .detection import filter_proposals

    params = load_checkpoint(checkpoint)
    fm = tensorio.read_feature_map(features)
    bank = tensorio.read_bank(bank_file)
    image_id, dets = read_detections(detections_file)
    det_config = config.detector()
    if det_lambda is not None:
        det_config = dataclasses.replace(det_config, det_lambda=det_lambda)
    humans, objects = filter_proposals(dets, det_config)
    preds = detect(fm, bank, params, humans, objects, det_config,
                   threads=config.threads)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            write_predictions(fh, image_id, preds)
        click.echo(f"wrote {len(preds)} predictions to {out_path}")
    else:
        write_predictions(sys.stdout, image_id, preds)


@main.command("eval")
@click.argument("predictions", type=click.Path())
@click.argument("ground_truth", type=click.Path())
@click.option("--rare-threshold", type=int, default=10,
              help="Classes with fewer ground truths than this are rare.")
@click.option("--json", "json_path", type=click.Path(), default=None,
              help="Write the report JSON here (default: print after the table).")
@click.option("--figure", "figure_path", type=click.Path(), default=None,
              help="Render per-class AP bars to this image file.")
@click.pass_obj
@_command
def cmd_eval(config: RunConfig, predictions, ground_truth, rare_threshold,
             json_path, figure_path):
    """mAP report (full / rare / non-rare) from prediction and ground-truth files."""
    report = evaluate(predictions, ground_truth, rare_threshold=rare_threshold,
                      threads=config.threads)
    doc = json.dumps(report.to_json(), indent=1)
    if json_path:
        Path(json_path).write_text(doc + "\n", encoding="utf-8")
    if figure_path:
        from .figures import render_ap_bars

        render_ap_bars(report, figure_path)
    click.echo(f"{'class':>14}  {'gt':>4}  {'ap':>7}  group")
    for action, obj in sorted(report.per_class_ap):
        count = report.gt_counts[(action, obj)]
        group = "rare" if count < rare_threshold else "non-rare"
        click.echo(f"  a{action:>3} / o{obj:<4}  {count:>4}  "
                   f"{report.per_class_ap[(action, obj)]:>7.4f}  {group}")
    click.echo(f"mAP full={report.map_full:.4f} rare={report.map_rare:.4f} "
               f"nonrare={report.map_nonrare:.4f} (rare < {rare_threshold} samples)")
    if json_path:
        click.echo(f"report json written to {json_path}")
    else:
        click.echo(doc)


@main.command("bench")
@click.argument("out_dir", type=click.Path())
@click.option("--pairs", default="1,50,200", help="Comma-separated pair counts.")
@click.option("--strategies", default=",".join(bench_mod.STRATEGIES),
              help="Comma-separated strategy names.")
@click.option("--iterations", type=int, default=bench_mod.DEFAULT_ITERATIONS)
@click.option("--warmup", type=int, default=bench_mod.DEFAULT_WARMUP)
@click.option("--grid", type=int, default=16)
@click.option("--d-v", type=int, default=512)
@click.option("--d-t", type=int, default=512)
@click.option("--objects", type=int, default=20)
@click.option("--actions", type=int, default=12)
@click.option("--figure/--no-figure", default=True,
              help="Render the timing curves alongside the CSV/JSON output.")
@click.pass_obj
@_command
def cmd_bench(config: RunConfig, out_dir, pairs, strategies, iterations, warmup,
              grid, d_v, d_t, objects, actions, figure):
    """Efficiency benchmark: results JSON + CSV (+ timing-curve figure)."""
    pair_counts = [int(v) for v in pairs.split(",") if v.strip()]
    strategy_list = tuple(s.strip() for s in strategies.split(",") if s.strip())

    def factory(pair_count: int) -> bench_mod.BenchScene:
        return bench_mod.make_bench_scene(
            pair_count, seed=config.seed, grid=grid, d_v=d_v, d_t=d_t,
            n_objects=objects, n_actions=actions,
        )

    results = bench_mod.run_benchmark(
        factory, pair_counts=pair_counts, strategies=strategy_list,
        iterations=iterations, warmup=warmup,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench_mod.write_results_json(out / "bench_results.json", results)
    bench_mod.write_results_csv(out / "bench_results.csv", results)
    if figure:
        from .figures import render_bench_curves

        render_bench_curves(results, out / "bench_curves.png")
    for r in results:
        click.echo(
            f"{r.strategy:>15} pairs={r.pair_count:<4} median={r.median_seconds * 1e3:8.2f} ms "
            f"grounding={r.grounding_passes} decodes={r.decoder_forwards}"
        )
    click.echo(f"results written to {out}")


if __name__ == "__main__":
    main()

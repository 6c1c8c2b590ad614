"""``saan`` command line: curation, degradation preview, training and evaluation.

Every command writes a run manifest (``<output>.run.json``) recording the
command, resolved configuration, seed, paths, content hashes of the inputs
and wall-clock timestamps. Timestamps live only in the run manifest, so the
artifacts themselves are byte-stable across reruns with the same inputs.
Human-readable summaries go to stdout and diagnostics to stderr.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from saan import curate, imageio, imageops, metrics, toydata
from saan.imageops import DistortionSpec, Kind

log = logging.getLogger("saan")

REFERENCE_CORPUS_SIZE = 60337
REFERENCE_SPLIT = (53937, 6400)


def git_blob_hash(path: str | Path) -> str:
    """SHA-1 of ``blob <size>\\0<content>``, as ``git hash-object`` computes it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Provenance record written next to a command's primary output."""

    def __init__(self, command: str, seed: int | None, config: dict | None = None):
        self.data = {
            "command": command,
            "config": config or {},
            "seed": seed,
            "inputs": {},
            "outputs": [],
            "started": _now(),
        }

    def add_input(self, path: str | Path) -> None:
        path = Path(path)
        self.data["inputs"][str(path)] = git_blob_hash(path) if path.is_file() else None

    def add_output(self, path: str | Path) -> None:
        self.data["outputs"].append(str(path))

    def write(self, primary_output: str | Path) -> Path:
        self.data["finished"] = _now()
        out = Path(str(primary_output) + ".run.json")
        out.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return out


def _write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _configure_threads() -> None:
    import torch

    try:
        n = max(1, int(os.environ.get("SAAN_THREADS", "1")))
    except ValueError:
        n = 1
    torch.set_num_threads(n)


def _load_config(path: str, seed: int | None):
    from saan.model import ConfigError, load_config

    try:
        config = load_config(path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None
    if seed is not None:
        config = config.replace(seed=seed)
    return config


def _image_paths(manifest: str) -> dict[str, Path]:
    root = Path(manifest).parent
    try:
        records = curate.read_manifest(manifest)
    except curate.ManifestError as exc:
        raise click.ClickException(str(exc)) from None
    return {r.image_id: root / r.path for r in records}


def _scored_images(scores_csv: str, manifest: str) -> list[tuple[np.ndarray, float]]:
    paths = _image_paths(manifest)
    try:
        scores = curate.read_scores(scores_csv)
    except curate.ManifestError as exc:
        raise click.ClickException(str(exc)) from None
    missing = [k for k in scores if k not in paths]
    if missing:
        raise click.ClickException(f"{len(missing)} scored ids missing from manifest, e.g. {missing[0]}")
    return [(imageio.read_image(paths[k]), s) for k, s in scores.items()]


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """SAAN artistic-image aesthetics pipeline."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ------------------------------------------------------------------ curate


def _parse_split(text: str | None, n: int) -> tuple[int, int]:
    if text is None:
        if n == REFERENCE_CORPUS_SIZE:
            return REFERENCE_SPLIT
        train = round(n * REFERENCE_SPLIT[0] / REFERENCE_CORPUS_SIZE)
        return train, n - train
    try:
        a, b = (int(p) for p in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected TRAIN:TEST, got {text!r}", param_hint="--split") from None
    if a < 0 or b < 0 or a + b != n:
        raise click.BadParameter(f"{a}:{b} does not cover {n} records", param_hint="--split")
    return a, b


@main.command("curate")
@click.argument("manifest_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--score-fn", type=click.Choice(sorted(curate.SCORE_FUNCTIONS)), default="sigmoid", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", "split_spec", default=None, help="TRAIN:TEST counts (default scales 53937:6400 to the corpus).")
def cmd_curate(manifest_csv, out_csv, score_fn, seed, split_spec):
    """Score vote records per month and write train/test split tables."""
    run = RunManifest("curate", seed, {"score_fn": score_fn, "split": split_spec})
    run.add_input(manifest_csv)
    try:
        records = curate.read_manifest(manifest_csv)
    except curate.ManifestError as exc:
        raise click.ClickException(f"{manifest_csv}: {exc}") from None
    try:
        scored = curate.score_all(records, score_fn)
    except ZeroDivisionError as exc:
        raise click.ClickException(f"division by zero: {exc}") from None
    n_train, n_test = _parse_split(split_spec, len(scored))
    train, test = curate.split(scored, seed, n_train, n_test)
    out = Path(out_csv)
    train_path = out.with_name(out.stem + "_train.csv")
    test_path = out.with_name(out.stem + "_test.csv")
    curate.write_scores(out, scored)
    curate.write_scores(train_path, train)
    curate.write_scores(test_path, test)
    for p in (out, train_path, test_path):
        run.add_output(p)
    run.write(out)
    summary = curate.summarize(s.score for s in scored)
    click.echo(f"count {summary['count']}")
    click.echo(f"mean {summary['mean']:.6f}")
    click.echo("deciles " + " ".join(f"{q:.6f}" for q in summary["deciles"]))
    click.echo(f"split {len(train)}:{len(test)}")


# ------------------------------------------------------------------ degrade


@main.command("degrade")
@click.argument("input_image", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_image", type=click.Path(dir_okay=False))
@click.option("--op", "op", required=True, type=click.Choice([k.value for k in Kind]))
@click.option("--level", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--donor", type=click.Path(exists=True, dir_okay=False), default=None, help="Donor image for cutmix.")
def cmd_degrade(input_image, output_image, op, level, seed, donor):
    """Apply one (kind, level) edit to a PNG."""
    try:
        spec = DistortionSpec(Kind(op), level)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    run = RunManifest("degrade", seed, {"op": op, "level": level})
    run.add_input(input_image)
    img = imageio.read_image(input_image)
    donor_img = None
    if spec.kind is Kind.CUTMIX:
        if donor is None:
            raise click.UsageError("--op cutmix needs --donor")
        run.add_input(donor)
        donor_img = imageio.read_image(donor)
        if donor_img.shape[:2] != img.shape[:2]:
            donor_img = imageops.resize(donor_img, img.shape[0], img.shape[1])
        if donor_img.shape[2] != img.shape[2]:
            donor_img = donor_img.mean(axis=2, keepdims=True) if img.shape[2] == 1 else np.repeat(donor_img, 3, axis=2)
    out = imageops.apply(spec, img, donor=donor_img, seed=seed)
    imageio.write_png(output_image, out)
    run.add_output(output_image)
    run.write(output_image)
    click.echo(f"{spec.kind.value} level {spec.level} params {list(spec.params)}")


# ------------------------------------------------------------------ training


@main.command("pretrain")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def cmd_pretrain(config_path, manifest, out_path, log_path, seed):
    """Self-supervised distortion pretraining on the manifest's images."""
    from saan.model import pretrain, save_model
    from saan.model.training import write_log

    _configure_threads()
    config = _load_config(config_path, seed)
    run = RunManifest("pretrain", config.seed, config.to_dict())
    run.add_input(config_path)
    run.add_input(manifest)
    images = [imageio.read_image(p) for p in _image_paths(manifest).values()]
    result = pretrain(images, config)
    save_model(out_path, result.net, {"classes": [c.name for c in result.classes]})
    run.add_output(out_path)
    if log_path:
        write_log(log_path, result.log)
        run.add_output(log_path)
    run.write(out_path)
    last = result.log[-1]
    click.echo(f"pretrained {len(images)} images, {len(result.classes)} classes, final loss {last['loss']:.6f}")


@main.command("finetune")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scores", "scores_csv", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pretrained", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def cmd_finetune(config_path, manifest, scores_csv, pretrained, out_path, log_path, seed):
    """Fit the score head with MSE on a score table."""
    from saan.model import PretextNet, build_model, finetune, load_model, load_pretrained, save_model
    from saan.model.training import write_log

    _configure_threads()
    config = _load_config(config_path, seed)
    run = RunManifest("finetune", config.seed, config.to_dict())
    for p in (config_path, manifest, scores_csv):
        run.add_input(p)
    scored = _scored_images(scores_csv, manifest)
    model = build_model(config)
    if pretrained:
        run.add_input(pretrained)
        net = load_model(pretrained)
        if not isinstance(net, PretextNet):
            raise click.ClickException(f"{pretrained} is not a pretrained trunk checkpoint")
        load_pretrained(model, net)
    model, history = finetune(model, scored, config)
    save_model(out_path, model)
    run.add_output(out_path)
    if log_path:
        write_log(log_path, history)
        run.add_output(log_path)
    run.write(out_path)
    click.echo(f"fine-tuned on {len(scored)} images, final loss {history[-1]['loss']:.6f}")


def evaluate_to_json(predictor, scored, out_path: str | Path) -> dict[str, float]:
    """Evaluate ``predictor`` and write the metrics JSON."""
    from saan.model import evaluate

    result = evaluate(predictor, scored)
    _write_json(out_path, result)
    return result


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scores", "scores_csv", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_eval(model_path, manifest, scores_csv, out_path):
    """Score a test table with a fine-tuned model and write metrics JSON."""
    from saan.model import SaanModel, load_model

    _configure_threads()
    run = RunManifest("eval", None)
    for p in (model_path, manifest, scores_csv):
        run.add_input(p)
    model = load_model(model_path)
    if not isinstance(model, SaanModel):
        raise click.ClickException(f"{model_path} is not a fine-tuned model checkpoint")
    model.eval()
    result = evaluate_to_json(model, _scored_images(scores_csv, manifest), out_path)
    run.add_output(out_path)
    run.write(out_path)
    click.echo(" ".join(f"{k} {v:.6f}" for k, v in result.items()))


@main.command("ablate")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--train", "train_csv", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test", "test_csv", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def cmd_ablate(config_path, manifest, train_csv, test_csv, out_path, seed):
    """Train and evaluate the five ablation variants; writes a CSV table."""
    from saan.model import run_ablation
    from saan.model.training import write_log

    _configure_threads()
    config = _load_config(config_path, seed)
    run = RunManifest("ablate", config.seed, config.to_dict())
    for p in (config_path, manifest, train_csv, test_csv):
        run.add_input(p)
    train = _scored_images(train_csv, manifest)
    test = _scored_images(test_csv, manifest)
    rows = run_ablation(config, [img for img, _ in train], train, test)
    write_log(out_path, rows)
    run.add_output(out_path)
    run.write(out_path)
    for row in rows:
        click.echo(f"{row['variant']}: srcc {row['srcc']:.4f} pcc {row['pcc']:.4f} accuracy {row['accuracy']:.4f}")


# ------------------------------------------------------------------ metrics and toy data


@main.command("metrics")
@click.argument("predicted_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def cmd_metrics(predicted_csv, truth_csv, out_path):
    """Compare two score tables by image id; prints (or writes) metrics JSON."""
    run = RunManifest("metrics", None)
    run.add_input(predicted_csv)
    run.add_input(truth_csv)
    try:
        pred = curate.read_scores(predicted_csv)
        truth = curate.read_scores(truth_csv)
    except curate.ManifestError as exc:
        raise click.ClickException(str(exc)) from None
    missing = [k for k in truth if k not in pred]
    if missing:
        raise click.ClickException(f"{len(missing)} ids have no prediction, e.g. {missing[0]}")
    ids = list(truth)
    try:
        result = metrics.report([pred[k] for k in ids], [truth[k] for k in ids])
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    text = json.dumps(result, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
        run.add_output(out_path)
        run.write(out_path)
    click.echo(text)


@main.command("toydata")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--n", "count", type=int, default=64, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_toydata(out_dir, count, size, seed):
    """Write synthetic PNGs and a vote manifest."""
    if count < 1 or size < 4:
        raise click.UsageError("need --n >= 1 and --size >= 4")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    items = toydata.toy_corpus(count, size, seed)
    for it in items:
        imageio.write_png(out / it.record.path, it.image)
    manifest = out / "manifest.csv"
    curate.write_manifest(manifest, [it.record for it in items])
    run = RunManifest("toydata", seed, {"n": count, "size": size})
    run.add_output(manifest)
    run.write(manifest)
    click.echo(f"wrote {count} images and {manifest}")


if __name__ == "__main__":
    main()

"""Two-phase training: distortion pretext pretraining, then MSE fine-tuning."""

from __future__ import annotations

import copy
import csv
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from saan import imageops, metrics
from saan import nn as snn
from saan.imageops import DistortionSpec, Kind
from saan.model.config import TrainConfig, lr_at
from saan.model.network import PretextNet, SaanModel, images_to_tensor, predict
from saan.model.pretext import PretextSample, make_pretext_batch

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def _check_finite(loss: torch.Tensor, phase: str, epoch: int) -> None:
    if not torch.isfinite(loss).all():
        raise DivergenceError(f"{phase}: non-finite loss at epoch {epoch + 1}")


def active_classes(config: TrainConfig) -> list[DistortionSpec]:
    kinds = [Kind(k) for k in config.pretrain.kinds] or None
    return imageops.enumerate_classes(config.ablation.operation_list, config.ablation.levels, kinds)


@dataclass
class PretrainResult:
    net: PretextNet
    classes: list[DistortionSpec]
    log: list[dict] = field(default_factory=list)


def _epoch_seed(seed: int, epoch: int, stream: int) -> int:
    return int(imageops.rng_for(seed, stream, epoch).integers(0, 2**31 - 1))


def _det_loss(net: PretextNet, samples: Sequence[PretextSample], sib_feats: torch.Tensor, offsets: list[int], size: int):
    eligible = [i for i, s in enumerate(samples) if s.orders_intensity]
    if not eligible:
        return None
    orig = net.features(images_to_tensor([samples[i].original for i in eligible], size))
    terms = []
    for row, i in enumerate(eligible):
        n = len(samples[i].siblings)
        feats = sib_feats[offsets[i] : offsets[i] + n]
        d = snn.squared_feature_distance(orig[row : row + 1].expand(n, -1), feats)
        terms.append(snn.detection_loss(*d.unbind()))
    return torch.stack(terms).mean()


def pretrain(
    images: Sequence[np.ndarray],
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Train the shared trunk on distortion classification plus intensity ordering.

    The detection term is computed whenever ``lambda_det > 0`` (so it is
    logged from the first epoch) but only weighted in from
    ``det_start_epoch`` on.
    """
    if not images:
        raise ValueError("pretraining needs a non-empty corpus")
    pc = config.pretrain
    size = config.model.input_size
    classes = active_classes(config)
    torch.manual_seed(config.seed)
    net = PretextNet(config.model.channels, len(classes), pc.feature_dim)
    params = list(net.parameters())
    state = snn.AdamState()
    history = []
    for epoch in range(pc.epochs):
        lr = lr_at(epoch, pc.lr, pc.lr_step, pc.lr_gamma, pc.decay_until)
        lam = pc.lambda_det if epoch >= pc.det_start_epoch else 0.0
        samples = make_pretext_batch(
            images, _epoch_seed(config.seed, epoch, 1), classes, size, pc.kinds_per_image
        )
        by_image: list[list[PretextSample]] = []
        per_image = len(samples) // len(images)
        for i in range(0, len(samples), per_image):
            by_image.append(samples[i : i + per_image])
        order = imageops.rng_for(config.seed, 2, epoch).permutation(len(by_image))
        sums = {"loss": 0.0, "l_cls": 0.0, "l_det": 0.0}
        steps = 0
        for start in range(0, len(order), pc.batch_size):
            batch = [s for j in order[start : start + pc.batch_size] for s in by_image[j]]
            patches, labels, offsets = [], [], []
            for s in batch:
                offsets.append(len(patches))
                patches.extend(s.siblings)
                labels.extend(s.sibling_labels)
            logits, feats = net(images_to_tensor(patches, size))
            l_cls = snn.softmax_cross_entropy(logits, labels)
            l_det = None
            if lam > 0:
                l_det = _det_loss(net, batch, feats, offsets, size)
            elif pc.lambda_det > 0:
                # logged only: zero-weighted gradients would still let weight
                # decay drag the feature head toward zero
                with torch.no_grad():
                    l_det = _det_loss(net, batch, feats.detach(), offsets, size)
            loss = l_cls if l_det is None or lam == 0 else snn.combined_pretrain_loss(l_cls, l_det, lam)
            _check_finite(loss, "pretrain", epoch)
            for p in params:
                p.grad = None
            loss.backward()
            snn.adam_step(params, state, lr, pc.weight_decay)
            sums["loss"] += float(loss.detach())
            sums["l_cls"] += float(l_cls.detach())
            sums["l_det"] += float(l_det.detach()) if l_det is not None else 0.0
            steps += 1
        row = {"epoch": epoch + 1, **{k: v / steps for k, v in sums.items()}, "lr": lr, "lambda": lam}
        history.append(row)
        log.info("pretrain epoch %d loss %.4f cls %.4f det %.4f", epoch + 1, row["loss"], row["l_cls"], row["l_det"])
        if on_epoch is not None:
            on_epoch(row)
    return PretrainResult(net, classes, history)


@torch.no_grad()
def pretext_eval(net: PretextNet, samples: Sequence[PretextSample], size: int) -> dict[str, float]:
    """Classification accuracy over all siblings and the D(mildest) < D(heaviest) rate."""
    correct = total = ordered = triples = 0
    for s in samples:
        x = images_to_tensor(s.siblings, size)
        logits, feats = net(x)
        pred = logits.argmax(dim=1).tolist()
        correct += sum(int(p == t) for p, t in zip(pred, s.sibling_labels))
        total += len(pred)
        if s.orders_intensity and len(s.siblings) >= 3:
            orig = net.features(images_to_tensor([s.original], size))
            d = snn.squared_feature_distance(orig.expand(len(s.siblings), -1), feats)
            ordered += int(d[0] < d[-1])
            triples += 1
    return {
        "accuracy": correct / total if total else math.nan,
        "ordering": ordered / triples if triples else math.nan,
        "patches": total,
        "triples": triples,
    }


def build_model(config: TrainConfig, init_score: float = 5.0) -> SaanModel:
    torch.manual_seed(config.seed)
    mc, ab = config.model, config.ablation
    return SaanModel(
        channels=mc.channels,
        input_size=mc.input_size,
        hidden=mc.hidden,
        use_sab=ab.use_sab,
        use_gab=ab.use_gab,
        use_fusion=ab.use_fusion,
        init_score=init_score,
        zero_init_head=mc.zero_init_head,
    )


def load_pretrained(model: SaanModel, net: PretextNet) -> SaanModel:
    """Initialize both residual encoders from the pretrained trunk."""
    trunk = net.trunk.state_dict()
    model.generic_encoder.load_state_dict(copy.deepcopy(trunk))
    model.aesthetic_encoder.load_state_dict(copy.deepcopy(trunk))
    return model


def finetune(
    model: SaanModel,
    scored_train: Sequence[tuple[np.ndarray, float]],
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[SaanModel, list[dict]]:
    """Fit scores with MSE; style and generic encoders stay frozen."""
    if not scored_train:
        raise ValueError("fine-tuning needs training samples")
    fc = config.finetune
    model.freeze_backbones()
    x_all = images_to_tensor([img for img, _ in scored_train], model.input_size)
    y_all = torch.tensor([s for _, s in scored_train], dtype=torch.float32)
    if fc.init_bias_to_mean:
        with torch.no_grad():
            model.head_out.bias.fill_(float(y_all.mean()))
    params = list(model.parameters())
    state = snn.AdamState()
    history = []
    for epoch in range(fc.epochs):
        lr = lr_at(epoch, fc.lr, fc.lr_step, fc.lr_gamma, fc.decay_until)
        order = torch.from_numpy(imageops.rng_for(config.seed, 3, epoch).permutation(len(scored_train)))
        total = 0.0
        for start in range(0, len(order), fc.batch_size):
            idx = order[start : start + fc.batch_size]
            loss = snn.mse_loss(model(x_all[idx]), y_all[idx])
            _check_finite(loss, "finetune", epoch)
            for p in params:
                p.grad = None
            loss.backward()
            snn.adam_step(params, state, lr, fc.weight_decay)
            total += float(loss.detach()) * len(idx)
        row = {"epoch": epoch + 1, "loss": total / len(order), "lr": lr}
        history.append(row)
        log.info("finetune epoch %d loss %.4f", epoch + 1, row["loss"])
        if on_epoch is not None:
            on_epoch(row)
    return model, history


def evaluate(predictor, scored_test: Sequence[tuple[np.ndarray, float]]) -> dict[str, float]:
    """SRCC, PCC and accuracy of ``predictor`` on ``(image, score)`` pairs.

    ``predictor`` is a :class:`SaanModel` or any callable mapping a list of
    images to scores.
    """
    if not scored_test:
        raise ValueError("evaluation needs test samples")
    images = [img for img, _ in scored_test]
    truth = np.array([s for _, s in scored_test], dtype=np.float64)
    if isinstance(predictor, SaanModel):
        pred = predict(predictor, images)
    else:
        pred = np.clip(np.asarray(predictor(images), dtype=np.float64), 0.0, 10.0)
    return {
        "srcc": metrics.srcc(pred, truth),
        "pcc": metrics.pcc(pred, truth),
        "accuracy": metrics.accuracy(pred, truth),
    }


ABLATIONS: dict[str, dict] = {
    "w/o style-specific branch": {"use_sab": False},
    "w/o generic aesthetic branch": {"use_gab": False},
    "w/o new editing operations": {"operation_list": "legacy"},
    "w/o 3-level manipulation": {"levels": 2},
    "w/o spatial information fusion": {"use_fusion": False},
}


def ablate(config: TrainConfig) -> dict[str, TrainConfig]:
    """The five ablation variants of ``config``."""
    return {name: config.replace(ablation=flags) for name, flags in ABLATIONS.items()}


def run_pipeline(
    config: TrainConfig,
    pretrain_images: Sequence[np.ndarray],
    scored_train: Sequence[tuple[np.ndarray, float]],
    scored_test: Sequence[tuple[np.ndarray, float]],
    pretrained: PretextNet | None = None,
) -> tuple[SaanModel, dict[str, float]]:
    if pretrained is None:
        pretrained = pretrain(pretrain_images, config).net
    model = load_pretrained(build_model(config), pretrained)
    model, _ = finetune(model, scored_train, config)
    return model, evaluate(model, scored_test)


def run_ablation(
    config: TrainConfig,
    pretrain_images: Sequence[np.ndarray],
    scored_train: Sequence[tuple[np.ndarray, float]],
    scored_test: Sequence[tuple[np.ndarray, float]],
) -> list[dict]:
    """Train and evaluate every variant; pretraining is shared where the operation set matches."""
    cache: dict[tuple, PretextNet] = {}
    rows = []
    for name, variant in ablate(config).items():
        key = (variant.ablation.operation_list, variant.ablation.levels)
        if key not in cache:
            cache[key] = pretrain(pretrain_images, variant).net
        _, scores = run_pipeline(variant, pretrain_images, scored_train, scored_test, cache[key])
        rows.append({"variant": name, **scores})
    return rows


def write_log(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})

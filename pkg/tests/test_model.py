import math

import numpy as np
import pytest
import torch

from saan import imageops
from saan.imageops import Kind
from saan.metrics import UndefinedCorrelationError
from saan.model import (
    ABLATIONS,
    ConfigError,
    PretextNet,
    SaanModel,
    ablate,
    active_classes,
    build_model,
    evaluate,
    finetune,
    forward,
    from_dict,
    load_config,
    load_model,
    lr_at,
    make_pretext_batch,
    parameter_hash,
    predict,
    pretrain,
    run_ablation,
    save_model,
    style_swap_forward,
)
from saan.toydata import toy_image, toy_scored

SMALL = {"seed": 0, "model": {"channels": 8, "input_size": 16}}


def small_config(**sections):
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in SMALL.items()}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return from_dict(data)


def images(n, size=16, start=0):
    return [toy_image(start + i, size)[0] for i in range(n)]


# ---------------------------------------------------------------- config


def test_config_defaults():
    cfg = from_dict({})
    assert cfg.pretrain.lr == 1e-3 and cfg.pretrain.det_start_epoch == 30 and cfg.pretrain.lambda_det == 0.1
    assert cfg.finetune.lr == 1e-5 and cfg.finetune.decay_until == 40
    assert cfg.model.input_size == 224


def test_config_lists_every_problem():
    with pytest.raises(ConfigError) as exc:
        from_dict({"model": {"channelz": 4, "input_size": "big"}, "ablation": {"use_sab": False, "use_gab": False}, "extra": 1})
    text = str(exc.value)
    for needle in ("model.channelz", "model.input_size", "extra"):
        assert needle in text
    assert len(exc.value.problems) == 3


def test_config_semantic_checks():
    with pytest.raises(ConfigError) as exc:
        from_dict({"ablation": {"use_sab": False, "use_gab": False, "levels": 4}, "pretrain": {"kinds": ["sepia"]}})
    assert len(exc.value.problems) == 3


def test_config_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 3\n[model]\nchannels = 8\n[ablation]\nlevels = 2\n')
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.model.channels == 8 and cfg.ablation.levels == 2
    p.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_lr_schedule():
    assert lr_at(0, 1e-3, 10, 0.1) == 1e-3
    assert lr_at(10, 1e-3, 10, 0.1) == pytest.approx(1e-4)
    assert lr_at(35, 1e-3, 10, 0.1) == pytest.approx(1e-6)
    # decay stops after the first 40 epochs
    assert lr_at(49, 1e-5, 10, 0.1, decay_until=40) == pytest.approx(1e-8)
    assert lr_at(39, 1e-5, 10, 0.1, decay_until=40) == lr_at(49, 1e-5, 10, 0.1, decay_until=40)


# ---------------------------------------------------------------- pretext batches


def test_pretext_batch_structure():
    classes = imageops.enumerate_classes()
    batch = make_pretext_batch(images(4, 24), 7, classes, 16, 3)
    assert len(batch) == 12
    for s in batch:
        assert len({spec.kind for spec in s.sibling_specs}) == 1
        assert all(0 <= lab < 30 for lab in s.sibling_labels)
        assert s.sibling_labels == sorted(s.sibling_labels)
        assert s.label in s.sibling_labels
        assert all(p.shape == (16, 16, 3) for p in s.siblings)
        levels = [spec.level for spec in s.sibling_specs]
        assert levels == sorted(levels)
        if s.kind is Kind.ROTATION:
            assert len(s.siblings) == 2 and not s.orders_intensity
        elif s.kind is not Kind.NONE:
            assert len(s.siblings) == 3 and s.orders_intensity
    for i in range(4):
        assert len({s.kind for s in batch[3 * i : 3 * i + 3]}) == 3


def test_pretext_batch_deterministic():
    imgs = images(3, 20)
    a = make_pretext_batch(imgs, 5, size=16)
    b = make_pretext_batch(imgs, 5, size=16)
    c = make_pretext_batch(imgs, 6, size=16)
    assert all(x.kind == y.kind and x.chosen == y.chosen for x, y in zip(a, b))
    assert all(np.array_equal(p, q) for x, y in zip(a, b) for p, q in zip(x.siblings, y.siblings))
    assert [(s.kind, s.chosen) for s in a] != [(s.kind, s.chosen) for s in c]


def test_pretext_rotation_pair():
    cfg = small_config(pretrain={"kinds": ["rotation"]})
    batch = make_pretext_batch(images(2, 16), 0, active_classes(cfg), 16, 3)
    # the no-op class is always present alongside the enabled kinds
    assert sorted(s.kind.value for s in batch) == ["none", "none", "rotation", "rotation"]
    assert all(len(s.siblings) == 2 for s in batch if s.kind is Kind.ROTATION)


def test_pretext_single_image_cutmix_fallback():
    cfg = small_config(pretrain={"kinds": ["cutmix"]})
    a = [s for s in make_pretext_batch(images(1, 24), 3, active_classes(cfg), 16, 2) if s.kind is Kind.CUTMIX]
    b = [s for s in make_pretext_batch(images(1, 24), 3, active_classes(cfg), 16, 2) if s.kind is Kind.CUTMIX]
    assert len(a) == 1
    assert all(np.array_equal(p, q) for p, q in zip(a[0].siblings, b[0].siblings))
    assert not np.array_equal(a[0].siblings[2], a[0].original)


def test_pretext_thread_count_does_not_change_order(monkeypatch):
    imgs = images(6, 20)
    monkeypatch.setenv("SAAN_THREADS", "1")
    serial = make_pretext_batch(imgs, 11, size=16)
    monkeypatch.setenv("SAAN_THREADS", "4")
    pooled = make_pretext_batch(imgs, 11, size=16)
    assert [(s.kind, s.chosen) for s in serial] == [(s.kind, s.chosen) for s in pooled]
    assert all(np.array_equal(p, q) for x, y in zip(serial, pooled) for p, q in zip(x.siblings, y.siblings))


def test_pretext_empty():
    with pytest.raises(ValueError):
        make_pretext_batch([], 0)


def test_legacy_and_two_level_class_counts():
    assert len(active_classes(small_config())) == 30
    assert len(active_classes(small_config(ablation={"operation_list": "legacy"}))) == 15
    assert all(s.level in (0, 2) or s.kind is Kind.ROTATION or s.kind is Kind.NONE
               for s in active_classes(small_config(ablation={"levels": 2})))


# ---------------------------------------------------------------- pretraining


def pretrain_config(lambda_det, det_start):
    return small_config(
        pretrain={
            "epochs": 5,
            "batch_size": 2,
            "lambda_det": lambda_det,
            "det_start_epoch": det_start,
            "feature_dim": 8,
            "kinds": ["gaussian_noise", "gaussian_blur", "exposure"],
        }
    )


def test_lambda_gating_bitwise():
    imgs = images(4, 16)
    gated = pretrain(imgs, pretrain_config(0.1, 30))
    cls_only = pretrain(imgs, pretrain_config(0.0, 30))
    assert parameter_hash(gated.net) == parameter_hash(cls_only.net)
    assert [r["l_cls"] for r in gated.log] == [r["l_cls"] for r in cls_only.log]
    # the detection term is still logged while gated off
    assert all(r["l_det"] != 0.0 for r in gated.log)
    assert all(r["lambda"] == 0.0 for r in gated.log)


def test_detection_term_changes_trajectory_once_active():
    imgs = images(4, 16)
    active = pretrain(imgs, pretrain_config(0.1, 2))
    cls_only = pretrain(imgs, pretrain_config(0.0, 2))
    assert [r["lambda"] for r in active.log] == [0.0, 0.0, 0.1, 0.1, 0.1]
    assert parameter_hash(active.net) != parameter_hash(cls_only.net)


def test_pretrain_rejects_empty_corpus():
    with pytest.raises(ValueError):
        pretrain([], small_config())


# ---------------------------------------------------------------- network


def test_zero_init_model_outputs_bias():
    torch.manual_seed(0)
    model = SaanModel(channels=8, input_size=16, init_score=6.5)
    x = torch.rand(3, 3, 16, 16)
    assert torch.equal(model(x), torch.full((3,), 6.5))


def test_forward_resolution_error():
    model = SaanModel(channels=8, input_size=16)
    with pytest.raises(ValueError):
        model(torch.rand(1, 3, 32, 32))


def test_forward_bit_identical_on_repeat():
    torch.manual_seed(0)
    model = SaanModel(channels=8, input_size=16, zero_init_head=False)
    img = images(1, 16)[0]
    assert forward(model, img) == forward(model, img.copy())


def trained_like(seed=0, **flags):
    torch.manual_seed(seed)
    model = SaanModel(channels=8, input_size=16, zero_init_head=False, **flags)
    torch.nn.init.normal_(model.nonlocal_block.w_z.weight, std=0.3)
    return model


def test_style_swap_identity():
    model = trained_like()
    for img in images(5, 16):
        assert style_swap_forward(model, img, img) == forward(model, img)


def test_style_swap_changes_score_with_style_branch():
    model = trained_like()
    a, b = images(2, 16)
    assert style_swap_forward(model, a, b) != forward(model, a)


def test_without_style_branch_ignores_style_input():
    model = trained_like(use_sab=False)
    a, b, c = images(3, 16)
    assert style_swap_forward(model, a, b) == forward(model, a) == style_swap_forward(model, a, c)


def test_without_fusion_is_identity_nonlocal():
    fused = trained_like(use_fusion=True)
    plain = trained_like(use_fusion=False)
    plain.load_state_dict(fused.state_dict())
    x = torch.rand(2, 3, 16, 16)
    with torch.no_grad():
        torch.nn.init.zeros_(fused.nonlocal_block.w_z.weight)
        torch.nn.init.zeros_(fused.nonlocal_block.w_z.bias)
        assert torch.equal(fused(x), plain(x))


def test_both_branches_disabled():
    with pytest.raises(ValueError):
        SaanModel(channels=8, input_size=16, use_sab=False, use_gab=False)


def test_predict_clamps():
    model = SaanModel(channels=8, input_size=16, init_score=12.0)
    assert predict(model, images(2, 16)).tolist() == [10.0, 10.0]


def test_save_load_round_trip(tmp_path):
    model = trained_like(use_fusion=False)
    save_model(tmp_path / "m.ckpt", model)
    back = load_model(tmp_path / "m.ckpt")
    assert isinstance(back, SaanModel) and back.use_fusion is False
    assert parameter_hash(back) == parameter_hash(model)
    net = PretextNet(8, 30, 8)
    save_model(tmp_path / "p.ckpt", net)
    assert parameter_hash(load_model(tmp_path / "p.ckpt")) == parameter_hash(net)


# ---------------------------------------------------------------- fine-tuning


def finetune_config(epochs, batch):
    return small_config(finetune={"epochs": epochs, "lr": 1e-3, "lr_step": 1000, "decay_until": 0, "batch_size": batch})


def test_finetune_memorizes_eight_samples():
    data = toy_scored(8, size=16, seed=0)
    assert len({s for _, s in data}) == 8
    cfg = finetune_config(100, 8)
    model, _ = finetune(build_model(cfg), data, cfg)
    pred = predict(model, [img for img, _ in data])
    assert float(np.mean((pred - np.array([s for _, s in data])) ** 2)) < 0.05


def test_finetune_loss_decreases_and_freezes():
    data = toy_scored(32, size=16, seed=0)
    cfg = finetune_config(20, 8)
    model = build_model(cfg)
    frozen = [parameter_hash(m) for m in (model.style_encoder, model.generic_encoder)]
    trainable = parameter_hash(model.aesthetic_encoder)
    model, hist = finetune(model, data, cfg)
    assert hist[19]["loss"] < hist[0]["loss"]
    assert [parameter_hash(m) for m in (model.style_encoder, model.generic_encoder)] == frozen
    assert parameter_hash(model.aesthetic_encoder) != trainable
    assert all(not p.requires_grad for p in model.style_encoder.parameters())
    assert all(p.requires_grad for p in model.nonlocal_block.parameters())


def test_finetune_bias_starts_at_mean():
    data = toy_scored(8, size=16, seed=0)
    cfg = finetune_config(1, 8)
    model = build_model(cfg)
    finetune(model, data, cfg.replace(finetune={"lr": 1e-30}))
    assert model.head_out.bias.item() == pytest.approx(np.mean([s for _, s in data]), abs=1e-5)


# ---------------------------------------------------------------- evaluation and ablation


def test_evaluate_perfect_predictor():
    data = toy_scored(10, size=16)
    lookup = {id(img): s for img, s in data}
    scores = evaluate(lambda imgs: [lookup[id(i)] for i in imgs], data)
    assert scores["srcc"] == 1.0 and scores["accuracy"] == 1.0
    assert scores["pcc"] == pytest.approx(1.0, abs=1e-15)


def test_evaluate_constant_predictor_is_an_error():
    data = toy_scored(10, size=16)
    with pytest.raises(UndefinedCorrelationError):
        evaluate(lambda imgs: [5.0] * len(imgs), data)


def test_ablate_variants():
    variants = ablate(small_config())
    assert list(variants) == list(ABLATIONS)
    flags = [(v.ablation.use_sab, v.ablation.use_gab, v.ablation.use_fusion, v.ablation.levels, v.ablation.operation_list) for v in variants.values()]
    assert flags == [
        (False, True, True, 3, "full"),
        (True, False, True, 3, "full"),
        (True, True, True, 3, "legacy"),
        (True, True, True, 2, "full"),
        (True, True, False, 3, "full"),
    ]


def test_run_ablation_rows():
    cfg = small_config(
        pretrain={"epochs": 1, "batch_size": 4, "feature_dim": 8, "kinds_per_image": 2},
        finetune={"epochs": 2, "lr": 1e-3, "batch_size": 8},
    )
    data = toy_scored(24, size=16, seed=1)
    rows = run_ablation(cfg, [img for img, _ in data[:8]], data[:16], data[16:])
    assert [r["variant"] for r in rows] == list(ABLATIONS)
    assert all(set(r) == {"variant", "srcc", "pcc", "accuracy"} for r in rows)
    assert all(math.isfinite(r[k]) for r in rows for k in ("srcc", "pcc", "accuracy"))

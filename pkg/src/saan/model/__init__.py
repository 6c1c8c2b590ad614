"""SAAN assembly, pretext construction and the training protocol."""

from saan.model.config import ConfigError, TrainConfig, from_dict, load_config, lr_at
from saan.model.network import (
    PretextNet,
    SaanModel,
    forward,
    images_to_tensor,
    load_model,
    parameter_hash,
    predict,
    save_model,
    style_swap_forward,
)
from saan.model.pretext import PretextSample, make_pretext_batch
from saan.model.training import (
    ABLATIONS,
    DivergenceError,
    ablate,
    active_classes,
    build_model,
    evaluate,
    finetune,
    load_pretrained,
    pretext_eval,
    pretrain,
    run_ablation,
    run_pipeline,
)

"""SAAN network: style branch, generic branch, non-local fusion, MLP head."""

from __future__ import annotations

import hashlib
from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from saan import imageops
from saan import nn as snn


def stage_widths(channels: int) -> list[int]:
    return [max(channels // 4, 2), max(channels // 2, 2), channels, channels]


# [0, 1] pixels are shifted to roughly zero mean, unit spread before the first conv
PIXEL_MEAN = 0.5
PIXEL_SCALE = 4.0


def _kaiming_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)


class StyleEncoder(nn.Module):
    """Plain conv-relu stack; max-pools after the first three stages."""

    def __init__(self, channels: int = 64, in_channels: int = 3):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for i, width in enumerate(stage_widths(channels)):
            layers += [nn.Conv2d(prev, width, 3, padding=1), nn.ReLU()]
            if i < 3:
                layers.append(nn.MaxPool2d(2))
            prev = width
        self.body = nn.Sequential(*layers)
        self.out_channels = channels
        _kaiming_init(self)

    def forward(self, x: Tensor) -> Tensor:
        return self.body((x - PIXEL_MEAN) * PIXEL_SCALE)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(torch.relu(self.conv1(x)))
        return torch.relu(h + self.skip(x))


class ResidualEncoder(nn.Module):
    """Stem plus four residual stages, average-pooling after the first three."""

    def __init__(self, channels: int = 64, in_channels: int = 3):
        super().__init__()
        widths = stage_widths(channels)
        self.stem = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        blocks = []
        prev = widths[0]
        for width in widths:
            blocks.append(ResidualBlock(prev, width))
            prev = width
        self.blocks = nn.ModuleList(blocks)
        self.out_channels = channels
        _kaiming_init(self)

    def forward(self, x: Tensor) -> Tensor:
        h = torch.relu(self.stem((x - PIXEL_MEAN) * PIXEL_SCALE))
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < 3:
                h = F.avg_pool2d(h, 2)
        return h


class SaanModel(nn.Module):
    """Style-specific + generic aesthetic branches fused by a non-local block.

    ``use_sab`` / ``use_gab`` switch the two branches and ``use_fusion``
    replaces the non-local block by the identity.
    """

    def __init__(
        self,
        channels: int = 64,
        input_size: int = 224,
        hidden: Sequence[int] = (256, 64),
        use_sab: bool = True,
        use_gab: bool = True,
        use_fusion: bool = True,
        init_score: float = 5.0,
        zero_init_head: bool = True,
    ):
        super().__init__()
        if not (use_sab or use_gab):
            raise ValueError("at least one of the style and generic branches must be enabled")
        self.hparams = {
            "channels": channels,
            "input_size": input_size,
            "hidden": list(hidden),
            "use_sab": use_sab,
            "use_gab": use_gab,
            "use_fusion": use_fusion,
            "init_score": init_score,
            "zero_init_head": zero_init_head,
        }
        self.channels = channels
        self.input_size = input_size
        self.use_sab = use_sab
        self.use_gab = use_gab
        self.use_fusion = use_fusion
        self.style_encoder = StyleEncoder(channels)
        self.aesthetic_encoder = ResidualEncoder(channels)
        self.generic_encoder = ResidualEncoder(channels)
        fused = channels * (int(use_sab) + int(use_gab))
        self.nonlocal_block = snn.NonLocalBlock(fused)
        layers: list[nn.Module] = []
        prev = fused
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.mlp = nn.Sequential(*layers, nn.Linear(prev, 1))
        if zero_init_head:
            nn.init.zeros_(self.head_out.weight)
        with torch.no_grad():
            self.head_out.bias.fill_(init_score)

    @property
    def head_out(self) -> nn.Linear:
        return self.mlp[-1]

    def fused_features(self, x: Tensor, style: Tensor | None = None) -> Tensor:
        feats = []
        if self.use_sab:
            f_sty = self.style_encoder(x if style is None else style)
            f_aes = self.aesthetic_encoder(x)
            feats.append(snn.adain(f_aes, f_sty))
        if self.use_gab:
            feats.append(self.generic_encoder(x))
        if len(feats) == 2 and feats[0].shape[2:] != feats[1].shape[2:]:
            feats[0] = F.interpolate(feats[0], size=feats[1].shape[2:], mode="bilinear", align_corners=False)
        fused = snn.concat(feats, dim=1)
        return self.nonlocal_block(fused) if self.use_fusion else fused

    def forward(self, x: Tensor, style: Tensor | None = None) -> Tensor:
        if x.dim() != 4 or x.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected N,3,{self.input_size},{self.input_size} input, got {tuple(x.shape)}"
            )
        pooled = snn.global_avg_pool(self.fused_features(x, style))
        return self.mlp(pooled).squeeze(-1)

    def frozen_modules(self) -> list[nn.Module]:
        return [self.style_encoder, self.generic_encoder]

    def freeze_backbones(self) -> None:
        for module in self.frozen_modules():
            for p in module.parameters():
                p.requires_grad_(False)


class PretextNet(nn.Module):
    """Shared residual trunk with a distortion classifier and an L2-normalized feature head."""

    def __init__(self, channels: int = 64, num_classes: int = 30, feature_dim: int = 64):
        super().__init__()
        self.hparams = {"channels": channels, "num_classes": num_classes, "feature_dim": feature_dim}
        self.trunk = ResidualEncoder(channels)
        self.classifier = nn.Linear(channels, num_classes)
        self.feature_head = nn.Linear(channels, feature_dim)

    def features(self, x: Tensor) -> Tensor:
        return snn.l2_normalize(self.feature_head(snn.global_avg_pool(self.trunk(x))))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        pooled = snn.global_avg_pool(self.trunk(x))
        return self.classifier(pooled), snn.l2_normalize(self.feature_head(pooled))


def images_to_tensor(images: Sequence[np.ndarray], size: int, dtype=torch.float32) -> Tensor:
    """Resize images to ``size x size`` and stack them as N,3,H,W."""
    batch = []
    for img in images:
        if img.shape[:2] != (size, size):
            img = imageops.resize(img, size, size)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        batch.append(img.transpose(2, 0, 1))
    return torch.as_tensor(np.stack(batch), dtype=dtype)


def forward(model: SaanModel, img: np.ndarray) -> float:
    """Unclamped score of a single image."""
    with torch.no_grad():
        return float(model(images_to_tensor([img], model.input_size))[0])


def style_swap_forward(model: SaanModel, content_img: np.ndarray, style_img: np.ndarray) -> float:
    """Score ``content_img`` while the style encoder sees ``style_img``."""
    x = images_to_tensor([content_img], model.input_size)
    s = images_to_tensor([style_img], model.input_size)
    with torch.no_grad():
        return float(model(x, style=s)[0])


def predict(model: SaanModel, images: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Scores clamped to [0, 10] for reporting."""
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            x = images_to_tensor(images[i : i + batch_size], model.input_size)
            out.append(model(x).double().numpy())
    return np.clip(np.concatenate(out), 0.0, 10.0)


def parameter_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_model(path, model: nn.Module, extra: dict | None = None) -> None:
    hparams = {"class": type(model).__name__, **model.hparams, **(extra or {})}
    snn.save_checkpoint(path, model.state_dict(), hparams)


def load_model(path) -> nn.Module:
    tensors, hparams = snn.load_checkpoint(path)
    cls = hparams.get("class")
    if cls == "SaanModel":
        keys = ("channels", "input_size", "hidden", "use_sab", "use_gab", "use_fusion", "init_score", "zero_init_head")
        model: nn.Module = SaanModel(**{k: hparams[k] for k in keys})
    elif cls == "PretextNet":
        model = PretextNet(**{k: hparams[k] for k in ("channels", "num_classes", "feature_dim")})
    else:
        raise ValueError(f"unknown checkpoint class {cls!r}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model

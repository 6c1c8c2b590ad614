"""Layers, losses, optimizer and checkpoint I/O used by the SAAN model.

Autodiff and the dense convolution kernels come from torch; this module
adds the pieces specific to the model: instance statistics, AdaIN, the
embedded-Gaussian non-local block, the pretext losses and an Adam step that
honours frozen parameters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

IN_EPS = 1e-5
UNIT_NORM_TOL = 1e-6

# ---------------------------------------------------------------- layers


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.dim() != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input {tuple(x.shape)} incompatible with kernel {tuple(weight.shape)}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    return F.max_pool2d(x, kernel)


def global_avg_pool(x: Tensor) -> Tensor:
    return x.mean(dim=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != {weight.shape[1]}")
    return F.linear(x, weight, bias)


def concat(tensors: list[Tensor], dim: int = 1) -> Tensor:
    return torch.cat(tensors, dim=dim)


def instance_stats(x: Tensor, eps: float = IN_EPS) -> tuple[Tensor, Tensor]:
    """Per-sample, per-channel spatial mean and floored standard deviation."""
    if x.dim() != 4:
        raise ValueError(f"instance_stats expects N,C,H,W; got {tuple(x.shape)}")
    mu = x.mean(dim=(2, 3))
    var = x.var(dim=(2, 3), unbiased=False)
    return mu, torch.sqrt(var + eps)


def adain(x: Tensor, y: Tensor, eps: float = IN_EPS) -> Tensor:
    """Re-normalize ``x`` so each channel takes on ``y``'s mean and std."""
    if x.shape[:2] != y.shape[:2]:
        raise ValueError(f"adain: content {tuple(x.shape[:2])} vs style {tuple(y.shape[:2])}")
    mu_x, sig_x = instance_stats(x, eps)
    mu_y, sig_y = instance_stats(y, eps)
    normed = (x - mu_x[..., None, None]) / sig_x[..., None, None]
    return sig_y[..., None, None] * normed + mu_y[..., None, None]


class NonLocalBlock(nn.Module):
    """Embedded-Gaussian non-local block with a zero-initialized output conv.

    ``z = W_z(softmax(theta(x)^T phi(x)) g(x)) + x`` over all H*W positions,
    with theta/phi/g projecting to ``channels // 2``.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ValueError("non-local block needs an even channel count")
        inner = channels // 2
        self.channels = channels
        self.theta = nn.Conv2d(channels, inner, 1)
        self.phi = nn.Conv2d(channels, inner, 1)
        self.g = nn.Conv2d(channels, inner, 1)
        self.w_z = nn.Conv2d(inner, channels, 1)
        nn.init.zeros_(self.w_z.weight)
        nn.init.zeros_(self.w_z.bias)

    def attention(self, x: Tensor) -> Tensor:
        """Row-stochastic ``N x HW x HW`` affinity matrix."""
        n = x.shape[0]
        q = self.theta(x).reshape(n, -1, x.shape[2] * x.shape[3]).transpose(1, 2)
        k = self.phi(x).reshape(n, -1, x.shape[2] * x.shape[3])
        return torch.softmax(q @ k, dim=-1)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(f"non-local block expects N,{self.channels},H,W; got {tuple(x.shape)}")
        n, _, h, w = x.shape
        attn = self.attention(x)
        v = self.g(x).reshape(n, -1, h * w).transpose(1, 2)
        y = (attn @ v).transpose(1, 2).reshape(n, -1, h, w)
        return self.w_z(y) + x


# ---------------------------------------------------------------- losses


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class."""
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    k = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    logits = logits.reshape(labels.numel(), k)
    return -torch.log_softmax(logits, dim=-1).gather(1, labels[:, None]).mean()


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def squared_feature_distance(p_feat: Tensor, q_feat: Tensor) -> Tensor:
    """Squared Euclidean distance between unit-norm feature rows."""
    for name, f in (("p_feat", p_feat), ("q_feat", q_feat)):
        norms = f.detach().norm(dim=-1)
        if (norms - 1).abs().max() > UNIT_NORM_TOL:
            raise ValueError(f"{name} is not L2-normalized (max deviation {float((norms - 1).abs().max()):.3g})")
    return ((p_feat - q_feat) ** 2).sum(dim=-1)


def triplet_intensity_loss(d1, d2):
    """Hinge ``max(0, 1 + d1 - d2)``: the milder distortion must sit closer."""
    if isinstance(d1, Tensor) or isinstance(d2, Tensor):
        return torch.clamp(1 + torch.as_tensor(d1) - torch.as_tensor(d2), min=0)
    return max(0.0, 1.0 + d1 - d2)


def detection_loss(d1, d2, d3=None):
    """Sum of adjacent-level hinges minus one; floor is -1.

    With only two levels the loss is the single hinge between them.
    """
    if d3 is None:
        return triplet_intensity_loss(d1, d2)
    return triplet_intensity_loss(d1, d2) + triplet_intensity_loss(d2, d3) - 1


def combined_pretrain_loss(l_cls, l_det, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return l_cls + lam * l_det


def mse_loss(pred, truth) -> Tensor:
    pred = torch.as_tensor(pred)
    truth = torch.as_tensor(truth, dtype=pred.dtype)
    if pred.shape != truth.shape:
        raise ValueError(f"mse_loss: shape {tuple(pred.shape)} vs {tuple(truth.shape)}")
    return ((pred - truth) ** 2).mean()


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, Tensor] = field(default_factory=dict)
    v: dict[int, Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params, state: AdamState, lr: float, weight_decay: float = 0.0) -> AdamState:
    """One Adam update in place; weight decay enters as an L2 gradient term.

    Parameters with ``requires_grad=False`` or no gradient are left alone.
    """
    state.step += 1
    bc1 = 1 - state.beta1**state.step
    bc2 = 1 - state.beta2**state.step
    for i, p in enumerate(params):
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.setdefault(i, torch.zeros_like(p))
        v = state.v.setdefault(i, torch.zeros_like(p))
        m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SAANCKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, Tensor | np.ndarray], hparams: dict) -> None:
    """Write named float32 tensors plus a ``<path>.json`` hyperparameter sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
        for name, t in tensors.items():
            arr = t.detach().cpu().numpy() if isinstance(t, Tensor) else np.asarray(t)
            arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(hparams, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path} is not a SAAN checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(math.prod(shape))
            arr = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(np.float32)
    sidecar = path.with_name(path.name + ".json")
    hparams = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return tensors, hparams

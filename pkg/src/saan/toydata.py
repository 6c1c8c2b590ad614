"""Synthetic stand-in corpus: procedural textures with vote counts.

Each image mixes a colour gradient, oriented sinusoids and a few solid
shapes, stretched to the full intensity range with a fixed-strength grain on
top so degradation levels are comparable across images. A hidden appeal
value (contrast and colourfulness, penalized for clutter) drives a per-month vote count, so scores produced by
:func:`saan.curate.score_all` are learnable from pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from saan import curate
from saan.imageops import rng_for


GRAIN = 0.1


@dataclass
class ToyItem:
    image_id: str
    image: np.ndarray
    appeal: float
    record: curate.VoteRecord


def toy_image(seed: int, size: int = 32) -> tuple[np.ndarray, float]:
    """One textured RGB image and its hidden appeal value in roughly [0, 1]."""
    rng = rng_for(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3))
    angle = rng.uniform(0, np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img = c0 + (c1 - c0) * t[..., None]

    contrast = rng.uniform(0.05, 0.35)
    n_waves = int(rng.integers(1, 4))
    for _ in range(n_waves):
        freq = rng.uniform(1, 4)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        tint = rng.uniform(0.3, 1.0, size=3)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img = img + (contrast / n_waves) * wave[..., None] * tint

    n_shapes = int(rng.integers(0, 5))
    for _ in range(n_shapes):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.06, 0.2)
        if rng.uniform() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * 1.5)
        img[mask] = 0.6 * img[mask] + 0.4 * color

    # stretch to the full range, then add fixed-strength per-pixel grain
    lo = img.min(axis=(0, 1))
    hi = img.max(axis=(0, 1))
    img = (img - lo) / np.maximum(hi - lo, 1e-6)
    grain = rng.uniform(-1.0, 1.0, size=(size, size, 1))
    img = np.clip(0.9 * img + 0.05 + GRAIN * grain, 0.0, 1.0)
    colourfulness = float(np.std(img - img.mean(axis=2, keepdims=True)))
    appeal = 2.5 * contrast + 3.0 * colourfulness - 0.08 * n_shapes
    return img, appeal


def toy_corpus(n: int, size: int = 32, seed: int = 0, months: int = 4) -> list[ToyItem]:
    """``n`` synthetic images with vote records spread over ``months`` months."""
    rng = rng_for(seed, 7)
    items = []
    for i in range(n):
        img, appeal = toy_image(int(rng.integers(0, 2**31 - 1)), size)
        month_idx = i % months
        month = f"2020-{month_idx + 1:02d}"
        # months differ in overall turnout; appeal scales votes within a month
        turnout = 1.0 + 0.5 * month_idx
        votes = max(1, int(round(turnout * np.exp(1.0 + 4.0 * appeal + 0.1 * rng.standard_normal()))))
        image_id = f"toy{i:05d}"
        items.append(ToyItem(image_id, img, appeal, curate.VoteRecord(image_id, votes, month, f"images/{image_id}.png")))
    return items


def toy_scored(n: int, size: int = 32, seed: int = 0) -> list[tuple[np.ndarray, float]]:
    """``(image, score)`` pairs scored with the monthly sigmoid."""
    items = toy_corpus(n, size, seed)
    scored = curate.score_all([it.record for it in items])
    return [(it.image, s.score) for it, s in zip(items, scored)]

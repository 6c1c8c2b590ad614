"""Pretext-task sample construction for self-supervised pretraining."""

from __future__ import annotations

import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from saan import imageops
from saan.imageops import DistortionSpec, Kind


@dataclass
class PretextSample:
    """One image edited by one kind at every enabled level.

    ``siblings`` are ordered from mildest to heaviest; ``spec``/``patch``/
    ``label`` identify the seed-chosen level among them.
    """

    original: np.ndarray
    kind: Kind
    siblings: list[np.ndarray]
    sibling_specs: list[DistortionSpec]
    sibling_labels: list[int]
    chosen: int

    @property
    def patch(self) -> np.ndarray:
        return self.siblings[self.chosen]

    @property
    def spec(self) -> DistortionSpec:
        return self.sibling_specs[self.chosen]

    @property
    def label(self) -> int:
        return self.sibling_labels[self.chosen]

    @property
    def orders_intensity(self) -> bool:
        """Whether the siblings form an intensity ladder usable by the detection loss."""
        return self.kind not in (Kind.ROTATION, Kind.NONE) and len(self.siblings) >= 2


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SAAN_THREADS", "1")))
    except ValueError:
        return 1


def _fallback_donor(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    from saan.toydata import toy_image

    img, _ = toy_image(seed, size=max(shape[0], shape[1]))
    img = imageops.resize(img, shape[0], shape[1])
    return img if shape[2] == 3 else img.mean(axis=2, keepdims=True)


def _samples_for_image(
    i: int,
    images: Sequence[np.ndarray],
    seed: int,
    classes: Sequence[DistortionSpec],
    size: int,
    kinds_per_image: int,
) -> list[PretextSample]:
    rng = imageops.rng_for(seed, i)
    img = images[i]
    by_kind: dict[Kind, list[int]] = {}
    for label, spec in enumerate(classes):
        by_kind.setdefault(spec.kind, []).append(label)
    kinds = list(by_kind)
    picks = rng.choice(len(kinds), size=min(kinds_per_image, len(kinds)), replace=False)
    original = imageops.resize(img, size, size)
    out = []
    for k in sorted(int(p) for p in picks):
        kind = kinds[k]
        labels = by_kind[kind]
        op_seed = int(rng.integers(0, 2**31 - 1))
        donor = None
        if kind is Kind.CUTMIX:
            if len(images) > 1:
                j = int(rng.integers(0, len(images) - 1))
                j += j >= i
                donor = images[j]
                if donor.shape != img.shape:
                    donor = imageops.resize(donor, img.shape[0], img.shape[1])
                    if donor.shape[2] != img.shape[2]:
                        donor = donor.mean(axis=2, keepdims=True) if img.shape[2] == 1 else np.repeat(donor, 3, axis=2)
            else:
                donor = _fallback_donor(op_seed, img.shape)
        siblings = []
        for label in labels:
            # every level shares op_seed so siblings differ only in strength
            edited = imageops.apply(classes[label], img, donor=donor, seed=op_seed)
            siblings.append(imageops.resize(edited, size, size))
        chosen = int(rng.integers(0, len(labels)))
        out.append(
            PretextSample(
                original=original,
                kind=kind,
                siblings=siblings,
                sibling_specs=[classes[label] for label in labels],
                sibling_labels=list(labels),
                chosen=chosen,
            )
        )
    return out


def make_pretext_batch(
    images: Sequence[np.ndarray],
    seed: int,
    classes: Sequence[DistortionSpec] | None = None,
    size: int = 224,
    kinds_per_image: int = 3,
) -> list[PretextSample]:
    """Edit each image with ``kinds_per_image`` distinct seeded kinds at all levels.

    Degradations run on the full image, which is then resized to
    ``size x size``. Output order is image order, then table order of kinds,
    regardless of ``SAAN_THREADS``.
    """
    if not images:
        raise ValueError("make_pretext_batch needs at least one image")
    if classes is None:
        classes = imageops.enumerate_classes()
    args = (images, seed, classes, size, kinds_per_image)
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            groups = list(pool.map(lambda i: _samples_for_image(i, *args), range(len(images))))
    else:
        groups = [_samples_for_image(i, *args) for i in range(len(images))]
    return [s for g in groups for s in g]

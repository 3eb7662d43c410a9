"""Synthetic rotation-invariant classification data.

Two centered pattern families whose class labels survive any rotation or
reflection: soft rings (class 0) and axis-aligned crosses (class 1).
Per-sample radius, thickness, amplitude, and pixel noise vary, so images are
generic (no accidental symmetry) while the class stays orientation-free.
"""

from __future__ import annotations

import numpy as np


def rings_vs_crosses(n_per_class: int, side: int, seed: int, noise: float = 0.05):
    """Balanced list of (image, label) pairs, labels 0=ring and 1=cross."""
    rng = np.random.default_rng(seed)
    center = (side - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float),
                         indexing="ij")
    dist = np.sqrt((rr - center) ** 2 + (cc - center) ** 2)
    images, labels = [], []
    for _ in range(n_per_class):
        radius = rng.uniform(0.22, 0.32) * side
        width = rng.uniform(1.0, 1.8)
        amp = rng.uniform(0.8, 1.2)
        ring = amp * np.exp(-(((dist - radius) / width) ** 2))
        images.append(ring + rng.normal(0.0, noise, size=ring.shape))
        labels.append(0)

        width = rng.uniform(0.8, 1.6)
        extent = rng.uniform(0.28, 0.42) * side
        amp = rng.uniform(0.8, 1.2)
        horiz = np.exp(-(((rr - center) / width) ** 2)) * (np.abs(cc - center) <= extent)
        vert = np.exp(-(((cc - center) / width) ** 2)) * (np.abs(rr - center) <= extent)
        cross = amp * np.maximum(horiz, vert)
        images.append(cross + rng.normal(0.0, noise, size=cross.shape))
        labels.append(1)
    return images, labels


def one_hot(labels, n_classes: int = 2) -> list[np.ndarray]:
    out = []
    for lab in labels:
        v = np.zeros(n_classes)
        v[int(lab)] = 1.0
        out.append(v)
    return out


def accuracy(net, images, labels, forward_fn) -> float:
    hits = 0
    for img, lab in zip(images, labels):
        pred = forward_fn(net, img)
        hits += int(np.argmax(pred) == lab)
    return hits / len(labels)

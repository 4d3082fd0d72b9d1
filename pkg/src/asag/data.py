"""Seeded toy datasets of 2-D point sets.

Each training example is a set of ``n_points`` points drawn from one mode
of the target distribution; the mode index is the class label.  Pooling the
points of many sets with uniformly drawn labels gives the full mixture.

gauss8
    8 isotropic Gaussians, std 0.1, centers on the circle of radius 2 at
    angles ``k * pi / 4``.
checkerboard
    4x4 board on ``[-2, 2]^2``; the 8 cells with even ``row + col`` are the
    classes, points uniform within the cell.
swissroll
    Spiral ``theta * (cos theta, sin theta) / 5`` for ``theta`` in
    ``[1.5 pi, 4.5 pi]``, cut into 4 equal arcs (classes), plus N(0, 0.05^2)
    jitter.
gauss1
    A single standard Gaussian ``N(0, I)`` with one class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .tensor import Rng

DATASETS = ("gauss8", "checkerboard", "swissroll", "gauss1")


@dataclass(frozen=True)
class ToyDataset:
    name: str
    num_classes: int
    mode_centers: np.ndarray
    coverage_radius: float

    def sample_class(self, rng: Rng, label: int, count: int) -> np.ndarray:
        g = rng.generator
        if self.name == "gauss8":
            return self.mode_centers[label] + 0.1 * g.standard_normal((count, 2))
        if self.name == "checkerboard":
            return self.mode_centers[label] + g.uniform(-0.5, 0.5, size=(count, 2))
        if self.name == "swissroll":
            lo = 1.5 * np.pi + label * (3 * np.pi / 4)
            theta = lo + g.uniform(0.0, 3 * np.pi / 4, size=count)
            pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / 5.0
            return pts + 0.05 * g.standard_normal((count, 2))
        return g.standard_normal((count, 2))

    def sample_sets(self, rng: Rng, num_sets: int, n_points: int, labels=None):
        """Return ``(points [num_sets, n_points, 2], labels [num_sets])``."""
        if labels is None:
            labels = rng.integers(0, self.num_classes, size=num_sets)
        labels = np.asarray(labels, dtype=np.int64)
        x = np.stack([self.sample_class(rng, int(c), n_points) for c in labels]) if num_sets else \
            np.zeros((0, n_points, 2))
        return x, labels

    def sample_points(self, rng: Rng, count: int, label: int | None = None) -> np.ndarray:
        """Ground-truth points: the full mixture, or one class if ``label`` is given."""
        if label is not None:
            return self.sample_class(rng, label, count)
        labels = rng.integers(0, self.num_classes, size=count)
        out = np.zeros((count, 2))
        for c in range(self.num_classes):
            idx = np.flatnonzero(labels == c)
            out[idx] = self.sample_class(rng, c, idx.size)
        return out


def _ring(k: int, radius: float) -> np.ndarray:
    ang = np.arange(k) * (2 * np.pi / k)
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def get_dataset(name: str) -> ToyDataset:
    if name == "gauss8":
        return ToyDataset(name, 8, _ring(8, 2.0), 0.3)
    if name == "checkerboard":
        cells = [(-1.5 + c, -1.5 + r) for r in range(4) for c in range(4) if (r + c) % 2 == 0]
        return ToyDataset(name, 8, np.array(cells), 0.5)
    if name == "swissroll":
        mids = 1.5 * np.pi + (np.arange(4) + 0.5) * (3 * np.pi / 4)
        centers = np.stack([mids * np.cos(mids), mids * np.sin(mids)], axis=1) / 5.0
        return ToyDataset(name, 4, centers, 0.5)
    if name == "gauss1":
        return ToyDataset(name, 1, np.zeros((1, 2)), 3.0)
    raise InputError(f"unknown dataset {name!r}; choose from {', '.join(DATASETS)}")

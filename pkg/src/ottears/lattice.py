"""Rectangular lattices used for sampling fields and graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """Axis-aligned rectangular lattice of nodes.

    Node ``(i_1, ..., i_n)`` sits at ``origin + i * spacing``.  Counts are the
    node counts per axis (so the covered box has ``counts - 1`` cells per
    axis).
    """

    origin: np.ndarray
    spacing: np.ndarray
    counts: tuple

    def __post_init__(self):
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        spacing = np.atleast_1d(np.asarray(self.spacing, dtype=float))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (origin.shape == spacing.shape == (len(counts),)):
            raise ValueError("origin, spacing and counts must share one length")
        if np.any(spacing <= 0):
            raise ValueError("spacing must be positive")
        if any(c < 2 for c in counts):
            raise ValueError("need at least 2 nodes per axis")
        origin.setflags(write=False)
        spacing.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_box(cls, low, high, counts):
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if np.isscalar(counts) or np.ndim(counts) == 0:
            counts = (int(counts),) * len(low)
        counts = tuple(int(c) for c in counts)
        spacing = (high - low) / (np.asarray(counts) - 1)
        return cls(low, spacing, counts)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def high(self):
        return self.origin + self.spacing * (np.asarray(self.counts) - 1)

    def axes(self):
        """Per-axis node coordinate arrays."""
        return [self.origin[k] + self.spacing[k] * np.arange(self.counts[k])
                for k in range(self.ndim)]

    def nodes(self):
        """All node coordinates as an (N, ndim) array in C order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def node(self, index):
        return self.origin + self.spacing * np.asarray(index, dtype=float)

    def project(self):
        """Drop the last axis (the projection onto the first n-1 coords)."""
        if self.ndim < 2:
            raise ValueError("cannot project a 1D lattice")
        return Lattice(self.origin[:-1], self.spacing[:-1], self.counts[:-1])

    def contains(self, x, slack=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.origin - slack)
                    and np.all(x <= self.high + slack))

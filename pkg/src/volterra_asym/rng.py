"""Counter-based Brownian increments.

Each path owns an independent Philox stream keyed by ``(seed, path_index)``.
Increments are produced in fixed blocks of :data:`BLOCK` steps whose counter
is the block number, so any range of steps can be regenerated without
replaying the stream and results never depend on how paths are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["BLOCK", "BrownianDriver"]

BLOCK = 4096


@dataclass(frozen=True)
class BrownianDriver:
    """Standard ``dim``-dimensional Brownian increments on a grid of step ``h``.

    ``factor > 1`` views the fine driver of step ``h / factor`` at a coarser
    step by summing consecutive fine increments, so a coarse and a fine run
    see the same Brownian path.
    """

    seed: int
    path_index: int
    h: float
    dim: int = 1
    factor: int = 1

    @property
    def fine_h(self) -> float:
        return self.h / self.factor

    def _block(self, b: int) -> np.ndarray:
        bitgen = np.random.Philox(key=np.array([self.seed % 2**64, self.path_index % 2**64], dtype=np.uint64),
                                  counter=np.array([0, b, 0, 0], dtype=np.uint64))
        z = np.random.Generator(bitgen).standard_normal((BLOCK, self.dim))
        return z * math.sqrt(self.fine_h)

    def _fine(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros((0, self.dim))
        b0, b1 = start // BLOCK, (stop - 1) // BLOCK
        chunk = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        off = b0 * BLOCK
        return chunk[start - off:stop - off]

    def initial_normals(self, n: int) -> np.ndarray:
        """Standard normals for a random initial value, from a lane no increment block uses."""
        bitgen = np.random.Philox(key=np.array([self.seed % 2**64, self.path_index % 2**64], dtype=np.uint64),
                                  counter=np.array([0, 0, 1, 0], dtype=np.uint64))
        return np.random.Generator(bitgen).standard_normal(n)

    def increments(self, n: int, start: int = 0) -> np.ndarray:
        """Increments for steps ``start .. start + n - 1``; shape (n, dim)."""
        f = self.factor
        fine = self._fine(start * f, (start + n) * f)
        if f == 1:
            return fine
        return fine.reshape(n, f, self.dim).sum(axis=1)

    def coarsened(self, factor: int) -> "BrownianDriver":
        if factor < 1 or int(factor) != factor:
            raise ValueError("coarsening factor must be a positive integer")
        return BrownianDriver(self.seed, self.path_index, self.h * factor, self.dim, self.factor * int(factor))

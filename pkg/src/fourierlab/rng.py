"""Seeded random number generation shared by every stochastic step of a run.

A run owns exactly one :class:`Rng`. Uniform draws come from numpy's PCG64
bit generator (stable across platforms and numpy releases); Gaussian draws
are produced from those uniforms with the Box-Muller transform so that the
normal stream does not depend on numpy's ziggurat implementation.
"""

from __future__ import annotations

import copy

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bitgen = np.random.PCG64(self.seed)
        self._gen = np.random.Generator(self._bitgen)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size, loc=0.0, scale=1.0) -> np.ndarray:
        """Gaussian draws via Box-Muller (both the cosine and sine halves are used)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        # 1 - U lies in (0, 1], keeping the log finite
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return loc + scale * z[:n].reshape(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def get_state(self) -> dict:
        """JSON-serializable snapshot of the generator."""
        state = copy.deepcopy(self._bitgen.state)
        return {"seed": self.seed, "bit_generator": state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._bitgen.state = copy.deepcopy(state["bit_generator"])

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        rng.set_state(state)
        return rng

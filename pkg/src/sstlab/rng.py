"""Counter-based random streams keyed by (master seed, trial index).

Every trial draws from its own Philox stream, so results do not depend on
how trials are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Sub-stream tags; a trial may need independent primal/dual/init streams.
PRIMAL = 0
DUAL = 1
INIT = 2


@dataclass(frozen=True)
class SeedSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64):
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.stream < 0:
            raise ValueError("stream id must be non-negative")

    def generator(self, tag: int = 0) -> np.random.Generator:
        # Philox key = (seed, stream); the tag selects a disjoint counter block.
        key = np.array([self.seed, self.stream & _MASK64], dtype=np.uint64)
        counter = np.array([0, 0, 0, tag], dtype=np.uint64)
        bg = np.random.Philox(key=key, counter=counter)
        return np.random.Generator(bg)

    def child(self, stream: int) -> "SeedSpec":
        return SeedSpec(self.seed, stream)


class UniformStream:
    """Buffered uniforms on [0, 1) from one Philox stream.

    The compiled kernels consume raw buffers; Python code calls ``next``.
    Both read the same sequence, so a trajectory does not depend on the
    buffer size.
    """

    def __init__(self, seed: SeedSpec, tag: int = 0, block: int = 4096):
        self._gen = seed.generator(tag)
        self._block = block
        self.buf = self._gen.random(block)
        self.pos = 0

    def next(self) -> float:
        if self.pos >= self.buf.shape[0]:
            self.buf = self._gen.random(self._block)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return float(u)

    def exponential(self, log_rate: float) -> float:
        """Exp(rate) sample given log(rate); +inf (no draw consumed) for rate 0."""
        if log_rate == -np.inf:
            return np.inf
        return -np.log1p(-self.next()) * np.exp(-log_rate)

    def refill(self, need: int) -> None:
        """Make at least ``need`` unread uniforms available in ``buf``."""
        rest = self.buf[self.pos:]
        if rest.shape[0] >= need:
            return
        extra = max(self._block, need - rest.shape[0])
        self.buf = np.concatenate([rest, self._gen.random(extra)])
        self.pos = 0

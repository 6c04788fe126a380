"""Reproducible random streams.

Every random draw in the package goes through :class:`RngStream`, a thin
wrapper over numpy's Philox counter-based bit generator keyed by
``(seed, stream_id)``. Distinct stream ids give statistically independent
streams for the same seed, so e.g. changing a data seed can never perturb an
initialization draw.

Gaussian variates are produced by the basic (trigonometric) Box-Muller
transform applied to consecutive uniform pairs, in a fixed order, rather than
numpy's ziggurat sampler. Box-Muller consumes exactly two uniforms per pair
of normals, which keeps the draw order platform-independent and easy to
document:

    u1, u2 in [0,1)  ->  r = sqrt(-2 log(1-u1)),  phi = 2 pi u2
    z0 = r cos(phi),  z1 = r sin(phi)

(``1-u1`` avoids log(0); numpy uniforms live in [0,1).)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "philox4x64"

# Stream ids used by the experiment harness. Any non-negative integer is a
# valid stream id; these constants just keep the harness's draws disjoint.
DATA_STREAM = 1
INIT_STREAM = 2
EVAL_STREAM = 3


@dataclass
class RngStream:
    """One named, seeded, restartable random stream."""

    seed: int
    stream_id: int = 0
    algorithm: str = ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unknown rng algorithm: {self.algorithm!r}")
        key = np.array([np.uint64(self.seed % (1 << 64)),
                        np.uint64(self.stream_id % (1 << 64))], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniforms(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms on [0, 1)."""
        return self._gen.random(n)

    def normals(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller, fixed consumption order."""
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs)
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        phi = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(phi)
        z[1::2] = r * np.sin(phi)
        return z[:n]

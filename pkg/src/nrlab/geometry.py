"""Branch geometry of the zero-loss target set, and generalization error.

For the two-neuron network recovering a single neuron there are exactly two
families of parameters reproducing the target function: both neurons aligned
with the target and outer weights summing to a0 (the Q1 branch, an affine
line after quotienting symmetries), or one neuron matching the target
exactly with the other silenced (the Q2 branch, where the silenced neuron's
inner weight is free). Distances to both branches are computed by orthogonal
projection, minimized over the sign-flip/permutation symmetry orbit, and
drive the post-convergence branch classification.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .model import (ActivationSpec, NetworkParams, TargetSpec,
                    forward_many, target_eval_many)
from .rng import RngStream, EVAL_STREAM


class BranchLabel(enum.Enum):
    Q1 = "Q1"
    Q2 = "Q2"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class SampleSizeTable:
    """Named sample-size thresholds for one recovery setting."""

    optimistic: int
    separation_q2: int
    separation_q1: int
    full_identification: Optional[int]

    def __post_init__(self):
        chain = [self.optimistic, self.separation_q2, self.separation_q1]
        if self.full_identification is not None:
            chain.append(self.full_identification)
        if any(a > b for a, b in zip(chain, chain[1:])):
            raise InvalidInputError(f"sample-size thresholds out of order: {chain}")


def sample_size_table(setting: str) -> SampleSizeTable:
    """Threshold table for the 1-D benchmark ("oneD") or its d=3 analogue ("d3")."""
    if setting == "oneD":
        return SampleSizeTable(3, 4, 5, 6)
    if setting == "d3":
        return SampleSizeTable(5, 6, 9, None)
    raise InvalidInputError(f"unknown sample-size setting {setting!r}")


# ---------------------------------------------------------------------------
# Symmetry handling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _check_odd(name: str, eval_fn) -> bool:
    pts = np.array([0.3, 0.7, 1.9])
    return bool(np.max(np.abs(np.asarray(eval_fn(pts)) + np.asarray(eval_fn(-pts)))) < 1e-12)


def canonicalize(theta: NetworkParams, act: ActivationSpec) -> NetworkParams:
    """Canonical representative of theta's symmetry orbit (odd activations).

    Flips each neuron (a, w) -> (-a, -w) so a >= 0 (a neuron with a = 0 is
    flipped so its first nonzero inner coordinate is positive), then sorts
    neurons by descending |a| with lexicographic tiebreak on w. The network
    function is unchanged.
    """
    if not _check_odd(act.name, act.eval):
        raise InvalidInputError(f"canonicalize requires an odd activation, got {act.name!r}")
    a = theta.a.copy()
    w = theta.w.copy()
    for k in range(theta.m):
        flip = a[k] < 0
        if a[k] == 0.0:
            nz = np.nonzero(w[k])[0]
            flip = nz.size > 0 and w[k, nz[0]] < 0
        if flip:
            a[k] = -a[k]
            w[k] = -w[k]
    order = sorted(range(theta.m), key=lambda k: (-abs(a[k]), tuple(w[k])))
    return NetworkParams(a=a[order], w=w[order, :])


def param_distance(flat_a: np.ndarray, flat_b: np.ndarray, m: int, d_aug: int) -> float:
    """Euclidean distance between parameter vectors modulo network symmetries.

    For small widths this is exact: minimized over all neuron permutations,
    with the optimal sign flip per matched pair applied in closed form. For
    wider networks it falls back to greedy matching by block norm order,
    which is what the canonical sort would produce.
    """
    blk = d_aug + 1
    A = np.asarray(flat_a, dtype=float).reshape(m, blk)
    B = np.asarray(flat_b, dtype=float).reshape(m, blk)
    na = np.sum(A * A, axis=1)
    nb = np.sum(B * B, axis=1)
    dots = np.abs(A @ B.T)
    if m <= 6:
        best = math.inf
        for perm in itertools.permutations(range(m)):
            tot = 0.0
            for k, pk in enumerate(perm):
                tot += na[k] + nb[pk] - 2.0 * dots[k, pk]
            if tot < best:
                best = tot
        return math.sqrt(max(best, 0.0))
    order_a = np.argsort(-na)
    order_b = np.argsort(-nb)
    tot = 0.0
    for k, pk in zip(order_a, order_b):
        tot += na[k] + nb[pk] - 2.0 * dots[k, pk]
    return math.sqrt(max(tot, 0.0))


def _orbit(theta: NetworkParams):
    """All sign-flip x permutation images of a width-2 parameter vector."""
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            for perm in ((0, 1), (1, 0)):
                a = np.array([s1 * theta.a[perm[0]], s2 * theta.a[perm[1]]])
                w = np.vstack([s1 * theta.w[perm[0]], s2 * theta.w[perm[1]]])
                yield a, w


# ---------------------------------------------------------------------------
# Branch distances and classification
# ---------------------------------------------------------------------------

def _require_m2(theta: NetworkParams):
    if theta.m != 2:
        raise InvalidInputError(f"branch distances are defined for m=2, got m={theta.m}")


def q1_distance(theta: NetworkParams, target: TargetSpec) -> float:
    """Distance to the branch {w_1 = w_2 = w_0, a_1 + a_2 = a_0}.

    Orthogonal projection: the w blocks clamp to w_0 and (a_1, a_2) projects
    onto the line a_1 + a_2 = a_0; minimized over the symmetry orbit.
    """
    _require_m2(theta)
    w0 = target.w0
    best = math.inf
    for a, w in _orbit(theta):
        d2 = (np.sum((w[0] - w0) ** 2) + np.sum((w[1] - w0) ** 2)
              + 0.5 * (a[0] + a[1] - target.a0) ** 2)
        best = min(best, d2)
    return math.sqrt(best)


def q2_distance(theta: NetworkParams, target: TargetSpec) -> float:
    """Distance to the branch {w_1 = w_0, a_1 = a_0, a_2 = 0}, w_2 free.

    Minimized over which neuron plays the matching role and over the sign
    orbit. The branch's open condition (the silenced neuron's inner weight
    differing from w_0) is a separate boundary flag, not part of the
    distance; see branch_distances.
    """
    d, _ = _q2_distance_flag(theta, target, 0.0)
    return d


def _q2_distance_flag(theta: NetworkParams, target: TargetSpec,
                      boundary_tol: float) -> tuple[float, bool]:
    _require_m2(theta)
    w0 = target.w0
    best = math.inf
    on_boundary = False
    for a, w in _orbit(theta):
        d2 = np.sum((w[0] - w0) ** 2) + (a[0] - target.a0) ** 2 + a[1] ** 2
        if d2 < best:
            best = d2
            free_w_gap = min(float(np.linalg.norm(w[1] - w0)),
                             float(np.linalg.norm(w[1] + w0)))
            on_boundary = free_w_gap <= boundary_tol
    return math.sqrt(best), on_boundary


def branch_distances(theta: NetworkParams, target: TargetSpec,
                     boundary_tol: float = 1e-3) -> tuple[float, float, bool]:
    """(q1_distance, q2_distance, q2_boundary_flag) in one call.

    The flag marks projections landing where the silenced neuron's inner
    weight coincides with w_0 -- the genuinely ambiguous closure boundary
    between the branches.
    """
    q2, flag = _q2_distance_flag(theta, target, boundary_tol)
    return q1_distance(theta, target), q2, flag


def classify(theta: NetworkParams, target: TargetSpec, tol: float = 1e-3) -> BranchLabel:
    """Label theta by its nearest branch, or Unresolved when both are far."""
    if not tol > 0:
        raise InvalidInputError("classification tolerance must be positive")
    q1, q2, _ = branch_distances(theta, target, boundary_tol=tol)
    if q1 < tol and q1 <= q2:
        return BranchLabel.Q1
    if q2 < tol and q2 < q1:
        return BranchLabel.Q2
    return BranchLabel.UNRESOLVED


# ---------------------------------------------------------------------------
# Generalization error
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalPlan:
    """Where the learned function is compared against the target.

    kind:
      "grid_1d"     - n points evenly spaced on [lo, hi]
      "gaussian_1d" - n i.i.d. standard-normal points
      "cube"        - n i.i.d. uniform points on [lo, hi]^d
    """

    kind: str
    n: int = 1000
    lo: float = -2.0
    hi: float = 2.0
    d: int = 1
    seed: int = 0
    bias_enabled: bool = True

    def __post_init__(self):
        if self.kind not in ("grid_1d", "gaussian_1d", "cube"):
            raise InvalidInputError(f"unknown eval plan kind {self.kind!r}")
        if self.n < 1:
            raise InvalidInputError("eval plan needs at least one point")

    def points(self) -> np.ndarray:
        if self.kind == "grid_1d":
            x = np.linspace(self.lo, self.hi, self.n).reshape(-1, 1)
        elif self.kind == "gaussian_1d":
            x = RngStream(self.seed, EVAL_STREAM).normals(self.n).reshape(-1, 1)
        else:
            u = RngStream(self.seed, EVAL_STREAM).uniforms(self.n * self.d)
            x = self.lo + (self.hi - self.lo) * u.reshape(self.n, self.d)
        if self.bias_enabled:
            return np.column_stack([x, np.ones(x.shape[0])])
        return x


def generalization_error(theta: NetworkParams, target: TargetSpec,
                         act: ActivationSpec, eval_plan: EvalPlan) -> float:
    """Mean squared error between network and target over the plan's points."""
    x = eval_plan.points()
    diff = forward_many(theta, act, x) - target_eval_many(target, x)
    return float(np.mean(diff * diff))

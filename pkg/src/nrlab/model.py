"""Two-layer network model, single-neuron target, activations, and datasets.

The network is f(x) = sum_i a_i * sigma(w_i . x) acting on *augmented*
inputs: when a bias is enabled, a constant coordinate 1 is appended to every
input and the bias lives as the last coordinate of each inner weight vector.
All other modules evaluate networks and targets exclusively through here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError
from .rng import RngStream, DATA_STREAM


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationSpec:
    """A scalar activation with its first two derivatives.

    ``admissible_thm1`` records whether the activation satisfies the
    conditions the small-initialization escape analysis needs: sigma(0) = 0
    and sigma'(0) != 0, with sigma twice continuously differentiable.
    """

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    admissible_thm1: bool
    analytic: bool


def _tanh_d1(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


def _ssq(x):
    return x / (1.0 + x * x)


def _ssq_d1(x):
    u = 1.0 + x * x
    return (1.0 - x * x) / (u * u)


def _ssq_d2(x):
    u = 1.0 + x * x
    return -2.0 * x * (3.0 - x * x) / (u * u * u)


_REGISTRY: dict[str, ActivationSpec] = {
    "tanh": ActivationSpec("tanh", np.tanh, _tanh_d1, _tanh_d2,
                           admissible_thm1=True, analytic=True),
    # softsign-square: x / (1 + x^2); odd, analytic, sigma'(0) = 1
    "softsign_square": ActivationSpec("softsign_square", _ssq, _ssq_d1, _ssq_d2,
                                      admissible_thm1=True, analytic=True),
}


def get_activation(name: str) -> ActivationSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown activation {name!r}; registered: {sorted(_REGISTRY)}") from None


def register_activation(name: str, eval: Callable, d1: Callable, d2: Callable,
                        analytic: bool = False) -> ActivationSpec:
    """Register a user-supplied activation triple after admissibility checks.

    Checks sigma(0) = 0 and |sigma'(0)| > 0, and spot-checks d1/d2 against
    central finite differences of eval on a grid in [-5, 5].
    """
    f0 = float(eval(np.asarray(0.0)))
    g0 = float(d1(np.asarray(0.0)))
    admissible = (f0 == 0.0) and (abs(g0) > 0.0)
    grid = np.linspace(-5.0, 5.0, 41)
    h = 1e-5
    fd1 = (np.asarray(eval(grid + h)) - np.asarray(eval(grid - h))) / (2 * h)
    fd2 = (np.asarray(d1(grid + h)) - np.asarray(d1(grid - h))) / (2 * h)
    scale1 = np.maximum(np.abs(fd1), 1.0)
    scale2 = np.maximum(np.abs(fd2), 1.0)
    if np.max(np.abs(np.asarray(d1(grid)) - fd1) / scale1) > 1e-6:
        raise InvalidInputError(f"activation {name!r}: d1 disagrees with finite differences")
    if np.max(np.abs(np.asarray(d2(grid)) - fd2) / scale2) > 1e-6:
        raise InvalidInputError(f"activation {name!r}: d2 disagrees with finite differences")
    spec = ActivationSpec(name, eval, d1, d2, admissible_thm1=admissible, analytic=analytic)
    _REGISTRY[name] = spec
    return spec


# ---------------------------------------------------------------------------
# Parameters and targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkParams:
    """Full parameter vector of a width-m network on d_aug-dimensional inputs.

    ``a`` has shape (m,), ``w`` has shape (m, d_aug). Arrays are frozen after
    construction; every operation returns a new instance.
    """

    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if a.ndim != 1 or w.ndim != 2 or w.shape[0] != a.shape[0]:
            raise InvalidInputError(
                f"inconsistent parameter shapes a{a.shape} w{w.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)
        a.flags.writeable = False
        w.flags.writeable = False

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d_aug(self) -> int:
        return self.w.shape[1]

    def flatten(self) -> np.ndarray:
        """Neuron-major flat layout: (a_1, w_1, a_2, w_2, ...)."""
        out = np.empty(self.m * (self.d_aug + 1))
        blk = self.d_aug + 1
        out[0::blk] = self.a
        for j in range(self.d_aug):
            out[1 + j::blk] = self.w[:, j]
        return out

    @staticmethod
    def from_flat(flat: np.ndarray, m: int, d_aug: int) -> "NetworkParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (m * (d_aug + 1),):
            raise InvalidInputError(
                f"flat length {flat.shape} does not match m={m}, d_aug={d_aug}")
        blk = d_aug + 1
        mat = flat.reshape(m, blk)
        return NetworkParams(a=mat[:, 0].copy(), w=mat[:, 1:].copy())

    @staticmethod
    def zeros(m: int, d_aug: int) -> "NetworkParams":
        return NetworkParams(a=np.zeros(m), w=np.zeros((m, d_aug)))

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.w)))


@dataclass(frozen=True)
class TargetSpec:
    """Single-neuron target a0 * sigma(w0 . x) on augmented inputs."""

    a0: float
    w0: np.ndarray
    activation: ActivationSpec

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=float)
        object.__setattr__(self, "w0", w0)
        w0.flags.writeable = False
        if self.a0 == 0.0:
            raise InvalidInputError("target outer weight a0 must be nonzero")
        if not np.any(w0 != 0.0):
            raise InvalidInputError("target inner weight w0 must be nonzero")

    @property
    def d_aug(self) -> int:
        return self.w0.shape[0]


@dataclass(frozen=True)
class Dataset:
    """n augmented input/label pairs sampled exactly from a target."""

    x_aug: np.ndarray  # (n, d_aug)
    y: np.ndarray      # (n,)
    bias_enabled: bool

    def __post_init__(self):
        x = np.asarray(self.x_aug, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InvalidInputError(f"inconsistent dataset shapes x{x.shape} y{y.shape}")
        if x.shape[0] < 1:
            raise InvalidInputError("dataset must contain at least one point")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        if self.bias_enabled and not np.all(x[:, -1] == 1.0):
            raise InvalidInputError("bias-augmented inputs must end in exactly 1")
        object.__setattr__(self, "x_aug", x)
        object.__setattr__(self, "y", y)
        x.flags.writeable = False
        y.flags.writeable = False

    @property
    def n(self) -> int:
        return self.x_aug.shape[0]

    @property
    def d_aug(self) -> int:
        return self.x_aug.shape[1]


@dataclass(frozen=True)
class SamplingPlan:
    """How raw inputs are drawn before augmentation.

    kind:
      "even"     - n points evenly spaced on [lo, hi], endpoints included (1-D)
      "gaussian" - n i.i.d. standard-normal points (1-D)
      "cube"     - n i.i.d. uniform points on [lo, hi]^d
    """

    kind: str
    n: int
    lo: float = -2.0
    hi: float = 2.0
    d: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("even", "gaussian", "cube"):
            raise InvalidInputError(f"unknown sampling kind {self.kind!r}")
        if self.n < 1:
            raise InvalidInputError("sample size must be at least 1")
        if self.kind in ("even", "cube") and not self.lo < self.hi:
            raise InvalidInputError(f"need lo < hi, got [{self.lo}, {self.hi}]")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def forward(params: NetworkParams, activation: ActivationSpec,
            x_aug: np.ndarray) -> float:
    """Network output sum_i a_i sigma(w_i . x_aug) at one augmented input."""
    x = np.asarray(x_aug, dtype=float)
    if x.shape != (params.d_aug,):
        raise InvalidInputError(
            f"input length {x.shape} does not match d_aug={params.d_aug}")
    z = params.w @ x
    return float(params.a @ np.asarray(activation.eval(z)))


def forward_many(params: NetworkParams, activation: ActivationSpec,
                 x_aug: np.ndarray) -> np.ndarray:
    """Vectorized forward over rows of an (n, d_aug) input matrix."""
    x = np.asarray(x_aug, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.d_aug:
        raise InvalidInputError(
            f"input shape {x.shape} does not match d_aug={params.d_aug}")
    z = x @ params.w.T  # (n, m)
    return np.asarray(activation.eval(z)) @ params.a


def target_eval(target: TargetSpec, x_aug: np.ndarray) -> float:
    """Target output a0 * sigma(w0 . x_aug)."""
    x = np.asarray(x_aug, dtype=float)
    if x.shape != target.w0.shape:
        raise InvalidInputError(
            f"input length {x.shape} does not match target dimension {target.w0.shape}")
    return float(target.a0 * target.activation.eval(float(target.w0 @ x)))


def target_eval_many(target: TargetSpec, x_aug: np.ndarray) -> np.ndarray:
    x = np.asarray(x_aug, dtype=float)
    if x.ndim != 2 or x.shape[1] != target.w0.shape[0]:
        raise InvalidInputError(
            f"input shape {x.shape} does not match target dimension {target.w0.shape[0]}")
    return target.a0 * np.asarray(target.activation.eval(x @ target.w0))


def sample_inputs(plan: SamplingPlan, seed: Optional[int] = None) -> np.ndarray:
    """Raw (n, d) inputs for a sampling plan; seed overrides the plan's."""
    s = plan.seed if seed is None else seed
    if plan.kind == "even":
        return np.linspace(plan.lo, plan.hi, plan.n).reshape(-1, 1)
    stream = RngStream(s, DATA_STREAM)
    if plan.kind == "gaussian":
        return stream.normals(plan.n).reshape(-1, 1)
    # cube: point-major draw order
    u = stream.uniforms(plan.n * plan.d).reshape(plan.n, plan.d)
    return plan.lo + (plan.hi - plan.lo) * u


def make_dataset(target: TargetSpec, sampler: SamplingPlan,
                 seed: Optional[int] = None, bias_enabled: bool = True) -> Dataset:
    """Sample inputs, augment, and label exactly by the target.

    Deterministic given (sampler, seed): the same seed always reproduces the
    same dataset bit for bit.
    """
    x = sample_inputs(sampler, seed)
    if bias_enabled:
        x_aug = np.column_stack([x, np.ones(x.shape[0])])
    else:
        x_aug = x
    if x_aug.shape[1] != target.d_aug:
        raise InvalidInputError(
            f"sampler dimension {x_aug.shape[1]} does not match target d_aug={target.d_aug}")
    y = target_eval_many(target, x_aug)
    return Dataset(x_aug=x_aug, y=y, bias_enabled=bias_enabled)


def example_target(activation: str = "tanh") -> TargetSpec:
    """The standard 1-D benchmark target tanh(x + 1) in augmented form."""
    act = get_activation(activation)
    return TargetSpec(a0=1.0, w0=np.array([1.0, 1.0]), activation=act)

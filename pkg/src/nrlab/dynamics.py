"""Loss, closed-form gradient, and the gradient-descent training loop.

Training is plain fixed-step gradient descent, theta <- theta - eta * grad,
recorded as a thinned :class:`Trajectory`. Divergence (non-finite loss or
parameters) is a reported outcome, not an exception: large-scale
initializations are expected to blow up occasionally and sweeps must keep
going.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .model import ActivationSpec, Dataset, NetworkParams

_CHUNK_CAP = 65536


class StopReason(str, enum.Enum):
    LOSS_THRESHOLD = "loss-threshold"
    MAX_ITERS = "max-iters"
    DIVERGENCE = "divergence"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    max_iters: int
    stop_loss: float = 1e-15
    record_stride: int = 100
    record_budget: int = 4096

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")
        if self.stop_loss < 0:
            raise InvalidInputError("stop_loss must be nonnegative")
        if self.record_stride < 1:
            raise InvalidInputError("record_stride must be at least 1")
        if self.record_budget < 2:
            raise InvalidInputError("record_budget must be at least 2")


@dataclass(frozen=True)
class Snapshot:
    iter: int
    theta: NetworkParams
    loss: float


@dataclass
class Trajectory:
    """Time-indexed, thinned record of one training run.

    ``snapshots`` covers the run at the recording stride (iteration 0 always
    included); ``terminal`` is the exact final state regardless of thinning.
    """

    snapshots: list[Snapshot]
    terminal: Snapshot
    stop_reason: StopReason
    m: int
    d_aug: int

    def iters(self) -> np.ndarray:
        return np.array([s.iter for s in self.snapshots], dtype=np.int64)

    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.snapshots])

    def flats(self) -> np.ndarray:
        """(len(snapshots), m*(d_aug+1)) matrix of flattened parameters."""
        return np.stack([s.theta.flatten() for s in self.snapshots])


def _check_dims(theta: NetworkParams, data: Dataset):
    if theta.d_aug != data.d_aug:
        raise InvalidInputError(
            f"parameter d_aug={theta.d_aug} does not match data d_aug={data.d_aug}")


def loss(theta: NetworkParams, data: Dataset, act: ActivationSpec) -> float:
    """Half sum of squared residuals over the dataset."""
    _check_dims(theta, data)
    z = data.x_aug @ theta.w.T
    r = np.asarray(act.eval(z)) @ theta.a - data.y
    return 0.5 * float(r @ r)


def gradient(theta: NetworkParams, data: Dataset, act: ActivationSpec) -> np.ndarray:
    """Closed-form loss gradient in the neuron-major flat layout.

    d/da_i = sum_j r_j sigma(w_i . x_j);
    d/dw_i = sum_j r_j a_i sigma'(w_i . x_j) x_j, with r_j the residual.
    """
    _check_dims(theta, data)
    z = data.x_aug @ theta.w.T              # (n, m)
    s = np.asarray(act.eval(z))
    sp = np.asarray(act.d1(z))
    r = s @ theta.a - data.y                # (n,)
    ga = r @ s                              # (m,)
    gw = (sp * (r[:, None] * theta.a[None, :])).T @ data.x_aug  # (m, d_aug)
    blk = theta.d_aug + 1
    out = np.empty(theta.m * blk)
    out[0::blk] = ga
    for j in range(theta.d_aug):
        out[1 + j::blk] = gw[:, j]
    return out


def finite_diff_gradient(theta: NetworkParams, data: Dataset, act: ActivationSpec,
                         step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient oracle, per-coordinate step h_i = step*(1+|theta_i|)."""
    if not step > 0:
        raise InvalidInputError("finite-difference step must be positive")
    _check_dims(theta, data)
    flat = theta.flatten()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        h = step * (1.0 + abs(flat[i]))
        up = flat.copy()
        up[i] += h
        dn = flat.copy()
        dn[i] -= h
        lp = loss(NetworkParams.from_flat(up, theta.m, theta.d_aug), data, act)
        lm = loss(NetworkParams.from_flat(dn, theta.m, theta.d_aug), data, act)
        out[i] = (lp - lm) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _gd_chunk_py(flat, X, y, act, eta, max_steps, stop_loss):
    """Numpy fallback with the same contract as _kernels.gd_chunk."""
    blk = X.shape[1] + 1
    m = flat.shape[0] // blk
    mat = flat.reshape(m, blk)
    bak = flat.copy()
    steps_done = 0
    for _ in range(max_steps):
        z = X @ mat[:, 1:].T
        s = np.asarray(act.eval(z))
        r = s @ mat[:, 0] - y
        ls = 0.5 * float(r @ r)
        if not np.isfinite(ls):
            if steps_done > 0:
                flat[:] = bak
                steps_done -= 1
            return steps_done, _kernels.DIVERGED
        if ls <= stop_loss:
            return steps_done, _kernels.HIT_STOP
        sp = np.asarray(act.d1(z))
        ga = r @ s
        gw = (sp * (r[:, None] * mat[None, :, 0])).T @ X
        bak[:] = flat
        mat[:, 0] -= eta * ga
        mat[:, 1:] -= eta * gw
        if not np.all(np.isfinite(flat)):
            flat[:] = bak
            return steps_done, _kernels.DIVERGED
        steps_done += 1
    if steps_done > 0:
        z = X @ mat[:, 1:].T
        r = np.asarray(act.eval(z)) @ mat[:, 0] - y
        if not np.isfinite(r @ r):
            flat[:] = bak
            return steps_done - 1, _kernels.DIVERGED
    return steps_done, _kernels.RAN_ALL


def _loss_flat(flat, X, y, act):
    blk = X.shape[1] + 1
    mat = flat.reshape(-1, blk)
    r = np.asarray(act.eval(X @ mat[:, 1:].T)) @ mat[:, 0] - y
    return 0.5 * float(r @ r)


def train(theta0: NetworkParams, data: Dataset, act: ActivationSpec,
          cfg: TrainConfig) -> Trajectory:
    """Run gradient descent from theta0 and record a thinned trajectory.

    Stops at the first of: loss <= cfg.stop_loss, cfg.max_iters updates, or a
    non-finite value (stop_reason "divergence", terminal = last finite state).
    Snapshots are taken every cfg.record_stride iterations; when their count
    would exceed cfg.record_budget the stride is doubled and existing
    snapshots re-thinned uniformly. The terminal state is always exact.
    """
    _check_dims(theta0, data)
    m, d_aug = theta0.m, theta0.d_aug
    X = np.ascontiguousarray(data.x_aug)
    y = np.ascontiguousarray(data.y)
    flat = np.ascontiguousarray(theta0.flatten())

    code = _kernels.ACT_CODES.get(act.name)
    if code is not None:
        def run_chunk(steps):
            return _kernels.gd_chunk(flat, X, y, code, cfg.learning_rate,
                                     steps, cfg.stop_loss)
    else:
        def run_chunk(steps):
            return _gd_chunk_py(flat, X, y, act, cfg.learning_rate,
                                steps, cfg.stop_loss)

    def snap(it):
        return Snapshot(it, NetworkParams.from_flat(flat.copy(), m, d_aug),
                        _loss_flat(flat, X, y, act))

    snapshots: list[Snapshot] = []
    stride = cfg.record_stride

    def record(s: Snapshot):
        nonlocal stride, snapshots
        snapshots.append(s)
        if len(snapshots) > cfg.record_budget:
            stride *= 2
            snapshots = [t for t in snapshots if t.iter % stride == 0]

    first = snap(0)
    record(first)
    if not theta0.all_finite() or not np.isfinite(first.loss):
        return Trajectory([first], first, StopReason.DIVERGENCE, m, d_aug)
    if first.loss <= cfg.stop_loss:
        return Trajectory(snapshots, first, StopReason.LOSS_THRESHOLD, m, d_aug)

    it = 0
    while True:
        next_rec = (it // stride + 1) * stride
        steps = min(next_rec, cfg.max_iters, it + _CHUNK_CAP) - it
        done, status = run_chunk(steps)
        it += done
        if status == _kernels.DIVERGED:
            terminal = snap(it)
            if snapshots[-1].iter < it and it % stride == 0:
                record(terminal)
            return Trajectory(snapshots, terminal, StopReason.DIVERGENCE, m, d_aug)
        if status == _kernels.HIT_STOP:
            terminal = snap(it)
            if snapshots[-1].iter < it and it % stride == 0:
                record(terminal)
            return Trajectory(snapshots, terminal, StopReason.LOSS_THRESHOLD, m, d_aug)
        if it >= cfg.max_iters:
            terminal = snap(it)
            if snapshots[-1].iter < it and it % stride == 0:
                record(terminal)
            return Trajectory(snapshots, terminal, StopReason.MAX_ITERS, m, d_aug)
        if it % stride == 0:
            record(snap(it))

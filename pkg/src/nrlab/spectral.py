"""Small-initialization escape machinery.

Everything here revolves around the data vector gamma = sum_i y_i x_i and the
per-neuron scales C_i = a_i ||gamma|| + w_i . gamma: the Hessian of the
negated loss at the origin is block diagonal with top eigenvalue ||gamma||
(one top direction per neuron), C_i is the projection of neuron i onto that
direction, and an initialization scaled by alpha lags a unit one by
log(1/alpha)/||gamma|| time units. This module computes those quantities,
the linearized early dynamics, ratio-targeted rescaling of initializations,
and time-shift alignment of recorded trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import Trajectory
from .errors import AssumptionViolationError, InfeasibleRescaleError, InvalidInputError
from .geometry import param_distance
from .model import ActivationSpec, Dataset, NetworkParams


@dataclass(frozen=True)
class GammaVector:
    gamma: np.ndarray
    norm: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)
        g.flags.writeable = False


@dataclass(frozen=True)
class NeuronScales:
    """Per-neuron escape scales C_i; ratio fields are populated for m = 2.

    c_tilde = min(|c|, |1/c|) with c = C_1/C_2, and 0 when either C vanishes,
    so it always lands in [0, 1].
    """

    c_vec: np.ndarray
    ratio_c: Optional[float]
    c_tilde: Optional[float]

    def __post_init__(self):
        c = np.asarray(self.c_vec, dtype=float)
        object.__setattr__(self, "c_vec", c)
        c.flags.writeable = False


@dataclass(frozen=True)
class HessianSpectrum:
    mu1: float
    mu2: float
    top_eigenspace_dim: int
    rate_exponent: float


def compute_gamma(data: Dataset) -> GammaVector:
    """gamma = sum_i y_i x_i over augmented inputs; must be nonzero."""
    g = data.y @ data.x_aug
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise AssumptionViolationError(
            "gamma = sum y_i x_i vanishes; the origin has no escape direction")
    return GammaVector(gamma=g, norm=norm)


def neuron_scales(theta: NetworkParams, g: GammaVector) -> NeuronScales:
    """C_i = a_i ||gamma|| + w_i . gamma for each neuron."""
    if theta.d_aug != g.gamma.shape[0]:
        raise InvalidInputError(
            f"parameter d_aug={theta.d_aug} does not match gamma dimension {g.gamma.shape[0]}")
    c = theta.a * g.norm + theta.w @ g.gamma
    ratio_c = None
    c_tilde = None
    if theta.m == 2:
        if c[0] == 0.0 or c[1] == 0.0:
            c_tilde = 0.0
            ratio_c = float(c[0] / c[1]) if c[1] != 0.0 else None
        else:
            ratio_c = float(c[0] / c[1])
            c_tilde = float(min(abs(ratio_c), abs(1.0 / ratio_c)))
    return NeuronScales(c_vec=c, ratio_c=ratio_c, c_tilde=c_tilde)


# ---------------------------------------------------------------------------
# Hessian at the origin
# ---------------------------------------------------------------------------

def hessian_at_origin(data: Dataset, act: ActivationSpec, m: int
                      ) -> tuple[HessianSpectrum, np.ndarray]:
    """Closed-form Hessian of the negated loss at theta = 0 and its spectrum.

    The matrix is block diagonal, one (d_aug+1)-square block per neuron:

        D = sigma'(0) * [[0, gamma^T], [gamma, 0]]

    with top eigenvalue |sigma'(0)| * ||gamma||, eigenvector proportional to
    (||gamma||, sign(sigma'(0)) * gamma), eigenvalue 0 with multiplicity
    d_aug - 1, and bottom eigenvalue -|sigma'(0)| * ||gamma||.
    """
    if not act.admissible_thm1:
        raise InvalidInputError(
            f"activation {act.name!r} is not admissible (needs sigma(0)=0, sigma'(0)!=0)")
    if m < 1:
        raise InvalidInputError("width m must be at least 1")
    g = compute_gamma(data)
    s0 = float(act.d1(np.asarray(0.0)))
    d_aug = data.d_aug
    blk = d_aug + 1
    block = np.zeros((blk, blk))
    block[0, 1:] = s0 * g.gamma
    block[1:, 0] = s0 * g.gamma
    full = np.kron(np.eye(m), block)

    mu1 = abs(s0) * g.norm
    mu2 = 0.0 if d_aug >= 2 else -mu1
    spectrum = HessianSpectrum(
        mu1=mu1, mu2=mu2, top_eigenspace_dim=m,
        rate_exponent=(mu1 - mu2) / (2 * mu1 - mu2))
    return spectrum, full


def top_eigenvector_block(g: GammaVector, d1_at_zero: float = 1.0) -> np.ndarray:
    """Unit top eigenvector of one origin-Hessian block, layout (a, w)."""
    v = np.concatenate([[g.norm], math.copysign(1.0, d1_at_zero) * g.gamma])
    return v / np.linalg.norm(v)


def finite_diff_hessian(theta: NetworkParams, data: Dataset, act: ActivationSpec,
                        step: float = 1e-4) -> np.ndarray:
    """Second-order central-difference Hessian of the loss (test oracle)."""
    from .dynamics import loss  # local import to keep module deps one-way

    flat = theta.flatten()
    p = flat.shape[0]

    def at(v):
        return loss(NetworkParams.from_flat(v, theta.m, theta.d_aug), data, act)

    H = np.empty((p, p))
    l0 = at(flat)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = step
        H[i, i] = (at(flat + ei) - 2 * l0 + at(flat - ei)) / step**2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = step
            H[i, j] = (at(flat + ei + ej) - at(flat + ei - ej)
                       - at(flat - ei + ej) + at(flat - ei - ej)) / (4 * step**2)
            H[j, i] = H[i, j]
    return H


def jacobi_eigenvalues(A: np.ndarray, tol: float = 1e-12,
                       max_sweeps: int = 64) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Deliberately independent of the closed-form spectrum; used only as a
    verification oracle.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, atol=1e-12):
        raise InvalidInputError("jacobi_eigenvalues needs a symmetric square matrix")
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off <= tol * max(1.0, np.linalg.norm(np.diag(A))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp = c * A[:, p] - s * A[:, q]
                rq = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rp, rq
                rp = c * A[p, :] - s * A[q, :]
                rq = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rp, rq
    return np.sort(np.diag(A))[::-1]


# ---------------------------------------------------------------------------
# Time shift, linearized dynamics, rescaling
# ---------------------------------------------------------------------------

def time_shift(alpha: float, g: GammaVector) -> float:
    """Delay log(1/alpha)/||gamma|| compensating an initialization scaled by alpha."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    return math.log(1.0 / alpha) / g.norm


def linearized_params(scales: NeuronScales, g: GammaVector, t: float) -> NetworkParams:
    """Early-phase linearized parameters at time t:

        a_i(t) = C_i e^{||gamma|| t} / (2 ||gamma||)
        w_i(t) = C_i gamma e^{||gamma|| t} / (2 ||gamma||^2)
    """
    growth = np.exp(g.norm * t)
    a = scales.c_vec * growth / (2.0 * g.norm)
    w = np.outer(scales.c_vec, g.gamma) * growth / (2.0 * g.norm**2)
    return NetworkParams(a=a, w=w)


def rescale_to_ratio(theta: NetworkParams, g: GammaVector,
                     target_ratios: np.ndarray) -> NetworkParams:
    """Scale each neuron block so C_k / C_1 hits target_ratios[k] exactly.

    Neuron 1 is left untouched (target_ratios[0] must be 1). Because C is
    linear in the block, the per-neuron factor is s_k = r_k C_1 / C_k; a zero
    C_k with a nonzero target is infeasible.
    """
    ratios = np.asarray(target_ratios, dtype=float)
    if ratios.shape != (theta.m,):
        raise InvalidInputError(
            f"need one target ratio per neuron, got {ratios.shape} for m={theta.m}")
    if ratios[0] != 1.0:
        raise InvalidInputError("target_ratios[0] must be 1 (neuron 1 is the reference)")
    c = neuron_scales(theta, g).c_vec
    if c[0] == 0.0:
        raise InfeasibleRescaleError("C_1(theta) = 0; cannot anchor ratios to neuron 1")
    s = np.empty(theta.m)
    for k in range(theta.m):
        if c[k] == 0.0:
            if ratios[k] != 0.0:
                raise InfeasibleRescaleError(
                    f"C_{k + 1}(theta) = 0 but target ratio {ratios[k]} is nonzero")
            s[k] = 1.0
        else:
            s[k] = ratios[k] * c[0] / c[k]
    out = NetworkParams(a=theta.a * s, w=theta.w * s[:, None])
    achieved = neuron_scales(out, g).c_vec / neuron_scales(out, g).c_vec[0]
    bad = np.abs(achieved - ratios) > 1e-12 * np.maximum(1.0, np.abs(ratios))
    if np.any(bad):
        raise InfeasibleRescaleError(
            f"achieved ratios {achieved} miss targets {ratios}")
    return out


def effective_alpha(theta: NetworkParams, g: GammaVector) -> float:
    """Scale of theta's projection onto the top eigenspace of the origin Hessian.

    ||C(theta)|| / (sqrt(2) ||gamma||); proportional to alpha for theta =
    alpha * v, and the quantity the time-shift alignment actually depends on,
    which makes runs with different random draws comparable.
    """
    c = neuron_scales(theta, g).c_vec
    return float(np.linalg.norm(c) / (math.sqrt(2.0) * g.norm))


# ---------------------------------------------------------------------------
# Trajectory alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentReport:
    shift_iters: int
    sup_distance: float
    overlap_len: int
    sup_loss_rel_gap: float


def steps_per_log_scale(eta: float, gamma_norm: float) -> float:
    """GD iterations needed to grow the top mode by a factor e.

    Forward Euler multiplies the escaping mode by (1 + eta*||gamma||) per
    step, so the discrete analogue of 1/(||gamma||*eta) is
    1/log(1 + eta*||gamma||); the two agree as eta -> 0 but differ by a few
    percent at practical learning rates, which is far more than the
    alignment tolerances.
    """
    return 1.0 / math.log1p(eta * gamma_norm)


def _interp_rows(iters: np.ndarray, mat: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Linear interpolation of matrix rows indexed by iters at query points."""
    idx = np.searchsorted(iters, at, side="right") - 1
    idx = np.clip(idx, 0, len(iters) - 2)
    t0 = iters[idx].astype(float)
    t1 = iters[idx + 1].astype(float)
    frac = np.where(t1 > t0, (at - t0) / (t1 - t0), 0.0)
    return mat[idx] + frac[:, None] * (mat[idx + 1] - mat[idx])


def _traj_arrays(t: Trajectory):
    iters = t.iters()
    flats = t.flats()
    losses = t.losses()
    if t.terminal.iter > iters[-1]:
        iters = np.append(iters, t.terminal.iter)
        flats = np.vstack([flats, t.terminal.theta.flatten()])
        losses = np.append(losses, t.terminal.loss)
    return iters, flats, losses


def align_trajectories(tA: Trajectory, tB: Trajectory, alphaA: float, alphaB: float,
                       g: GammaVector, eta: float) -> AlignmentReport:
    """Time-shift run B onto run A's iteration clock and compare on the overlap.

    B's iteration j corresponds to A's clock at j + shift with
    shift = (log(1/alphaA) - log(1/alphaB)) * steps_per_log_scale(eta, ||gamma||).
    The sup of the symmetry-reduced parameter distance is taken over A's
    snapshots inside the overlap window, with B linearly interpolated at the
    (generally fractional) matching iterations.
    """
    if not (alphaA > 0 and alphaB > 0):
        raise InvalidInputError("alignment scales must be positive")
    if tA.m != tB.m or tA.d_aug != tB.d_aug:
        raise InvalidInputError("trajectories have mismatched parameter shapes")
    shift = (math.log(1.0 / alphaA) - math.log(1.0 / alphaB)) \
        * steps_per_log_scale(eta, g.norm)

    itA, flA, loA = _traj_arrays(tA)
    itB, flB, loB = _traj_arrays(tB)
    lo = max(itA[0], itB[0] + shift)
    hi = min(itA[-1], itB[-1] + shift)
    sel = (itA >= lo) & (itA <= hi)
    if hi < lo or not np.any(sel):
        raise InvalidInputError("aligned trajectories have no overlap window")

    at_a = itA[sel].astype(float)
    pa = flA[sel]
    pb = _interp_rows(itB, flB, at_a - shift)
    la = loA[sel]
    lb = np.interp(at_a - shift, itB.astype(float), loB)

    sup_d = 0.0
    for i in range(pa.shape[0]):
        d = param_distance(pa[i], pb[i], tA.m, tA.d_aug)
        if d > sup_d:
            sup_d = d
    denom = np.maximum(np.maximum(la, lb), 1e-300)
    sup_gap = float(np.max(np.abs(la - lb) / denom))
    return AlignmentReport(shift_iters=int(round(shift)), sup_distance=float(sup_d),
                           overlap_len=int(pa.shape[0]), sup_loss_rel_gap=sup_gap)


def fit_power_law(alphas: np.ndarray, distances: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log(distance) against log(alpha)."""
    alphas = np.asarray(alphas, dtype=float)
    distances = np.asarray(distances, dtype=float)
    keep = (alphas > 0) & (distances > 0)
    if keep.sum() < 2:
        raise InvalidInputError("need at least two positive points for a power-law fit")
    slope, intercept = np.polyfit(np.log(alphas[keep]), np.log(distances[keep]), 1)
    return float(slope), float(intercept)

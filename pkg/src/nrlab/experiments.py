"""Deterministic seeded experiment sweeps.

Each run_* function reproduces one family of figure-level experiments as a
flat list of result rows: initialization-scale grids, imbalance-ratio phase
sweeps, time-shift alignment studies, width scaling, and the d=3
high-dimensional variant. Cells are independent and executed on a thread
pool (the compiled training kernel releases the GIL); results are assembled
in grid order regardless of scheduling, so a sweep re-run with the same
config is reproducible byte for byte.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry, spectral
from .dynamics import StopReason, TrainConfig, Trajectory, train
from .errors import ConfigError
from .geometry import BranchLabel, EvalPlan
from .model import (Dataset, NetworkParams, SamplingPlan, TargetSpec,
                    forward_many, get_activation, make_dataset,
                    target_eval_many)
from .rng import RngStream, INIT_STREAM


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelCfg:
    m: int = 2
    d: int = 1
    bias: bool = True
    activation: str = "tanh"

    @property
    def d_aug(self) -> int:
        return self.d + 1 if self.bias else self.d


@dataclass(frozen=True)
class TargetCfg:
    a0: float = 1.0
    w: tuple = (1.0,)
    b: float = 1.0

    def to_spec(self, model: ModelCfg) -> TargetSpec:
        act = get_activation(model.activation)
        w0 = list(self.w) + ([self.b] if model.bias else [])
        return TargetSpec(a0=self.a0, w0=np.array(w0, dtype=float), activation=act)


@dataclass(frozen=True)
class SamplingCfg:
    kind: str = "even"      # even | gaussian | cube
    lo: float = -2.0
    hi: float = 2.0


@dataclass(frozen=True)
class InitCfg:
    scale: float = 1e-8
    seeds: tuple = (0,)
    ratio_override: Optional[tuple] = None


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    kind: str               # scale_sweep | ratio_sweep | alignment | width_study
    model: ModelCfg = ModelCfg()
    target: TargetCfg = TargetCfg()
    sampling: SamplingCfg = SamplingCfg()
    init: InitCfg = InitCfg()
    train: TrainConfig = TrainConfig(learning_rate=0.5, max_iters=200_000)
    eval_plan: EvalPlan = EvalPlan(kind="grid_1d")
    recovery_threshold: float = 1e-8
    classify_tol: float = 1e-3
    n_values: tuple = (6,)
    scales: tuple = ()          # scale_sweep, alignment
    c_grid_points: int = 41     # ratio_sweep
    widths: tuple = ()          # width_study
    paper_scale: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("scale_sweep", "ratio_sweep", "alignment", "width_study"):
            raise ConfigError(f"experiment {self.id!r}: unknown kind {self.kind!r}")
        if not self.init.seeds:
            raise ConfigError(f"experiment {self.id!r}: seeds must be non-empty")
        if self.kind in ("scale_sweep", "alignment") and not self.scales:
            raise ConfigError(f"experiment {self.id!r}: {self.kind} needs a scales list")
        if self.kind == "width_study" and not self.widths:
            raise ConfigError(f"experiment {self.id!r}: width_study needs a widths list")
        if self.kind == "ratio_sweep" and self.c_grid_points < 2:
            raise ConfigError(f"experiment {self.id!r}: c grid needs at least 2 points")


@dataclass(frozen=True)
class SweepResult:
    """One grid cell of an experiment: config coordinates plus outcomes."""

    config_id: str
    n: int
    seed: int
    scale: float
    c_tilde: Optional[float]
    gen_error: float
    recovered: bool
    stop_reason: str
    final_loss: float
    iters_used: int
    c_grid: Optional[float] = None
    ratio_c: Optional[float] = None
    branch: Optional[str] = None
    q1_dist: Optional[float] = None
    q2_dist: Optional[float] = None
    q2_boundary: Optional[bool] = None

    @property
    def gen_rmse(self) -> float:
        return math.sqrt(self.gen_error)


@dataclass(frozen=True)
class AlignmentRow:
    config_id: str
    scale_ref: float
    seed_ref: int
    scale: float
    seed: int
    alpha_eff: float
    shift_iters: int
    sup_distance: float
    overlap_len: int
    sup_loss_rel_gap: float


@dataclass(frozen=True)
class NeuronRow:
    config_id: str
    width: int
    neuron: int
    c_abs: float
    init_norm: float
    terminal_norm: float


class CellError(Exception):
    """Wraps an exception raised by one sweep cell with its grid coordinates."""

    def __init__(self, cell, cause):
        super().__init__(f"cell {cell}: {cause}")
        self.cell = cell
        self.cause = cause


def init_params(m: int, d_aug: int, scale: float, rng: RngStream) -> NetworkParams:
    """Gaussian init, every coordinate i.i.d. Normal(0, scale^2).

    Draw order is the flat neuron-major layout: a_1, w_1, a_2, w_2, ...
    """
    if not scale > 0:
        raise ConfigError("initialization scale must be positive")
    flat = rng.normals(m * (d_aug + 1)) * scale
    return NetworkParams.from_flat(flat, m, d_aug)


def apply_paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Swap in the full-fidelity override values bundled with a config."""
    if not cfg.paper_scale:
        return cfg
    ov = dict(cfg.paper_scale)
    train_over = {k: ov.pop(k) for k in ("learning_rate", "max_iters", "stop_loss")
                  if k in ov}
    new_train = replace(cfg.train, **train_over) if train_over else cfg.train
    init_over = {}
    if "scale" in ov:
        init_over["scale"] = ov.pop("scale")
    if "seeds" in ov:
        init_over["seeds"] = tuple(ov.pop("seeds"))
    new_init = replace(cfg.init, **init_over) if init_over else cfg.init
    if "widths" in ov:
        ov["widths"] = tuple(ov["widths"])
    return replace(cfg, train=new_train, init=new_init, paper_scale=None, **ov)


# ---------------------------------------------------------------------------
# Shared cell machinery
# ---------------------------------------------------------------------------

def _pmap(fn, items, threads):
    items = list(items)
    if threads is not None and threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _finish_cell(cfg: ExperimentConfig, traj: Trajectory, data: Dataset,
                 theta0: NetworkParams, n: int, seed: int, scale: float,
                 target: TargetSpec, c_grid: Optional[float] = None) -> SweepResult:
    act = get_activation(cfg.model.activation)
    g = spectral.compute_gamma(data)
    scales0 = spectral.neuron_scales(theta0, g)
    gen = geometry.generalization_error(traj.terminal.theta, target, act, cfg.eval_plan)
    branch = q1d = q2d = q2b = None
    if cfg.model.m == 2:
        q1d, q2d, q2b = geometry.branch_distances(
            traj.terminal.theta, target, boundary_tol=cfg.classify_tol)
        if traj.stop_reason is StopReason.DIVERGENCE:
            label = BranchLabel.UNRESOLVED
        else:
            label = geometry.classify(traj.terminal.theta, target, tol=cfg.classify_tol)
        branch = label.value
    return SweepResult(
        config_id=cfg.id, n=n, seed=seed, scale=scale,
        c_tilde=scales0.c_tilde, gen_error=gen,
        recovered=bool(gen < cfg.recovery_threshold),
        stop_reason=traj.stop_reason.value,
        final_loss=traj.terminal.loss, iters_used=traj.terminal.iter,
        c_grid=c_grid, ratio_c=scales0.ratio_c,
        branch=branch, q1_dist=q1d, q2_dist=q2d, q2_boundary=q2b)


def _dataset_for(cfg: ExperimentConfig, n: int, data_seed: int,
                 target: TargetSpec) -> Dataset:
    plan = SamplingPlan(kind=cfg.sampling.kind, n=n, lo=cfg.sampling.lo,
                        hi=cfg.sampling.hi, d=cfg.model.d, seed=data_seed)
    return make_dataset(target, plan, bias_enabled=cfg.model.bias)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def run_scale_sweep(cfg: ExperimentConfig, threads: Optional[int] = None,
                    seed_offset: int = 0) -> tuple[list[SweepResult], list[CellError]]:
    """One trained run per (n, scale, seed) cell, raw Gaussian inits.

    With even spacing the dataset is shared across seeds; with random
    sampling the data seed equals the trial seed (independent stream, so the
    init draw is unaffected).
    """
    target = cfg.target.to_spec(cfg.model)
    act = get_activation(cfg.model.activation)
    datasets = {}
    for n in cfg.n_values:
        for seed in cfg.init.seeds:
            dseed = 0 if cfg.sampling.kind == "even" else seed + seed_offset
            key = (n, dseed)
            if key not in datasets:
                datasets[key] = _dataset_for(cfg, n, dseed, target)

    def cell(key):
        n, scale, seed = key
        try:
            dseed = 0 if cfg.sampling.kind == "even" else seed + seed_offset
            data = datasets[(n, dseed)]
            theta0 = init_params(cfg.model.m, cfg.model.d_aug, scale,
                                 RngStream(seed + seed_offset, INIT_STREAM))
            traj = train(theta0, data, act, cfg.train)
            return _finish_cell(cfg, traj, data, theta0, n, seed, scale, target)
        except Exception as exc:  # noqa: BLE001 - cell faults must not kill the sweep
            return CellError(key, exc)

    keys = [(n, s, seed) for n in cfg.n_values for s in cfg.scales
            for seed in cfg.init.seeds]
    out = _pmap(cell, keys, threads)
    rows = [r for r in out if isinstance(r, SweepResult)]
    errs = [r for r in out if isinstance(r, CellError)]
    return rows, errs


def c_tilde_grid(points: int) -> np.ndarray:
    """Evenly spaced ratio grid on [0, 1] including both exact endpoints."""
    return np.linspace(0.0, 1.0, points)


def _ratio_init(base: NetworkParams, g: spectral.GammaVector, v: float) -> NetworkParams:
    """Initialization with imbalance ratio exactly v in [0, 1].

    The endpoints are realized structurally: v = 1 duplicates neuron 1's
    block bit for bit, v = 0 silences neuron 2; both must hit the
    measure-zero symmetric dynamics exactly, which a generic rescale cannot
    guarantee.
    """
    if v == 1.0:
        return NetworkParams(a=np.array([base.a[0], base.a[0]]),
                             w=np.vstack([base.w[0], base.w[0]]))
    if v == 0.0:
        return NetworkParams(a=np.array([base.a[0], 0.0]),
                             w=np.vstack([base.w[0], np.zeros_like(base.w[0])]))
    return spectral.rescale_to_ratio(base, g, np.array([1.0, 1.0 / v]))


def run_ratio_sweep(cfg: ExperimentConfig, threads: Optional[int] = None,
                    seed_offset: int = 0) -> tuple[list[SweepResult], list[CellError]]:
    """Phase-diagram sweep: (n, data seed, c-tilde grid point) cells.

    For each dataset a single base init is drawn and rescaled per grid point,
    so the grid varies only the imbalance ratio.
    """
    if cfg.model.m != 2:
        raise ConfigError(f"experiment {cfg.id!r}: ratio sweeps need m=2")
    target = cfg.target.to_spec(cfg.model)
    act = get_activation(cfg.model.activation)
    grid = c_tilde_grid(cfg.c_grid_points)

    shared = {}
    for n in cfg.n_values:
        for seed in cfg.init.seeds:
            data = _dataset_for(cfg, n, seed + seed_offset, target)
            g = spectral.compute_gamma(data)
            base = init_params(cfg.model.m, cfg.model.d_aug, cfg.init.scale,
                               RngStream(seed + seed_offset, INIT_STREAM))
            shared[(n, seed)] = (data, g, base)

    def cell(key):
        n, seed, gi = key
        try:
            data, g, base = shared[(n, seed)]
            theta0 = _ratio_init(base, g, float(grid[gi]))
            traj = train(theta0, data, act, cfg.train)
            return _finish_cell(cfg, traj, data, theta0, n, seed, cfg.init.scale,
                                target, c_grid=float(grid[gi]))
        except Exception as exc:  # noqa: BLE001
            return CellError(key, exc)

    keys = [(n, seed, gi) for n in cfg.n_values for seed in cfg.init.seeds
            for gi in range(len(grid))]
    out = _pmap(cell, keys, threads)
    rows = [r for r in out if isinstance(r, SweepResult)]
    errs = [r for r in out if isinstance(r, CellError)]
    return rows, errs


def run_highdim_study(cfg: ExperimentConfig, threads: Optional[int] = None,
                      seed_offset: int = 0) -> tuple[list[SweepResult], list[CellError]]:
    """d=3 phase sweep; identical engine to run_ratio_sweep, cube sampling."""
    if cfg.sampling.kind != "cube":
        raise ConfigError(f"experiment {cfg.id!r}: high-dim study needs cube sampling")
    return run_ratio_sweep(cfg, threads=threads, seed_offset=seed_offset)


def run_alignment_study(cfg: ExperimentConfig, threads: Optional[int] = None,
                        seed_offset: int = 0
                        ) -> tuple[list[AlignmentRow], Optional[dict], list[CellError]]:
    """Train one trial per scale, align everything against the smallest scale.

    Each trial's init is a unit-scale Gaussian draw rescaled to the
    configured per-neuron ratios and then multiplied by its scale, so trials
    sharing a seed are exact scalar multiples of each other. Alignment uses
    the effective scale ||C(theta_0)|| / (sqrt(2)||gamma||), which also makes
    different seeds comparable. Returns the pairwise rows, a power-law fit of
    sup distance against effective scale, and any cell errors.
    """
    target = cfg.target.to_spec(cfg.model)
    act = get_activation(cfg.model.activation)
    n = cfg.n_values[0]
    data = _dataset_for(cfg, n, cfg.init.seeds[0] + seed_offset, target)
    g = spectral.compute_gamma(data)
    ratios = cfg.init.ratio_override
    if ratios is None:
        ratios = (1.0, 2.0)  # imbalance ratio C1/C2 = 0.5
    ratios = np.asarray(ratios, dtype=float)

    seeds = list(cfg.init.seeds)
    if len(seeds) == 1:
        seeds = seeds * len(cfg.scales)
    if len(seeds) != len(cfg.scales):
        raise ConfigError(
            f"experiment {cfg.id!r}: need 1 seed or one per scale "
            f"({len(cfg.scales)} scales, {len(cfg.init.seeds)} seeds)")

    def trial(idx):
        scale, seed = cfg.scales[idx], seeds[idx]
        try:
            base = init_params(cfg.model.m, cfg.model.d_aug, 1.0,
                               RngStream(seed + seed_offset, INIT_STREAM))
            base = spectral.rescale_to_ratio(base, g, ratios)
            theta0 = NetworkParams(a=base.a * scale, w=base.w * scale)
            traj = train(theta0, data, act, cfg.train)
            return (spectral.effective_alpha(theta0, g), traj)
        except Exception as exc:  # noqa: BLE001
            return CellError((scale, seed), exc)

    out = _pmap(trial, range(len(cfg.scales)), threads)
    errs = [r for r in out if isinstance(r, CellError)]
    trials = [(cfg.scales[i], seeds[i], r[0], r[1])
              for i, r in enumerate(out) if not isinstance(r, CellError)]
    if not trials:
        return [], None, errs

    ref = min(trials, key=lambda t: t[0])
    rows = []
    for scale, seed, alpha_eff, traj in trials:
        if (scale, seed) == (ref[0], ref[1]):
            continue
        rep = spectral.align_trajectories(traj, ref[3], alpha_eff, ref[2], g,
                                          cfg.train.learning_rate)
        rows.append(AlignmentRow(
            config_id=cfg.id, scale_ref=ref[0], seed_ref=ref[1],
            scale=scale, seed=seed, alpha_eff=alpha_eff,
            shift_iters=rep.shift_iters, sup_distance=rep.sup_distance,
            overlap_len=rep.overlap_len, sup_loss_rel_gap=rep.sup_loss_rel_gap))

    fit = None
    if len(rows) >= 2:
        spec, _ = spectral.hessian_at_origin(data, act, cfg.model.m)
        slope, intercept = spectral.fit_power_law(
            np.array([r.alpha_eff for r in rows]),
            np.array([r.sup_distance for r in rows]))
        fit = {"config_id": cfg.id, "slope": slope, "intercept": intercept,
               "predicted_exponent": spec.rate_exponent,
               "band_lo": 0.5 * spec.rate_exponent,
               "band_hi": 1.5 * spec.rate_exponent}
    return rows, fit, errs


def run_width_study(cfg: ExperimentConfig, threads: Optional[int] = None,
                    seed_offset: int = 0
                    ) -> tuple[list[SweepResult], list[NeuronRow],
                               list[tuple], list[CellError]]:
    """Train one network per width and report per-neuron growth vs scale C_k.

    Returns (per-width summary rows, per-neuron rows, terminal output-function
    samples as (width, x, f_pred, f_target) tuples, cell errors).
    """
    target = cfg.target.to_spec(cfg.model)
    act = get_activation(cfg.model.activation)
    n = cfg.n_values[0]
    seed = cfg.init.seeds[0]
    data = _dataset_for(cfg, n, seed + seed_offset, target)
    g = spectral.compute_gamma(data)

    def cell(width):
        try:
            theta0 = init_params(width, cfg.model.d_aug, cfg.init.scale,
                                 RngStream(seed + seed_offset, INIT_STREAM))
            traj = train(theta0, data, act, cfg.train)
            return (width, theta0, traj)
        except Exception as exc:  # noqa: BLE001
            return CellError((width,), exc)

    out = _pmap(cell, cfg.widths, threads)
    errs = [r for r in out if isinstance(r, CellError)]
    summaries, neuron_rows, outputs = [], [], []
    xs = np.linspace(cfg.sampling.lo, cfg.sampling.hi, 401)
    x_grid = np.column_stack([xs, np.ones_like(xs)]) if cfg.model.bias \
        else xs.reshape(-1, 1)
    for r in out:
        if isinstance(r, CellError):
            continue
        width, theta0, traj = r
        c0 = np.abs(spectral.neuron_scales(theta0, g).c_vec)
        term = traj.terminal.theta
        gen = geometry.generalization_error(term, target, act, cfg.eval_plan)
        summaries.append(SweepResult(
            config_id=cfg.id, n=n, seed=seed, scale=cfg.init.scale,
            c_tilde=None, gen_error=gen,
            recovered=bool(gen < cfg.recovery_threshold),
            stop_reason=traj.stop_reason.value, final_loss=traj.terminal.loss,
            iters_used=traj.terminal.iter, c_grid=float(width)))
        for k in range(width):
            neuron_rows.append(NeuronRow(
                config_id=cfg.id, width=width, neuron=k, c_abs=float(c0[k]),
                init_norm=float(np.sqrt(theta0.a[k]**2 + theta0.w[k] @ theta0.w[k])),
                terminal_norm=float(np.sqrt(term.a[k]**2 + term.w[k] @ term.w[k]))))
        f_pred = forward_many(term, act, x_grid)
        f_true = target_eval_many(target, x_grid)
        outputs.extend((width, float(x), float(p), float(t))
                       for x, p, t in zip(xs, f_pred, f_true))
    return summaries, neuron_rows, outputs, errs


def argmax_ck_in_top_fraction(neuron_rows: list[NeuronRow], width: int,
                              fraction: float = 0.05) -> bool:
    """Whether the neuron with the largest |C_k| ends among the top fraction
    of neurons by terminal magnitude (at least one neuron is always kept)."""
    rows = [r for r in neuron_rows if r.width == width]
    star = max(rows, key=lambda r: r.c_abs).neuron
    keep = max(1, math.ceil(fraction * len(rows)))
    top = sorted(rows, key=lambda r: -r.terminal_norm)[:keep]
    return any(r.neuron == star for r in top)

"""Training procedures: black-box adaptive solving and Fehlberg training.

Per epoch the batch is planned once from the current parameters: every
example gets one embedded 3(2) attempt at h=1; accepted examples keep the
single RK3 step, rejected ones share a pooled substep count (the minimum
proposed h' across the batch, clipped at h_clip). The resulting computation
graph is frozen for the epoch's L-BFGS call, keeping the objective smooth
within the call.

Black-box mode estimates the error rate from the two hypotheses,
r = |A1 - A2| / h. Fehlberg training replaces the RK2 hypothesis with the
training target: r = |target - A2| / h, so "difficulty" is measured against
ground truth. Everything else is identical, and at generation time (no
targets) the solver always behaves as in black-box mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .errors import NonFiniteError
from .integrators import SolverConfig
from .lorenz import Trajectory
from .optim import LbfgsConfig, LbfgsState, lbfgs_minimize

MODES = ("blackbox", "fehlberg")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "blackbox"
    epochs: int = 50
    solver: SolverConfig = field(default_factory=SolverConfig)
    optimizer: LbfgsConfig = field(default_factory=LbfgsConfig)
    seed: int = 0
    batch_size: int | None = None  # None = full batch

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class BatchPlan:
    """Frozen per-example solver paths for one (mini-)batch.

    ``h_new[i]`` holds the raw (unclipped, unpooled) step proposal of a
    rejected example and NaN for accepted ones; ``substeps[i]`` is 1 for
    accepted examples and the pooled count for rejected ones.
    """

    accepted: np.ndarray  # (B,) bool
    r: np.ndarray  # (B,) error rates
    a1: np.ndarray  # (B, 3) RK2 hypotheses
    a2: np.ndarray  # (B, 3) RK3 hypotheses
    h_new: np.ndarray  # (B,) raw h' proposals (NaN where accepted)
    n_pool: int | None  # pooled substep count (None when nothing was rejected)
    substeps: np.ndarray  # (B,) int

    @property
    def accepted_fraction(self) -> float:
        return float(self.accepted.mean())

    def new_step_stats(self) -> tuple[float, float, float] | None:
        """(mean, min, max) of 1/h' over rejected examples, before rounding."""
        inv = 1.0 / self.h_new[~self.accepted]
        if inv.size == 0:
            return None
        return float(inv.mean()), float(inv.min()), float(inv.max())


@dataclass(frozen=True)
class EpochRecord:
    """Per-epoch monitor: loss, accepted share, new-step statistics."""

    epoch: int
    loss: float
    accepted_fraction: float
    mean_new_steps: float | None
    min_new_steps: float | None
    max_new_steps: float | None


def _batch_hypotheses(
    p: net.MlpParams, inputs: np.ndarray, h: float
) -> tuple[np.ndarray, np.ndarray]:
    """A1 and A2 for every example; arithmetic mirrors the scalar solvers."""
    f1 = net.mlp_forward(p, inputs)
    f2 = net.mlp_forward(p, inputs + h * f1)
    f3 = net.mlp_forward(p, inputs + (h / 4.0) * (f1 + f2))
    a1 = inputs + (h / 2.0) * (f1 + f2)
    a2 = inputs + (h / 6.0) * (f1 + f2 + 4.0 * f3)
    return a1, a2


def _make_plan(r: np.ndarray, a1: np.ndarray, a2: np.ndarray, cfg: SolverConfig) -> BatchPlan:
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise NonFiniteError(f"non-finite error rate at example {bad[0]}")
    accepted = r < cfg.eps
    h_new = np.full(r.shape, np.nan)
    n_pool = None
    substeps = np.ones(r.shape, dtype=np.int64)
    rejected = ~accepted
    if rejected.any():
        h_new[rejected] = cfg.safety * cfg.h0 * np.sqrt(cfg.eps / r[rejected])
        n_pool = math.ceil(1.0 / max(float(np.nanmin(h_new)), cfg.h_clip))
        substeps[rejected] = n_pool
    return BatchPlan(accepted, r, a1, a2, h_new, n_pool, substeps)


def plan_batch_blackbox(
    p: net.MlpParams, inputs: np.ndarray, cfg: SolverConfig
) -> BatchPlan:
    """Plan with the solver's own error estimate r = |A1 - A2| / h."""
    inputs = np.asarray(inputs, dtype=np.float64)
    a1, a2 = _batch_hypotheses(p, inputs, cfg.h0)
    r = np.linalg.norm(a1 - a2, axis=1) / cfg.h0
    return _make_plan(r, a1, a2, cfg)


def plan_batch_fehlberg(
    p: net.MlpParams, inputs: np.ndarray, targets: np.ndarray, cfg: SolverConfig
) -> BatchPlan:
    """Plan with the target-based error rate r = |target - A2| / h.

    A1 is still computed (and retained for logging) but plays no role in
    the acceptance decision.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    a1, a2 = _batch_hypotheses(p, inputs, cfg.h0)
    r = np.linalg.norm(targets - a2, axis=1) / cfg.h0
    return _make_plan(r, a1, a2, cfg)


def _objective(dims: tuple[int, ...], inputs: np.ndarray, targets: np.ndarray, substeps: np.ndarray):
    def obj(flat: np.ndarray) -> tuple[float, np.ndarray]:
        params = net.unflatten_params(dims, flat)
        try:
            loss, grad = net.loss_and_grad(params, inputs, targets, substeps)
        except NonFiniteError:
            # Overflow at an aggressive line-search trial point: report an
            # infinite loss so the search shrinks its bracket.
            return math.inf, np.zeros_like(flat)
        return loss, net.flatten_gradient(grad)

    return obj


def _batch_slices(n: int, batch_size: int | None) -> list[slice]:
    if batch_size is None or batch_size >= n:
        return [slice(0, n)]
    return [slice(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def train(
    dataset: Trajectory, cfg: TrainConfig
) -> tuple[net.MlpParams, list[EpochRecord]]:
    """Train a fresh network on consecutive-point prediction over ``dataset``.

    Inputs are the points x_0..x_{N-2}, targets their successors; each epoch
    re-plans from the current parameters and runs one L-BFGS call on the
    frozen plan. Returns the final parameters and the per-epoch log.
    """
    if len(dataset) < 2:
        raise ValueError("dataset needs at least 2 points")
    inputs = dataset.points[:-1]
    targets = dataset.points[1:]
    params = net.mlp_init(net.DEFAULT_DIMS, cfg.seed)
    flat = net.flatten_params(params)
    records: list[EpochRecord] = []
    slices = _batch_slices(inputs.shape[0], cfg.batch_size)
    # One optimizer instance spans the whole run: curvature memory persists
    # across epochs (the per-call budget still resets every call).
    opt_state = LbfgsState()

    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        n_accepted = 0
        inv_steps: list[np.ndarray] = []
        try:
            for sl in slices:
                params = net.unflatten_params(net.DEFAULT_DIMS, flat)
                if cfg.mode == "blackbox":
                    plan = plan_batch_blackbox(params, inputs[sl], cfg.solver)
                else:
                    plan = plan_batch_fehlberg(params, inputs[sl], targets[sl], cfg.solver)
                n_accepted += int(plan.accepted.sum())
                inv_steps.append(1.0 / plan.h_new[~plan.accepted])

                obj = _objective(net.DEFAULT_DIMS, inputs[sl], targets[sl], plan.substeps)
                flat, trace = lbfgs_minimize(obj, flat, cfg.optimizer, state=opt_state)
                epoch_loss += trace.losses[-1]
        except (NonFiniteError, FloatingPointError) as exc:
            raise NonFiniteError(f"epoch {epoch}: {exc}") from exc
        if not math.isfinite(epoch_loss):
            raise NonFiniteError(f"epoch {epoch}: non-finite training loss")

        inv = np.concatenate(inv_steps) if inv_steps else np.empty(0)
        if inv.size:
            stats = (float(inv.mean()), float(inv.min()), float(inv.max()))
        else:
            stats = (None, None, None)
        records.append(
            EpochRecord(epoch, epoch_loss, n_accepted / inputs.shape[0], *stats)
        )

    return net.unflatten_params(net.DEFAULT_DIMS, flat), records


LOG_HEADER = "epoch,loss,accepted_fraction,mean_new_steps,min_new_steps,max_new_steps"


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_training_log(records: list[EpochRecord], path: str | Path) -> None:
    """Write the per-epoch log CSV (empty step fields when nothing was rejected)."""
    lines = [LOG_HEADER]
    for rec in records:
        lines.append(
            f"{rec.epoch},{_fmt(rec.loss)},{_fmt(rec.accepted_fraction)},"
            f"{_fmt(rec.mean_new_steps)},{_fmt(rec.min_new_steps)},{_fmt(rec.max_new_steps)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")

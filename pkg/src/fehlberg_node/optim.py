"""Batch L-BFGS with a strong-Wolfe line search.

Operates on flat float64 parameter vectors; the objective is a callable
``x -> (loss, grad)``. One call performs one optimization step in the batch
training sense: up to ``max_iter`` quasi-Newton iterations sharing a budget
of ``max_eval`` objective evaluations, with curvature memory local to the
call (the training loop re-plans its objective between calls, so stale
pairs are never carried across objectives).

The line search brackets and zooms with cubic interpolation and treats
non-finite trial values as "step too long", so transient overflow at an
aggressive trial point shrinks the bracket instead of aborting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsConfig:
    """Optimizer settings (defaults match full-batch training use)."""

    lr: float = 1.0  # first-iteration trial step
    max_iter: int = 20  # quasi-Newton iterations per call
    max_eval: int = 25  # objective evaluations per call
    tol_grad: float = 1e-5  # stop when ||g||_inf falls below
    tol_change: float = 1e-9  # stop when |f_k - f_{k+1}| falls below
    history: int = 100  # stored curvature pairs
    c1: float = 1e-4  # sufficient-decrease constant
    c2: float = 0.9  # curvature constant

    def __post_init__(self) -> None:
        if min(self.lr, self.tol_grad, self.tol_change) <= 0:
            raise ValueError("lr and tolerances must be positive")
        if self.max_iter < 1 or self.max_eval < 1 or self.history < 1:
            raise ValueError("max_iter, max_eval and history must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class LbfgsState:
    """Internal working state of one minimize call."""

    s_list: list[np.ndarray] = field(default_factory=list)
    y_list: list[np.ndarray] = field(default_factory=list)
    rho_list: list[float] = field(default_factory=list)
    gamma: float = 1.0
    n_evals: int = 0

    def push_pair(self, s: np.ndarray, y: np.ndarray, history: int) -> bool:
        sy = float(s @ y)
        if sy <= 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            return False  # curvature condition violated; skip the pair
        if len(self.s_list) == history:
            self.s_list.pop(0)
            self.y_list.pop(0)
            self.rho_list.pop(0)
        self.s_list.append(s)
        self.y_list.append(y)
        self.rho_list.append(1.0 / sy)
        self.gamma = sy / float(y @ y)
        return True


@dataclass(frozen=True)
class StepRecord:
    """One accepted line-search step, with the data the Wolfe conditions need."""

    f_before: float
    gtd_before: float  # directional derivative at the start of the search
    step: float
    f_after: float
    gtd_after: float  # directional derivative at the accepted point


@dataclass
class LbfgsTrace:
    """Per-call log: loss after each accepted iteration plus step records."""

    losses: list[float] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    ls_failed: bool = False
    n_evals: int = 0


def _two_loop(g: np.ndarray, state: LbfgsState) -> np.ndarray:
    q = g.copy()
    alphas: list[float] = []
    for s, y, rho in zip(reversed(state.s_list), reversed(state.y_list), reversed(state.rho_list)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    q *= state.gamma
    for (s, y, rho), a in zip(
        zip(state.s_list, state.y_list, state.rho_list), reversed(alphas)
    ):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(
    x1: float, f1: float, g1: float, x2: float, f2: float, g2: float, lo: float, hi: float
) -> float:
    """Minimizer of the cubic Hermite interpolant, clamped to [lo, hi]."""
    if lo > hi:
        lo, hi = hi, lo
    if all(map(math.isfinite, (f1, g1, f2, g2))) and x1 != x2:
        d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
        sq = d1 * d1 - g1 * g2
        if sq >= 0.0:
            d2 = math.sqrt(sq)
            if x1 <= x2:
                t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
            else:
                t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
            if math.isfinite(t):
                return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def _strong_wolfe(
    evaluate: Callable[[float], tuple[float, np.ndarray, float]],
    t: float,
    f0: float,
    g0: np.ndarray,
    gtd0: float,
    d_norm: float,
    cfg: LbfgsConfig,
    budget: int,
):
    """Find a step satisfying the strong Wolfe conditions.

    ``evaluate(t)`` returns (f, g, gtd) at step ``t``. Returns
    (t, f, g, gtd, evals_used, ok); on failure the best bracketed point is
    returned with ok=False (t may be 0, meaning "do not move").
    """
    c1, c2 = cfg.c1, cfg.c2
    evals = 0

    def armijo_fail(f_t: float, t_val: float) -> bool:
        return not math.isfinite(f_t) or f_t > f0 + c1 * t_val * gtd0

    # Bracketing phase.
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    bracket = None  # ((t, f, g, gtd) low-f side, (t, f, g, gtd) other side)
    while evals < budget:
        f_new, g_new, gtd_new = evaluate(t)
        evals += 1
        if armijo_fail(f_new, t) or (evals > 1 and f_new >= f_prev):
            bracket = ((t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new))
            break
        if abs(gtd_new) <= -c2 * gtd0:
            return t, f_new, g_new, gtd_new, evals, True
        if gtd_new >= 0:
            bracket = ((t, f_new, g_new, gtd_new), (t_prev, f_prev, g_prev, gtd_prev))
            break
        # Still descending: expand.
        lo_t = t + 0.01 * (t - t_prev)
        hi_t = 10.0 * t
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, lo_t, hi_t)
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = t_next
    else:
        return _best_of(f0, g0, (t_prev, f_prev, g_prev, gtd_prev)) + (evals, False)
    # Zoom phase; keep the lower-f endpoint in ``lo``.
    lo, hi = bracket
    if math.isfinite(hi[1]) and hi[1] < lo[1]:
        lo, hi = hi, lo
    insufficient = False
    while evals < budget:
        span = abs(hi[0] - lo[0])
        if span * d_norm < cfg.tol_change:
            break
        margin = 0.1 * span
        t_min, t_max = min(lo[0], hi[0]), max(lo[0], hi[0])
        wild = not math.isfinite(hi[1]) or hi[1] - lo[1] > 1e3 * (
            abs(lo[3]) * span + abs(lo[1]) + 1.0
        )
        if wild:
            # Overflowed or absurdly large endpoint: interpolation through it
            # is meaningless, so shrink geometrically toward the good end.
            t = lo[0] + 0.1 * (hi[0] - lo[0])
        else:
            t = _cubic_min(lo[0], lo[1], lo[3], hi[0], hi[1], hi[3], t_min, t_max)
            # Force measurable progress into the interior of the bracket.
            if min(t_max - t, t - t_min) < margin:
                if insufficient or t <= t_min or t >= t_max:
                    t = t_max - margin if abs(t - t_max) < abs(t - t_min) else t_min + margin
                    insufficient = False
                else:
                    insufficient = True
            else:
                insufficient = False
        f_new, g_new, gtd_new = evaluate(t)
        evals += 1
        if armijo_fail(f_new, t) or f_new >= lo[1]:
            hi = (t, f_new, g_new, gtd_new)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                return t, f_new, g_new, gtd_new, evals, True
            if gtd_new * (hi[0] - lo[0]) >= 0:
                hi = lo
            lo = (t, f_new, g_new, gtd_new)
    return _best_of(f0, g0, lo) + (evals, False)


def _best_of(f0: float, g0: np.ndarray, cand: tuple):
    t, f, g, gtd = cand
    if t > 0 and math.isfinite(f) and f < f0:
        return t, f, g, gtd
    return 0.0, f0, g0, 0.0


def lbfgs_minimize(
    objective: Objective,
    x0: np.ndarray,
    cfg: LbfgsConfig = LbfgsConfig(),
    state: LbfgsState | None = None,
) -> tuple[np.ndarray, LbfgsTrace]:
    """Run one L-BFGS optimization step (up to ``max_iter`` inner iterations).

    Returns the updated parameter vector and the per-iteration trace. The
    search direction falls back to steepest descent whenever the two-loop
    recursion fails to produce a descent direction. A failed line search
    (no Wolfe point within the evaluation budget) keeps the best point seen
    and sets ``trace.ls_failed``.

    Passing a ``state`` carries curvature memory across calls (standard
    batch-training usage, where one optimizer instance spans many steps);
    the evaluation budget is always per call.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    if not (math.isfinite(f) and np.isfinite(g).all()):
        raise NonFiniteError("objective is non-finite at the starting point")
    if state is None:
        state = LbfgsState()
    state.n_evals = 1
    first_call = not state.s_list
    trace = LbfgsTrace(losses=[f], n_evals=1)

    if float(np.abs(g).max()) <= cfg.tol_grad:
        return x, trace

    for it in range(1, cfg.max_iter + 1):
        if state.n_evals >= cfg.max_eval:
            break
        if it == 1 and first_call:
            d = -g
        else:
            d = _two_loop(g, state)
        gtd = float(g @ d)
        if not math.isfinite(gtd) or gtd >= 0.0:
            d = -g  # non-descent direction from noisy curvature: steepest descent
            gtd = float(g @ d)

        def evaluate(t: float, x=x, d=d) -> tuple[float, np.ndarray, float]:
            f_t, g_t = objective(x + t * d)
            return f_t, g_t, float(g_t @ d)

        d_norm = float(np.abs(d).max())
        t0 = cfg.lr if it == 1 and first_call else 1.0
        t, f_new, g_new, gtd_new, used, ok = _strong_wolfe(
            evaluate, t0, f, g, gtd, d_norm, cfg, cfg.max_eval - state.n_evals
        )
        state.n_evals += used
        trace.n_evals = state.n_evals
        if not ok:
            trace.ls_failed = True
            if t > 0.0:  # best point found still improves the loss: keep it
                x = x + t * d
                trace.losses.append(f_new)
            break

        trace.steps.append(StepRecord(f, gtd, t, f_new, gtd_new))
        s = t * d
        state.push_pair(s, g_new - g, cfg.history)
        x = x + s
        delta_f = f - f_new
        f, g = f_new, g_new
        trace.losses.append(f)
        if float(np.abs(g).max()) <= cfg.tol_grad:
            break
        if abs(delta_f) <= cfg.tol_change:
            break

    return x, trace

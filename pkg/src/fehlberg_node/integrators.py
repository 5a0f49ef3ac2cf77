"""Solvers used on the learned vector field.

The embedded pair evaluates the field three times per attempt:

    f1 = f(x),   f2 = f(x + h*f1),   f3 = f(x + (h/4)*(f1 + f2))

and forms two hypotheses for the next point: the Heun (RK2) update
``A1 = x + (h/2)*(f1 + f2)`` and the RK3 update
``A2 = x + (h/6)*(f1 + f2 + 4*f3)``. Their distance yields the error rate
``r = |A1 - A2| / h`` that drives accept/reject decisions; on rejection the
proposed new step is ``h' = S * h * sqrt(eps / r)`` and the integration is
redone with ``ceil(1/h')`` uniform RK3 substeps over the unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from .lorenz import StatePoint, VectorField


@dataclass(frozen=True)
class SolverConfig:
    """Adaptive-step controller settings for the embedded 3(2) pair."""

    eps: float = 0.1  # error-rate tolerance
    safety: float = 0.9  # S in h' = S*h*sqrt(eps/r)
    h0: float = 1.0  # initial step over the unit inter-sample interval
    h_clip: float = 0.1  # lower clip on h', i.e. at most 10 substeps
    norm: str = "euclidean"

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must be in (0, 1]")
        if self.h0 != 1.0:
            raise ValueError("the initial step over the unit interval is fixed at 1")
        if not 0 < self.h_clip <= 1:
            raise ValueError("h_clip must be in (0, 1]")
        if self.norm != "euclidean":
            raise ValueError("only the euclidean error norm is supported")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one adaptive-step attempt (decision only, no re-integration)."""

    a1: np.ndarray  # RK2 hypothesis
    a2: np.ndarray  # RK3 hypothesis
    r: float  # error rate |A1 - A2| / h
    accepted: bool
    h_new: float | None  # proposed step, present iff rejected
    n_steps: int | None  # ceil(1 / max(h_new, h_clip)), present iff rejected
    evals: tuple[np.ndarray, np.ndarray, np.ndarray]  # f1, f2, f3


def _checked_eval(field: VectorField, x: np.ndarray, label: str) -> np.ndarray:
    f = field(x)
    if not np.isfinite(f).all():
        raise NonFiniteError(f"vector field returned a non-finite value at {label}")
    return f


def rk2_step(field: VectorField, x: StatePoint, h: float) -> np.ndarray:
    """One Heun (RK2) step of size ``h``."""
    if h <= 0:
        raise ValueError("h must be positive")
    f1 = _checked_eval(field, x, "f1")
    f2 = _checked_eval(field, x + h * f1, "f2")
    return x + (h / 2.0) * (f1 + f2)


def rk3_step(field: VectorField, x: StatePoint, h: float) -> np.ndarray:
    """One RK3 step of size ``h`` (three-evaluation Fehlberg scheme)."""
    if h <= 0:
        raise ValueError("h must be positive")
    f1 = _checked_eval(field, x, "f1")
    f2 = _checked_eval(field, x + h * f1, "f2")
    f3 = _checked_eval(field, x + (h / 4.0) * (f1 + f2), "f3")
    return x + (h / 6.0) * (f1 + f2 + 4.0 * f3)


def proposed_step(r: float, h: float, cfg: SolverConfig) -> float:
    """New step ``h' = S * h * sqrt(eps / r)`` after a rejection."""
    return cfg.safety * h * math.sqrt(cfg.eps / r)


def substep_count(h_new: float, cfg: SolverConfig) -> int:
    """Number of uniform substeps over the unit interval: ``ceil(1/h')`` with clip."""
    return math.ceil(1.0 / max(h_new, cfg.h_clip))


def fehlberg_step(field: VectorField, x: StatePoint, cfg: SolverConfig, h: float) -> StepOutcome:
    """One embedded 3(2) attempt: hypotheses, error rate, accept/reject.

    Does not re-integrate on rejection; the caller decides what to do with
    ``n_steps`` (this separation lets batched training pool step proposals
    across examples before re-integrating).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    f1 = _checked_eval(field, x, "f1")
    f2 = _checked_eval(field, x + h * f1, "f2")
    f3 = _checked_eval(field, x + (h / 4.0) * (f1 + f2), "f3")
    a1 = x + (h / 2.0) * (f1 + f2)
    a2 = x + (h / 6.0) * (f1 + f2 + 4.0 * f3)
    r = float(np.linalg.norm(a1 - a2)) / h
    if r < cfg.eps:
        return StepOutcome(a1, a2, r, True, None, None, (f1, f2, f3))
    h_new = proposed_step(r, h, cfg)
    return StepOutcome(a1, a2, r, False, h_new, substep_count(h_new, cfg), (f1, f2, f3))


def integrate_fixed_rk3(field: VectorField, x: StatePoint, n_steps: int) -> np.ndarray:
    """``n_steps`` uniform RK3 substeps of size ``1/n_steps`` over the unit interval."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h = 1.0 / n_steps
    y = x
    for _ in range(n_steps):
        y = rk3_step(field, y, h)
    return y

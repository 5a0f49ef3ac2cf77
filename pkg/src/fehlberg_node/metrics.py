"""Closed-loop generation and the diagnostic series derived from it.

The rollout mirrors inference: each predicted point seeds the next solver
call, always with the black-box adaptive step (one embedded attempt at h=1,
re-integrating with the proposed substep count on rejection). The oracle
MSE compares each generated point against one true-Lorenz integration step
from the previous generated point, giving a strictly local error measure
that chaos cannot inflate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import net
from .errors import NonFiniteError
from .integrators import SolverConfig, fehlberg_step, integrate_fixed_rk3
from .lorenz import (
    DEFAULT_ATOL,
    DEFAULT_DT_PHYS,
    DEFAULT_RTOL,
    LorenzParams,
    StatePoint,
    Trajectory,
    dopri5_integrate,
    lorenz_field,
)

# Time windows used for side-by-side trajectory exports.
REPORT_WINDOWS = ((0, 600), (600, 1200), (2000, 2600))


@dataclass(frozen=True)
class EvalReport:
    """Per-index diagnostics of a generated trajectory of length N.

    ``mse`` has length N; ``oracle_mse`` and ``n_steps`` have length N-1 and
    describe predictions (index i >= 1), since point 0 is the seed.
    """

    trajectory: Trajectory
    mse: np.ndarray
    oracle_mse: np.ndarray
    n_steps: np.ndarray | None


def rollout(
    p: net.MlpParams,
    x0: StatePoint,
    n: int,
    cfg: SolverConfig,
    *,
    dt_phys: float = DEFAULT_DT_PHYS,
) -> tuple[Trajectory, np.ndarray]:
    """Generate ``n`` points closed-loop from ``x0``; returns the trajectory
    (n+1 points including the seed) and the per-prediction substep counts."""
    if n < 0:
        raise ValueError("n must be >= 0")
    field = net.mlp_field(p)
    points = np.empty((n + 1, 3))
    points[0] = np.asarray(x0, dtype=np.float64)
    n_steps = np.ones(n, dtype=np.int64)
    x = points[0]
    for i in range(n):
        try:
            outcome = fehlberg_step(field, x, cfg, cfg.h0)
            if outcome.accepted:
                x = outcome.a2
            else:
                n_steps[i] = outcome.n_steps
                x = integrate_fixed_rk3(field, x, outcome.n_steps)
        except NonFiniteError as exc:
            raise NonFiniteError(f"rollout diverged at step {i + 1}: {exc}") from exc
        if not np.isfinite(x).all():
            raise NonFiniteError(f"rollout diverged at step {i + 1}")
        points[i + 1] = x
    traj = Trajectory(
        points=points,
        dt_phys=dt_phys,
        x0=points[0].copy(),
        gen_meta={
            "generator": "rollout",
            "eps": cfg.eps,
            "safety": cfg.safety,
            "h_clip": cfg.h_clip,
        },
    )
    return traj, n_steps


def mse_series(generated: Trajectory, reference: Trajectory) -> np.ndarray:
    """Per-index squared Euclidean distance between two equal-length trajectories."""
    if len(generated) != len(reference):
        raise ValueError(
            f"length mismatch: generated {len(generated)} vs reference {len(reference)}"
        )
    diff = generated.points - reference.points
    return np.einsum("ij,ij->i", diff, diff)


def oracle_mse_series(
    generated: Trajectory,
    p: LorenzParams,
    dt_phys: float,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> np.ndarray:
    """Squared distance of each point from one true-Lorenz step off its predecessor.

    Entry ``i`` (length N-1) compares ``generated[i+1]`` against the Lorenz
    flow over ``dt_phys`` started at ``generated[i]``.
    """
    pts = generated.points
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points")
    fld = lambda y: lorenz_field(p, y)
    out = np.empty(pts.shape[0] - 1)
    for i in range(1, pts.shape[0]):
        star = dopri5_integrate(fld, pts[i - 1], dt_phys, rtol=rtol, atol=atol)
        diff = pts[i] - star
        out[i - 1] = float(diff @ diff)
    return out


def build_report(
    generated: Trajectory,
    reference: Trajectory,
    lorenz_params: LorenzParams,
    n_steps: np.ndarray | None,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> EvalReport:
    """Assemble the full diagnostic report for a generated trajectory."""
    n = len(generated)
    ref = reference
    if len(ref) != n:
        if len(ref) < n:
            raise ValueError("reference trajectory shorter than generated")
        ref = Trajectory(ref.points[:n], ref.dt_phys, ref.x0, dict(ref.gen_meta))
    mse = mse_series(generated, ref)
    oracle = oracle_mse_series(generated, lorenz_params, generated.dt_phys, rtol=rtol, atol=atol)
    if n_steps is not None:
        n_steps = np.asarray(n_steps, dtype=np.int64)
        if n_steps.shape[0] != n - 1:
            raise ValueError("n_steps length must be len(generated) - 1")
    return EvalReport(generated, mse, oracle, n_steps)


REPORT_HEADER = "i,x1,x2,x3,mse,oracle_mse,n_steps"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """Write ``i,x1,x2,x3,mse,oracle_mse,n_steps``; prediction-only columns are
    empty at i=0."""
    lines = [REPORT_HEADER]
    pts = report.trajectory.points
    for i in range(pts.shape[0]):
        oracle = "" if i == 0 else _fmt(report.oracle_mse[i - 1])
        if report.n_steps is None or i == 0:
            steps = ""
        else:
            steps = str(int(report.n_steps[i - 1]))
        lines.append(
            f"{i},{_fmt(pts[i, 0])},{_fmt(pts[i, 1])},{_fmt(pts[i, 2])},"
            f"{_fmt(report.mse[i])},{oracle},{steps}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_report_windows(report: EvalReport, path: str | Path) -> list[Path]:
    """Write one CSV per report window (skipping windows past the data)."""
    base = Path(path)
    written = []
    n = len(report.trajectory)
    for lo, hi in REPORT_WINDOWS:
        if lo >= n:
            continue
        hi_eff = min(hi, n)
        target = base.with_name(f"{base.stem}_win{lo:04d}_{hi:04d}{base.suffix}")
        lines = [REPORT_HEADER]
        pts = report.trajectory.points
        for i in range(lo, hi_eff):
            oracle = "" if i == 0 else _fmt(report.oracle_mse[i - 1])
            if report.n_steps is None or i == 0:
                steps = ""
            else:
                steps = str(int(report.n_steps[i - 1]))
            lines.append(
                f"{i},{_fmt(pts[i, 0])},{_fmt(pts[i, 1])},{_fmt(pts[i, 2])},"
                f"{_fmt(report.mse[i])},{oracle},{steps}"
            )
        target.write_text("\n".join(lines) + "\n")
        written.append(target)
    return written

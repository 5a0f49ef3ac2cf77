"""Ground-truth Lorenz'63 dynamics and high-accuracy dataset generation.

State points are plain float64 numpy arrays of shape (3,). Datasets are
generated by integrating the Lorenz system with an adaptive Dormand-Prince
5(4) scheme between consecutive samples, so the stored points are accurate
to far below the sampling resolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataFormatError, StepSizeUnderflowError

StatePoint = np.ndarray  # shape (3,), float64
VectorField = Callable[[np.ndarray], np.ndarray]

DEFAULT_DT_PHYS = 0.01
DEFAULT_X0 = (1.0, 1.0, 1.0)
DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10

# Empirical bounding box of the attractor (after transients have decayed).
ATTRACTOR_BOX = ((-30.0, 30.0), (-40.0, 40.0), (-5.0, 60.0))


@dataclass(frozen=True)
class LorenzParams:
    """Parameters of the Lorenz'63 system; defaults give the chaotic regime."""

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and self.rho > 0 and self.beta > 0):
            raise ValueError(f"Lorenz parameters must be positive, got {self}")

    def is_default(self) -> bool:
        return self == LorenzParams()


@dataclass(frozen=True)
class Trajectory:
    """Ordered state sequence plus the metadata needed to reproduce it.

    ``points[i]`` corresponds to solver time ``t_i = i``; ``dt_phys`` is the
    physical (Lorenz-time) interval between consecutive samples.
    """

    points: np.ndarray  # (N, 3) float64
    dt_phys: float
    x0: np.ndarray  # (3,)
    gen_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"trajectory points must be (N>=1, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("trajectory contains non-finite points")
        if self.dt_phys <= 0:
            raise ValueError("dt_phys must be positive")

    def __len__(self) -> int:
        return self.points.shape[0]


def lorenz_field(p: LorenzParams, x: StatePoint) -> np.ndarray:
    """Right-hand side of the Lorenz'63 system at state ``x``."""
    x1, x2, x3 = x
    return np.array(
        [
            p.sigma * (x2 - x1),
            x1 * (p.rho - x3) - x2,
            x1 * x2 - p.beta * x3,
        ]
    )


# Dormand-Prince 5(4) tableau (7 stages, FSAL).
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th-order propagating weights and 4th-order embedded weights.
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_DP_E = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_H_FLOOR = 1e-14  # relative to the requested span


def dopri5_integrate(
    field: VectorField,
    x: StatePoint,
    t_span: float,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> np.ndarray:
    """Propagate ``x`` over ``t_span`` with adaptive Dormand-Prince 5(4).

    Classic step control: a step is accepted when the mixed absolute/relative
    RMS norm of the embedded error estimate is <= 1; the next step is
    ``0.9 * h * err**(-1/5)`` with the growth factor clamped to [0.2, 5].
    """
    if t_span <= 0:
        raise ValueError("t_span must be positive")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")

    y = np.asarray(x, dtype=np.float64).copy()
    t = 0.0
    h = t_span
    h_floor = _H_FLOOR * t_span
    k = [np.zeros(3) for _ in range(7)]
    k1 = field(y)  # FSAL: reused from the previous accepted step

    while True:
        remaining = t_span - t
        if remaining <= h_floor:  # endpoint reached (up to one controller floor)
            break
        if h < h_floor:
            raise StepSizeUnderflowError(
                f"step size underflow at t={t:.6g}/{t_span:.6g} (h={h:.3e})"
            )
        h_step = min(h, remaining)

        k[0] = k1
        for s in range(1, 7):
            acc = y.copy()
            for j, a in enumerate(_DP_A[s]):
                if a != 0.0:
                    acc += (h_step * a) * k[j]
            k[s] = field(acc)
        y_new = acc  # stage 7 input is the 5th-order solution (FSAL)

        err_vec = np.zeros(3)
        for j, e in enumerate(_DP_E):
            if e != 0.0:
                err_vec += e * k[j]
        err_vec *= h_step
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            t += h_step
            y = y_new
            k1 = k[6]
            factor = _MAX_FACTOR if err == 0.0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
            h = h_step * factor
        else:
            h = h_step * max(_MIN_FACTOR, _SAFETY * err ** -0.2)

    return y


def generate_dataset(
    p: LorenzParams,
    x0: StatePoint,
    n: int = 5000,
    dt_phys: float = DEFAULT_DT_PHYS,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Trajectory:
    """Generate an ``n``-point trajectory sampled every ``dt_phys`` time units."""
    if n < 2:
        raise ValueError("a dataset needs at least 2 points")
    if dt_phys <= 0:
        raise ValueError("dt_phys must be positive")

    points = np.empty((n, 3))
    points[0] = np.asarray(x0, dtype=np.float64)
    fld = lambda y: lorenz_field(p, y)
    for i in range(1, n):
        points[i] = dopri5_integrate(fld, points[i - 1], dt_phys, rtol=rtol, atol=atol)

    traj = Trajectory(
        points=points,
        dt_phys=dt_phys,
        x0=points[0].copy(),
        gen_meta={"generator": "dopri5", "rtol": rtol, "atol": atol},
    )
    if p.is_default() and n > 100 and not attractor_bounds_ok(traj):
        warnings.warn("generated trajectory leaves the empirical attractor box", RuntimeWarning)
    return traj


def attractor_bounds_ok(traj: Trajectory, skip: int = 100) -> bool:
    """True when all points after index ``skip`` stay in the attractor box."""
    pts = traj.points[skip:]
    if pts.size == 0:
        return True
    for axis, (lo, hi) in enumerate(ATTRACTOR_BOX):
        if pts[:, axis].min() < lo or pts[:, axis].max() > hi:
            return False
    return True


def _fmt(v: float) -> str:
    # repr() of a Python float is the shortest string that round-trips.
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    """Write a trajectory as ``i,x1,x2,x3`` CSV with ``#`` metadata lines."""
    lines = []
    meta = dict(traj.gen_meta)
    generator = meta.pop("generator", "unknown")
    lines.append(f"# generator={generator}")
    lines.append(f"# dt_phys={_fmt(traj.dt_phys)}")
    lines.append(f"# x0={','.join(_fmt(v) for v in traj.x0)}")
    for key in sorted(meta):
        val = meta[key]
        lines.append(f"# {key}={_fmt(val) if isinstance(val, float) else val}")
    lines.append("i,x1,x2,x3")
    for i, pt in enumerate(traj.points):
        lines.append(f"{i},{_fmt(pt[0])},{_fmt(pt[1])},{_fmt(pt[2])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path: str | Path) -> Trajectory:
    """Parse a trajectory CSV written by :func:`write_trajectory_csv`."""
    path = Path(path)
    meta: dict = {}
    rows: list[list[float]] = []
    header_seen = False
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise DataFormatError(f"{path}:{lineno}: malformed metadata line {raw!r}")
            key, val = body.split("=", 1)
            meta[key.strip()] = val.strip()
            continue
        if not header_seen:
            if line != "i,x1,x2,x3":
                raise DataFormatError(f"{path}:{lineno}: expected header 'i,x1,x2,x3', got {raw!r}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if idx != len(rows):
            raise DataFormatError(f"{path}:{lineno}: index {idx}, expected {len(rows)}")
        rows.append(vals)
    if not header_seen:
        raise DataFormatError(f"{path}: missing 'i,x1,x2,x3' header")
    if len(rows) < 2:
        raise DataFormatError(f"{path}: a dataset needs at least 2 points")

    try:
        dt_phys = float(meta.pop("dt_phys"))
        x0 = np.array([float(v) for v in meta.pop("x0").split(",")])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad or missing dt_phys/x0 metadata: {exc}") from exc
    gen_meta: dict = {"generator": meta.pop("generator", "unknown")}
    for key, val in meta.items():
        try:
            gen_meta[key] = float(val)
        except ValueError:
            gen_meta[key] = val
    return Trajectory(points=np.array(rows), dt_phys=dt_phys, x0=x0, gen_meta=gen_meta)

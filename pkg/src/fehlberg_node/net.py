"""The learnable vector field: a feed-forward ReLU network plus reverse-mode
differentiation through the unrolled RK3 solver graph.

Gradients are computed against an explicitly recorded evaluation tape (the
inputs of every network evaluation inside every solver stage are retained),
not via adjoint equations.

All dense products run through a fixed-chunk matmul kernel so that a state
evaluated alone produces bit-identical output to the same state evaluated
inside any batch. (BLAS results otherwise vary in the last ulp with the
batch dimension, which would break exact accepted-path reproducibility.)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataFormatError, NonFiniteError

DEFAULT_DIMS = (3, 50, 50, 3)
ACTIVATION = "relu"

# Fixed batch-chunk size of the dense kernel; see module docstring.
_CHUNK = 256


@dataclass(frozen=True)
class MlpParams:
    """Immutable parameter set of the network (per layer: weight (out, in), bias)."""

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.dims) < 2:
            raise ValueError("need at least one layer")
        if self.dims[0] != 3 or self.dims[-1] != 3:
            raise ValueError("the field maps R^3 to R^3")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.dims) - 1:
            raise ValueError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ValueError(f"layer {l} shape mismatch: {w.shape}, {b.shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteError(f"layer {l} has non-finite parameters")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class Gradient:
    """Accumulated dL/dtheta, shape-congruent to its MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @staticmethod
    def zeros_like(p: MlpParams) -> "Gradient":
        return Gradient(
            [np.zeros_like(w) for w in p.weights],
            [np.zeros_like(b) for b in p.biases],
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


def mlp_init(dims: tuple[int, ...] = DEFAULT_DIMS, seed: int = 0) -> MlpParams:
    """Initialize weights uniformly in (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.

    Randomness comes from the Philox 4x64 counter-based generator keyed by
    (seed, layer index), so identical seeds reproduce identical parameters
    and layers are independent streams.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ws, bs = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, layer], dtype=np.uint64)))
        bound = 1.0 / math.sqrt(fan_in)
        ws.append(gen.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(tuple(int(d) for d in dims), tuple(ws), tuple(bs))


def flatten_params(p: MlpParams) -> np.ndarray:
    parts = []
    for w, b in zip(p.weights, p.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(dims: tuple[int, ...], vec: np.ndarray) -> MlpParams:
    ws, bs = [], []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(vec[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in).copy())
        pos += fan_out * fan_in
        bs.append(vec[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")
    return MlpParams(tuple(dims), tuple(ws), tuple(bs))


def flatten_gradient(g: Gradient) -> np.ndarray:
    parts = []
    for w, b in zip(g.weights, g.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ w.T + b`` computed in fixed-size row chunks (bit-stable in batch size)."""
    n_rows = x.shape[0]
    out = np.empty((n_rows, w.shape[0]))
    wt = w.T
    for lo in range(0, n_rows, _CHUNK):
        hi = min(lo + _CHUNK, n_rows)
        if hi - lo == _CHUNK:
            np.matmul(x[lo:hi], wt, out=out[lo:hi])
        else:
            buf = np.zeros((_CHUNK, x.shape[1]))
            buf[: hi - lo] = x[lo:hi]
            out[lo:hi] = np.matmul(buf, wt)[: hi - lo]
    out += b
    return out


def _forward_tape(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Batched forward pass; returns output and the activation tape."""
    acts = [x]
    h = x
    last = len(p.weights) - 1
    for l, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = _linear(h, w, b)
        if l != last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, tuple(acts)


def _backward_tape(p: MlpParams, tape: tuple, gy: np.ndarray, grads: Gradient) -> np.ndarray:
    """VJP of one network evaluation; accumulates into ``grads``, returns d/dx."""
    g = gy
    last = len(p.weights) - 1
    for l in range(last, -1, -1):
        a_in = tape[l]
        grads.weights[l] += g.T @ a_in
        grads.biases[l] += g.sum(axis=0)
        g = g @ p.weights[l]
        if l > 0:
            g = g * (a_in > 0)  # ReLU mask (post-activation > 0 <=> preactivation > 0)
    return g


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the field at ``x``; accepts a single state (3,) or a batch (B, 3)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return _forward_tape(p, arr[None, :])[0][0]
    return _forward_tape(p, arr)[0]


def mlp_field(p: MlpParams) -> Callable[[np.ndarray], np.ndarray]:
    """The field closure handed to the solvers in :mod:`.integrators`."""
    return lambda x: mlp_forward(p, x)


def _rk3_substeps_tape(p: MlpParams, x0: np.ndarray, n: int) -> tuple[np.ndarray, list]:
    """Forward through ``n`` uniform RK3 substeps over the unit interval, taping
    every stage. Arithmetic mirrors :func:`integrators.rk3_step` exactly."""
    h = 1.0 / n
    x = x0
    steps = []
    for _ in range(n):
        f1, t1 = _forward_tape(p, x)
        f2, t2 = _forward_tape(p, x + h * f1)
        f3, t3 = _forward_tape(p, x + (h / 4.0) * (f1 + f2))
        x_next = x + (h / 6.0) * (f1 + f2 + 4.0 * f3)
        steps.append((t1, t2, t3))
        x = x_next
    return x, steps


def _rk3_substeps_vjp(p: MlpParams, steps: list, n: int, gx: np.ndarray, grads: Gradient) -> np.ndarray:
    h = 1.0 / n
    for t1, t2, t3 in reversed(steps):
        gf3 = (2.0 * h / 3.0) * gx
        gu3 = _backward_tape(p, t3, gf3, grads)
        gf12 = (h / 6.0) * gx + (h / 4.0) * gu3  # shared by f1 and f2
        gu2 = _backward_tape(p, t2, gf12, grads)
        gf1 = gf12 + h * gu2
        gu1 = _backward_tape(p, t1, gf1, grads)
        gx = gx + gu3 + gu2 + gu1
    return gx


def solve_batch(p: MlpParams, inputs: np.ndarray, substeps: np.ndarray) -> np.ndarray:
    """Predictions for a batch, example ``i`` taking ``substeps[i]`` RK3 substeps.

    Bit-identical to running :func:`integrators.integrate_fixed_rk3` per example
    with the field closure from :func:`mlp_field`.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    counts = np.broadcast_to(np.asarray(substeps, dtype=np.int64), (inputs.shape[0],))
    preds = np.empty_like(inputs)
    for n in np.unique(counts):
        idx = np.flatnonzero(counts == n)
        preds[idx] = _rk3_substeps_tape(p, inputs[idx], int(n))[0]
    return preds


def loss_and_grad(
    p: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    substeps: np.ndarray | int,
) -> tuple[float, Gradient]:
    """Sum-of-squared-errors loss and its exact reverse-mode gradient.

    ``inputs[i]`` is integrated along the planned path (``substeps[i]`` uniform
    RK3 substeps over the unit interval; 1 means a single full step) and
    compared against ``targets[i]``. The loss is the SUM over the batch of
    squared Euclidean errors, matching the training objective's scale.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape != targets.shape or inputs.shape[0] == 0:
        raise ValueError("inputs and targets must be matching non-empty (B, 3) arrays")
    counts = np.broadcast_to(np.asarray(substeps, dtype=np.int64), (inputs.shape[0],))
    if (counts < 1).any():
        raise ValueError("substep counts must be >= 1")

    loss = 0.0
    grads = Gradient.zeros_like(p)
    # Overflow to inf at extreme parameters is detected below, not a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for n in np.unique(counts):
            idx = np.flatnonzero(counts == n)
            pred, steps = _rk3_substeps_tape(p, inputs[idx], int(n))
            res = pred - targets[idx]
            ex_loss = np.einsum("ij,ij->i", res, res)
            bad = np.flatnonzero(~np.isfinite(ex_loss))
            if bad.size:
                raise NonFiniteError(f"non-finite loss at example {idx[bad[0]]}")
            loss += float(ex_loss.sum())
            _rk3_substeps_vjp(p, steps, int(n), 2.0 * res, grads)

    if not grads.is_finite():
        raise NonFiniteError(f"non-finite gradient at example {_first_bad_example(p, inputs, targets, counts)}")
    return loss, grads


def _first_bad_example(p, inputs, targets, counts) -> int:
    # Error path only: isolate the first example whose gradient is non-finite.
    for i in range(inputs.shape[0]):
        try:
            _, g = loss_and_grad(p, inputs[i : i + 1], targets[i : i + 1], counts[i : i + 1])
            if not g.is_finite():
                return i
        except NonFiniteError:
            return i
    return -1


def save_checkpoint(p: MlpParams, path: str | Path) -> None:
    """Serialize parameters as JSON with round-trip float precision."""
    doc = {
        "dims": list(p.dims),
        "activation": ACTIVATION,
        "layers": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in zip(p.weights, p.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> MlpParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: not a readable checkpoint: {exc}") from exc
    try:
        dims = tuple(int(d) for d in doc["dims"])
        if doc["activation"] != ACTIVATION:
            raise DataFormatError(f"{path}: unsupported activation {doc['activation']!r}")
        layers = doc["layers"]
        ws = tuple(np.array(layer["w"], dtype=np.float64) for layer in layers)
        bs = tuple(np.array(layer["b"], dtype=np.float64) for layer in layers)
        return MlpParams(dims, ws, bs)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"{path}: malformed checkpoint: {exc}") from exc

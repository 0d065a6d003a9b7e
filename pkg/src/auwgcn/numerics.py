"""Dense tensor ops with hand-derived reverse-mode gradients, plus Adam.

Every op is a pair of plain functions: a forward that returns its output and
a ``*_backward`` that maps the upstream gradient to input gradients. The model
composes them on a fixed tape, so no general autodiff engine is needed.

Ops preserve the dtype of their inputs. Model storage is float32; tests run
the same ops in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised by :func:`check_finite` when a tensor holds NaN or Inf."""


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return x


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Parameter, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), **kwargs)


# ---------------------------------------------------------------------------
# matmul


ACC = np.float64


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product accumulated in float64, stored back in ``a``'s dtype."""
    if a.dtype == ACC and b.dtype == ACC:
        return a @ b
    return (a.astype(ACC) @ b.astype(ACC)).astype(a.dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _dot(a, b)


def matmul_backward(
    a: np.ndarray, b: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return (dA, dB) = (G Bᵀ, Aᵀ G)."""
    return _dot(grad, b.T), _dot(a.T, grad)


# ---------------------------------------------------------------------------
# elementwise activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient given the sigmoid *output* ``y``."""
    return grad * y * (1 - y)


def softmax(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Softmax over ``axis`` (channels for a C×T tensor), max-subtracted."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, grad: np.ndarray, axis: int = 0) -> np.ndarray:
    """Gradient given the softmax *output* ``y``: y ⊙ (g − Σ g⊙y)."""
    dot = (grad * y).sum(axis=axis, keepdims=True)
    return y * (grad - dot)


# ---------------------------------------------------------------------------
# dilated 1-D convolution, same padding, stride 1


def _check_conv_args(weight: np.ndarray, dilation: int) -> tuple[int, int, int]:
    if weight.ndim != 3:
        raise ValueError(f"conv1d weight must be C_out×C_in×k, got {weight.shape}")
    c_out, c_in, k = weight.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if dilation < 1:
        raise ValueError(f"conv1d dilation must be positive, got {dilation}")
    return c_out, c_in, k


def _im2col(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """(C_in, T) -> (C_in·k, T) with column t holding the dilated neighbourhood of t."""
    c_in, t = x.shape
    pad = (k - 1) * dilation // 2
    xp = np.zeros((c_in, t + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + t] = x
    cols = np.empty((c_in, k, t), dtype=x.dtype)
    for j in range(k):
        cols[:, j, :] = xp[:, j * dilation : j * dilation + t]
    return cols.reshape(c_in * k, t)


def conv1d(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int = 1
) -> np.ndarray:
    """out[c, t] = bias[c] + Σ_{i,j} weight[c, i, j] · x_padded[i, t + j·dilation]."""
    c_out, c_in, k = _check_conv_args(weight, dilation)
    if x.ndim != 2 or x.shape[0] != c_in:
        raise ValueError(f"conv1d input must be {c_in}×T, got {x.shape}")
    cols = _im2col(x, k, dilation)
    return _dot(weight.reshape(c_out, c_in * k), cols) + bias[:, None]


def conv1d_backward(
    x: np.ndarray, weight: np.ndarray, dilation: int, grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (d_input, d_weight, d_bias)."""
    c_out, c_in, k = _check_conv_args(weight, dilation)
    t = x.shape[1]
    cols = _im2col(x, k, dilation)
    dw = _dot(grad, cols.T).reshape(weight.shape)
    db = grad.sum(axis=1, dtype=ACC).astype(grad.dtype)
    dcols = _dot(weight.reshape(c_out, c_in * k).T, grad).reshape(c_in, k, t)
    pad = (k - 1) * dilation // 2
    dxp = np.zeros((c_in, t + 2 * pad), dtype=grad.dtype)
    for j in range(k):
        dxp[:, j * dilation : j * dilation + t] += dcols[:, j, :]
    return dxp[:, pad : pad + t], dw, db


# ---------------------------------------------------------------------------
# optimisation


def adam_step(param: Parameter, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; the gradient is zeroed afterwards."""
    g = param.grad
    state.t += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1 - state.beta2) * (g * g)
    # θ -= lr · m̂ / (√v̂ + ε) with m̂ = m / (1 - β1^t), v̂ = v / (1 - β2^t)
    denom = np.sqrt(state.v / (1 - state.beta2**state.t))
    denom += state.eps
    step = state.m / denom
    step *= lr / (1 - state.beta1**state.t)
    param.value -= step.astype(param.value.dtype, copy=False)
    param.zero_grad()


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class FiniteDiffReport:
    max_error: float
    checked: int
    skipped: int


def finite_diff_report(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    eps: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    signature_fn: Callable[[], bytes] | None = None,
    min_abs_grad: float = 0.0,
    floor: float = 1e-6,
) -> FiniteDiffReport:
    """Compare ``param.grad`` against central differences of ``loss_fn``.

    ``loss_fn`` is re-evaluated with one coordinate of one parameter nudged
    by ±eps at a time; it must read the current parameter values. With
    ``max_coords`` set, that many coordinates are sampled per parameter.

    ``signature_fn`` should describe the piecewise-linear region (e.g. the
    relu on/off pattern); a coordinate whose ±eps probes land in a different
    region than the base point straddles a kink and is skipped. Coordinates
    with ``|grad| < min_abs_grad`` are skipped too.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    worst, checked, skipped = 0.0, 0, 0
    base_sig = signature_fn() if signature_fn is not None else None
    for p in params:
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        idx = np.flatnonzero(np.abs(gflat) >= min_abs_grad) if min_abs_grad > 0 else np.arange(flat.size)
        skipped += flat.size - idx.size
        if max_coords is not None and idx.size > max_coords:
            idx = rng.choice(idx, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            x_up = float(flat[i])
            up = float(loss_fn())
            sig_up = signature_fn() if signature_fn is not None else None
            flat[i] = orig - eps
            x_down = float(flat[i])
            down = float(loss_fn())
            sig_down = signature_fn() if signature_fn is not None else None
            flat[i] = orig
            if base_sig is not None and (sig_up != base_sig or sig_down != base_sig):
                skipped += 1
                continue
            # the realised step differs from 2·eps after float32 rounding
            numeric = (up - down) / (x_up - x_down)
            err = float(relative_error(np.float64(gflat[i]), np.float64(numeric), floor))
            worst = max(worst, err)
            checked += 1
    return FiniteDiffReport(worst, checked, skipped)


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    eps: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    **kwargs,
) -> float:
    """Worst relative error (denominators floored at 1e-6) of analytic vs central-difference gradients.

    See :func:`finite_diff_report` for the keyword options.
    """
    return finite_diff_report(loss_fn, params, eps, max_coords, rng, **kwargs).max_error

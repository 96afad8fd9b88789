"""Tensor primitives used by the model, and a finite-difference gradient checker.

FFT convention: unnormalized forward transform over the last axis, inverse
scaled by ``1/T``, real input with the Hermitian half spectrum of
``T // 2 + 1`` bins.  Every function accepts numpy arrays or torch tensors and
returns the same kind; torch inputs stay on the autograd graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .errors import GradCheckError, InvalidLengthError, ShapeError


def n_bins(T: int) -> int:
    return T // 2 + 1


def rfft(x):
    """Forward real FFT along the last axis."""
    T = x.shape[-1]
    if T < 2:
        raise InvalidLengthError(f"rfft needs at least 2 samples, got {T}")
    if isinstance(x, torch.Tensor):
        if not torch.isfinite(x).all():
            raise ValueError("rfft input contains non-finite values")
        return torch.fft.rfft(x, dim=-1)
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise ValueError("rfft input contains non-finite values")
    return np.fft.rfft(x, axis=-1)


def irfft(X, T: int):
    """Inverse of :func:`rfft` for a signal of length ``T``."""
    if X.shape[-1] != n_bins(T):
        raise InvalidLengthError(
            f"spectrum has {X.shape[-1]} bins, length {T} needs {n_bins(T)}"
        )
    if isinstance(X, torch.Tensor):
        return torch.fft.irfft(X, n=T, dim=-1)
    return np.fft.irfft(np.asarray(X), n=T, axis=-1)


def sigmoid(x):
    if isinstance(x, torch.Tensor):
        return torch.sigmoid(x)
    x = np.asarray(x, dtype=float)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis: int = -1):
    if isinstance(x, torch.Tensor):
        return torch.softmax(x, dim=axis)
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def dense(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ w (+ b)`` with ``w`` stored input-major (d_in, d_out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input dim {x.shape[-1]} vs weight {tuple(w.shape)}")
    y = x @ w
    return y if b is None else y + b


def same_padding(T: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output length and (left, right) padding for TensorFlow-style 'same' conv."""
    out = math.ceil(T / stride)
    total = max((out - 1) * stride + kernel - T, 0)
    return out, total // 2, total - total // 2


def conv1d_same(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None, stride: int) -> torch.Tensor:
    """1-D convolution (cross-correlation) of (B, C_in, T) with w (C_out, C_in, K)."""
    if x.shape[-2] != w.shape[1]:
        raise ShapeError(f"conv1d: {x.shape[-2]} input channels vs weight {tuple(w.shape)}")
    _, left, right = same_padding(x.shape[-1], w.shape[-1], stride)
    return F.conv1d(F.pad(x, (left, right)), w, b, stride=stride)


def lstm_cell(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """One LSTM step with gates packed (input, forget, cell, output), torch layout."""
    gates = x @ w_ih.T + b_ih + h @ w_hh.T + b_hh
    i, f, g, o = gates.chunk(4, dim=-1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return h_new, c_new


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    per_param_err: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def gradcheck(
    f: Callable[[Mapping[str, torch.Tensor]], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float = 1e-6,
    tol: float = 1e-5,
    op_name: str = "f",
) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f(params)`` with central differences.

    ``params`` maps names to float tensors; they are cloned, so callers' tensors
    are left untouched.  Relative error per scalar is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    work = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = f(work)
    if not torch.isfinite(loss):
        raise GradCheckError(f"{op_name}: non-finite loss at the unperturbed point")
    names = list(work)
    grads = torch.autograd.grad(loss, [work[k] for k in names], allow_unused=True)

    per_param: dict[str, float] = {}
    with torch.no_grad():
        for name, g in zip(names, grads):
            p = work[name]
            analytic = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            worst = 0.0
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = f(work).item()
                flat[i] = orig - eps
                f_minus = f(work).item()
                flat[i] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise GradCheckError(
                        f"{op_name}: non-finite loss perturbing {name}[{i}] by ±{eps}"
                    )
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = analytic.view(-1)[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
            per_param[name] = worst
    max_err = max(per_param.values(), default=0.0)
    return GradCheckReport(op_name, max_err, per_param, tol)

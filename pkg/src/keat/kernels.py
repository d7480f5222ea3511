"""Temporal kernels psi(dt) that modulate edge-time features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DomainError

FAMILIES = ("laplacian", "rbf", "mlp", "none")


class MLPKernel:
    """1 -> 16 -> 16 -> 1 network with tanh hidden units and a sigmoid output.

    The input is ``dt / width`` so one initialisation works for any time unit.
    """

    def __init__(self, rng=None, hidden=16, params=None):
        if params is not None:
            self.params = {k: ad.parameter(v, name=f"mlp.{k}") for k, v in params.items()}
            return
        rng = np.random.default_rng(0) if rng is None else rng

        def uni(shape, fan_in):
            b = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-b, b, size=shape)

        init = {
            "W1": uni((1, hidden), 1), "b1": uni((hidden,), 1),
            "W2": uni((hidden, hidden), hidden), "b2": uni((hidden,), hidden),
            "W3": uni((hidden, 1), hidden), "b3": uni((1,), hidden),
        }
        self.params = {k: ad.parameter(v, name=f"mlp.{k}") for k, v in init.items()}

    def parameters(self):
        return list(self.params.values())

    def __call__(self, x):
        """Map an ``(..., 1)`` array/tensor of normalised times to ``(..., 1)``."""
        p = self.params
        h = ad.tanh(ad.matmul(x, p["W1"]) + p["b1"])
        h = ad.tanh(ad.matmul(h, p["W2"]) + p["b2"])
        return ad.sigmoid(ad.matmul(h, p["W3"]) + p["b3"])


@dataclass
class KernelSpec:
    family: str = "laplacian"
    width: float = 1.0
    mlp: MLPKernel | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if self.family != "none" and not (self.width > 0 and math.isfinite(self.width)):
            raise DomainError(f"kernel width must be positive and finite, got {self.width}")
        if self.family == "mlp" and self.mlp is None:
            self.mlp = MLPKernel()

    def parameters(self):
        return self.mlp.parameters() if self.family == "mlp" else []


def kernel_values(k, delta_t):
    """psi over an array of elapsed times.

    Returns a plain ndarray for the closed forms (they carry no parameters)
    and a Tensor for the MLP kernel, shaped like ``delta_t``.
    """
    dt = np.asarray(delta_t, dtype=np.float64)
    if np.any(dt < 0) or not np.isfinite(dt).all():
        raise DomainError("delta_t must be finite and >= 0")
    if k.family == "none":
        return np.ones_like(dt)
    if k.family == "laplacian":
        return np.exp(-dt / k.width)
    if k.family == "rbf":
        return np.exp(-(dt / k.width) ** 2)
    out = k.mlp((dt / k.width).reshape(-1, 1))
    return ad.reshape(out, dt.shape)


def eval_kernel(k, delta_t):
    v = kernel_values(k, np.asarray(float(delta_t)))
    return float(v.data if isinstance(v, ad.Tensor) else v)


def modulate(k, delta_t, edge_time_feat):
    """Scale edge-time features by psi(dt); the last axis is the feature axis.

    Identity kernels return the input object untouched.
    """
    if k is None or k.family == "none":
        return edge_time_feat
    psi = kernel_values(k, delta_t)
    if isinstance(psi, ad.Tensor):
        psi = ad.reshape(psi, psi.shape + (1,))
    else:
        psi = psi[..., None]
    return ad.mul(edge_time_feat, psi)


@dataclass
class DesignReport:
    decreasing: bool          # strictly decreasing over the grid
    non_increasing: bool
    bounded: bool             # every value in [0, 1]
    continuous: bool
    max_jump: float

    @property
    def all_pass(self):
        return self.decreasing and self.bounded and self.continuous


def _values(k, grid):
    v = kernel_values(k, grid)
    return np.asarray(v.data if isinstance(v, ad.Tensor) else v)


def check_design_criteria(k, grid, refine=64):
    """Check decay, [0,1] bounds and continuity of ``k`` on an ascending grid.

    Continuity is judged by refinement: between grid points the largest
    adjacent jump of a continuous kernel roughly halves when the sampling
    density doubles, while a genuine discontinuity keeps its jump.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be ascending with at least 2 points")
    v = _values(k, grid)
    steps = np.diff(v)
    decreasing = bool(np.all(steps < 0))
    non_increasing = bool(np.all(steps <= 0))
    bounded = bool(np.all((v >= 0) & (v <= 1)))

    def max_jump(r):
        fine = np.concatenate([np.linspace(a, b, r, endpoint=False) for a, b in zip(grid[:-1], grid[1:])]
                              + [grid[-1:]])
        return float(np.max(np.abs(np.diff(_values(k, fine)))))

    j1, j2 = max_jump(refine), max_jump(2 * refine)
    continuous = j2 <= 1e-9 or j2 <= 0.6 * j1
    return DesignReport(decreasing, non_increasing, bounded, continuous, j2)

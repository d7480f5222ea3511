"""Sinusoidal time encodings phi(dt) and the cosine moment series."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import DomainError


def ladder(d_t, base):
    """Geometric frequency ladder ``omega_k = base ** (-2k / d_t)``."""
    k = np.arange(d_t // 2)
    return base ** (-2.0 * k / d_t) if d_t else np.zeros(0)


def base_for_span(d_t, span):
    """Ladder base whose slowest period ``2*pi/omega_min`` equals ``span``."""
    if d_t <= 2 or span <= 2 * math.pi:
        return 10000.0 if d_t > 2 else 1.0
    return (span / (2 * math.pi)) ** (d_t / (d_t - 2.0))


class TimeEncoder:
    """Interleaved (cos, sin) encoding of elapsed time.

    ``mode="fixed"`` keeps the frequencies as constants; ``mode="learnable"``
    exposes them as a parameter so gradients reach ``omega``.  ``d_t == 0``
    disables the encoding (empty output).
    """

    def __init__(self, d_t, mode="fixed", base=10000.0, omega=None):
        if d_t < 0 or d_t % 2:
            raise DomainError(f"d_t must be even and non-negative, got {d_t}")
        if mode not in ("fixed", "learnable"):
            raise DomainError(f"unknown time encoding mode {mode!r}")
        self.d_t = int(d_t)
        self.mode = mode
        self.base = float(base)
        w = ladder(d_t, base) if omega is None else np.asarray(omega, dtype=np.float64)
        if w.shape != (d_t // 2,):
            raise DomainError(f"omega must have length {d_t // 2}")
        self.omega = ad.Tensor(w, requires_grad=(mode == "learnable"), name="omega")

    @classmethod
    def for_span(cls, d_t, span, mode="fixed"):
        return cls(d_t, mode, base=base_for_span(d_t, span))

    def parameters(self):
        return [self.omega] if self.mode == "learnable" else []

    def encode(self, delta_t):
        """Encode an array of elapsed times; output shape ``delta_t.shape + (d_t,)``."""
        dt = np.asarray(delta_t, dtype=np.float64)
        if not np.isfinite(dt).all() or np.any(dt < 0):
            raise DomainError("delta_t must be finite and >= 0")
        if self.d_t == 0:
            return ad.Tensor(np.zeros(dt.shape + (0,)))
        m = self.d_t // 2
        arg = ad.mul(dt[..., None], self.omega)                 # (..., m)
        pairs = ad.concat([ad.cos(arg)[..., None], ad.sin(arg)[..., None]], axis=-1)
        return ad.reshape(pairs, dt.shape + (2 * m,))


def encode(enc, delta_t):
    """Encode a single scalar elapsed time into a ``(d_t,)`` vector."""
    if not (math.isfinite(delta_t) and delta_t >= 0):
        raise DomainError(f"delta_t must be finite and >= 0, got {delta_t}")
    return enc.encode(np.asarray(float(delta_t)))


def _series_terms(omega, moments):
    out = []
    for n, m in enumerate(moments):
        if m == 0 or (omega == 0 and n > 0):
            out.append(0.0)
        elif n == 0:
            out.append(float(m))
        else:
            # log space: (2n)! and E[dt^(2n)] overflow separately long before their ratio does
            mag = 2 * n * math.log(abs(omega)) - math.lgamma(2 * n + 1) + math.log(abs(m))
            out.append(math.copysign(math.exp(mag), m))
    return out


def moment_series_cos(omega, moments, method="partial"):
    """Series ``sum_n (-1)^n omega^(2n)/(2n)! * E[dt^(2n)]`` over ``n <= N``.

    ``moments[n]`` holds the even moment ``E[dt^(2n)]``.  ``method="partial"``
    returns the plain truncated sum.  ``method="euler"`` applies the Euler
    transform to the same N+1 terms, which also sums the borderline case where
    the terms stop shrinking (e.g. Exp(1) at omega=1, where the partial sums
    alternate between 1 and 0).
    """
    terms = _series_terms(omega, moments)
    if method == "partial":
        return float(sum((-1) ** n * a for n, a in enumerate(terms)))
    if method != "euler":
        raise DomainError(f"unknown summation method {method!r}")
    total = 0.0
    diff = list(terms)
    for k in range(len(terms)):
        total += (-1) ** k * diff[0] / 2.0 ** (k + 1)
        diff = [b - a for a, b in zip(diff, diff[1:])]
    return total

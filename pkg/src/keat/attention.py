"""Transformer-style temporal attention with optional kernel modulation.

Row-vector convention throughout: a projection ``W x`` of a batch of rows is
computed as ``x @ W.T``.  Every function builds on :func:`attend`, which
handles a padded batch ``(B, K)`` of neighborhoods in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, DomainError, NumericError
from .kernels import kernel_values

MODULATIONS = ("neither", "node", "edge", "both")


@dataclass
class AttentionParams:
    W_q: ad.Tensor
    W_k: ad.Tensor
    W_v: ad.Tensor
    W_e: ad.Tensor
    W_e2: ad.Tensor          # W_e' of the value path
    W_self: ad.Tensor
    d_t: int = 0

    @classmethod
    def init(cls, d, d_prime, d_e, d_t, rng):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        def w(rows, cols, name):
            b = 1.0 / math.sqrt(cols) if cols else 0.0
            return ad.parameter(rng.uniform(-b, b, size=(rows, cols)), name=name)

        de = d_e + d_t
        return cls(w(d_prime, d, "W_q"), w(d_prime, d, "W_k"), w(d_prime, d, "W_v"),
                   w(d_prime, de, "W_e"), w(d_prime, de, "W_e2"), w(d_prime, d, "W_self"), d_t)

    @property
    def d(self):
        return self.W_q.shape[1]

    @property
    def d_prime(self):
        return self.W_q.shape[0]

    @property
    def d_k(self):
        return self.d_prime

    @property
    def d_e(self):
        return self.W_e.shape[1] - self.d_t

    def named(self):
        return {"W_q": self.W_q, "W_k": self.W_k, "W_v": self.W_v,
                "W_e": self.W_e, "W_e2": self.W_e2, "W_self": self.W_self}

    def parameters(self):
        return list(self.named().values())

    def validate(self):
        d, dp, de = self.d, self.d_prime, self.W_e.shape[1]
        expect = {"W_q": (dp, d), "W_k": (dp, d), "W_v": (dp, d),
                  "W_e": (dp, de), "W_e2": (dp, de), "W_self": (dp, d)}
        for name, t in self.named().items():
            if t.shape != expect[name]:
                raise DimensionError(f"{name} has shape {t.shape}, expected {expect[name]}")
            if not np.isfinite(t.data).all():
                raise NumericError(f"{name} has non-finite entries")


@dataclass
class AttentionOutput:
    h_prime: ad.Tensor
    alphas: ad.Tensor
    logits: ad.Tensor
    mask: np.ndarray | None = None


def attend(params, h_center, h_nbrs, edge_feats, delta_ts, mask, encoder,
           kernel=None, modulation="edge"):
    """Batched attention over padded neighborhoods.

    Shapes: ``h_center (B, d)``, ``h_nbrs (B, K, d)``, ``edge_feats (B, K, d_e)``,
    ``delta_ts``/``mask`` ``(B, K)``.  ``kernel=None`` or ``modulation="neither"``
    gives standard attention; ``"edge"`` scales the edge-time feature by psi,
    ``"node"`` scales the projected node terms, ``"both"`` does both.
    """
    if modulation not in MODULATIONS:
        raise DomainError(f"unknown modulation {modulation!r}")
    h_center = ad.as_tensor(h_center)
    h_nbrs = ad.as_tensor(h_nbrs)
    delta_ts = np.asarray(delta_ts, dtype=np.float64)
    B, K = delta_ts.shape
    d, dp = params.d, params.d_prime
    if h_center.shape != (B, d):
        raise DimensionError(f"W_q/W_self expect centers of shape {(B, d)}, got {h_center.shape}")
    if h_nbrs.shape != (B, K, d):
        raise DimensionError(f"W_k/W_v expect neighbors of shape {(B, K, d)}, got {h_nbrs.shape}")
    if encoder.d_t != params.d_t:
        raise DimensionError(f"W_e expects d_t={params.d_t}, encoder gives {encoder.d_t}")
    if np.shape(edge_feats)[-1] != params.d_e:
        raise DimensionError(f"W_e expects d_e={params.d_e}, got edge features {np.shape(edge_feats)}")

    self_term = ad.matmul(h_center, params.W_self.T)
    if K == 0:
        empty = ad.Tensor(np.zeros((B, 0)))
        return AttentionOutput(self_term, empty, empty, np.zeros((B, 0), dtype=bool))

    ebar = ad.concat([ad.as_tensor(edge_feats), encoder.encode(delta_ts)], axis=-1)
    use_kernel = kernel is not None and kernel.family != "none" and modulation != "neither"
    psi = None
    if use_kernel:
        psi = kernel_values(kernel, delta_ts)
        psi = ad.reshape(psi, (B, K, 1)) if isinstance(psi, ad.Tensor) else psi[..., None]
        if modulation in ("edge", "both"):
            ebar = ad.mul(ebar, psi)

    q = ad.matmul(h_center, params.W_q.T)                       # (B, d')
    k_node = ad.matmul(h_nbrs, params.W_k.T)                    # (B, K, d')
    v_node = ad.matmul(h_nbrs, params.W_v.T)
    if use_kernel and modulation in ("node", "both"):
        k_node = ad.mul(k_node, psi)
        v_node = ad.mul(v_node, psi)
    keys = ad.add(k_node, ad.matmul(ebar, params.W_e.T))
    values = ad.add(v_node, ad.matmul(ebar, params.W_e2.T))

    logits = ad.tsum(ad.mul(ad.reshape(q, (B, 1, dp)), keys), axis=-1) * (1.0 / math.sqrt(params.d_k))
    alphas = ad.masked_softmax(logits, mask, axis=-1)
    agg = ad.tsum(ad.mul(ad.reshape(alphas, (B, K, 1)), values), axis=1)
    return AttentionOutput(ad.add(self_term, agg), alphas, logits, mask)


def _single(params, h_center, batch, node_states, encoder, kernel, modulation):
    n = len(batch)
    ids = np.array([nb[0] for nb in batch.neighbors], dtype=np.int64)
    d = params.d
    if n:
        h_nbrs = ad.reshape(ad.take(node_states, ids), (1, n, d))
        feats = np.stack([np.asarray(nb[1], dtype=np.float64) for nb in batch.neighbors])[None]
    else:
        h_nbrs = ad.Tensor(np.zeros((1, 0, d)))
        feats = np.zeros((1, 0, params.d_e))
    dts = np.asarray(batch.delta_ts, dtype=np.float64).reshape(1, n)
    if np.any(dts < 0):
        raise DomainError("delta_ts must be >= 0")
    hc = ad.as_tensor(h_center)
    if hc.size != d:
        raise DimensionError(f"W_q/W_self expect a center of width {d}, got shape {hc.shape}")
    hc = ad.reshape(hc, (1, d))
    out = attend(params, hc, h_nbrs, feats, dts, None, encoder, kernel, modulation)
    return AttentionOutput(ad.reshape(out.h_prime, (params.d_prime,)),
                           ad.reshape(out.alphas, (n,)), ad.reshape(out.logits, (n,)))


def standard_attention(params, h_center, batch, node_states, encoder):
    return _single(params, h_center, batch, node_states, encoder, None, "neither")


def keat_attention(params, kernel, h_center, batch, node_states, encoder):
    return _single(params, h_center, batch, node_states, encoder, kernel, "edge")


def modulate_node_features(params, kernel, h_center, batch, node_states, encoder, flag="node"):
    return _single(params, h_center, batch, node_states, encoder, kernel, flag)


# -- patch rule ---------------------------------------------------------------

def patch_timestamps(times, mode="mean"):
    """Representative timestamp per patch from a ``(P, L_p)`` array of member times."""
    times = np.asarray(times, dtype=np.float64)
    if mode == "mean":
        return times.mean(axis=1)
    if mode == "max":
        return times.max(axis=1)
    if mode == "last":
        return times[:, -1]
    raise DomainError(f"unknown patch timestamp mode {mode!r}")


def normalize_patch_times(t, upper=4.0):
    """Min-max rescale to ``[0, upper]``; a constant vector maps to zeros."""
    t = np.asarray(t, dtype=np.float64)
    span = t.max() - t.min() if len(t) else 0.0
    if span == 0:
        return np.zeros_like(t)
    return (t - t.min()) / span * upper


def unscaled_scores(z, W_q, W_k):
    z = ad.as_tensor(z)
    W_q, W_k = ad.as_tensor(W_q), ad.as_tensor(W_k)
    q = ad.matmul(z, W_q.T)
    k = ad.matmul(z, W_k.T)
    return ad.matmul(q, k.T) * (1.0 / math.sqrt(W_q.shape[0]))


def patch_scaled_scores(z, t_patches, W_q, W_k, normalize=False, upper=4.0):
    """Patch attention logits with queries scaled by ``exp(t)`` and keys by ``exp(-t)``.

    ``logit[p, q] = exp(t_p - t_q) * (W_q z_p)^T (W_k z_q) / sqrt(d_k)``.
    Raw timestamps overflow ``exp`` quickly; pass ``normalize=True`` (or
    pre-normalised times) to rescale them to ``[0, upper]`` first.
    """
    t = np.asarray(t_patches, dtype=np.float64)
    if not np.isfinite(t).all():
        raise NumericError("patch timestamps must be finite")
    if normalize:
        t = normalize_patch_times(t, upper)
    with np.errstate(over="ignore"):
        up, down = np.exp(t), np.exp(-t)
    if not (np.isfinite(up).all() and np.isfinite(down).all() and
            np.isfinite(np.exp(t.max() - t.min()) if len(t) else 0.0)):
        raise NumericError("exp(t_patch) overflows; normalize patch timestamps (normalize=True)")
    z = ad.as_tensor(z)
    W_q, W_k = ad.as_tensor(W_q), ad.as_tensor(W_k)
    if z.shape[0] != len(t):
        raise DimensionError(f"{z.shape[0]} patches but {len(t)} timestamps")
    q = ad.matmul(z, W_q.T)
    k = ad.matmul(z, W_k.T)
    # scale after the contraction so cancellation in q.k is not amplified
    scale = up[:, None] * down[None, :] / math.sqrt(W_q.shape[0])
    return ad.mul(ad.matmul(q, k.T), scale)


# -- heatmap -----------------------------------------------------------------

def attention_heatmap(params, kernel, encoder, h_center, h_nbrs, edge_feats, base_dts,
                      dt_grid, probes=None):
    """Attention of each probe neighbor as its own dt sweeps ``dt_grid``.

    Other neighbors keep their ``base_dts``.  Returns rows
    ``(neighbor, dt, alpha_std, alpha_keat, alpha_diff)``.
    """
    h_center = np.asarray(getattr(h_center, "data", h_center), dtype=np.float64)
    h_nbrs = np.asarray(getattr(h_nbrs, "data", h_nbrs), dtype=np.float64)
    edge_feats = np.asarray(edge_feats, dtype=np.float64)
    base_dts = np.asarray(base_dts, dtype=np.float64)
    grid = np.asarray(dt_grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise DomainError("dt_grid must be ascending")
    K, G = len(base_dts), len(grid)
    probes = range(K) if probes is None else probes
    hc = np.repeat(h_center[None], G, axis=0)
    hn = np.repeat(h_nbrs[None], G, axis=0)
    ef = np.repeat(edge_feats[None], G, axis=0)
    rows = []
    for j in probes:
        dts = np.repeat(base_dts[None], G, axis=0)
        dts[:, j] = grid
        a_std = attend(params, hc, hn, ef, dts, None, encoder, None, "neither").alphas.data[:, j]
        a_k = attend(params, hc, hn, ef, dts, None, encoder, kernel, "edge").alphas.data[:, j]
        rows.extend((int(j), float(g), float(s), float(k), float(k - s))
                    for g, s, k in zip(grid, a_std, a_k))
    return rows

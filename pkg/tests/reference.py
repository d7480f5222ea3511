"""Independent numpy implementation of kernel-modulated attention.

Every function takes parameters with a leading stack axis ``N`` so a whole
set of perturbed parameter vectors is evaluated in one pass.  Used as the
finite-difference oracle for the tape gradients.
"""

import numpy as np

from keat import autodiff as ad
from keat.attention import AttentionParams, keat_attention
from keat.graph import NeighborBatch
from keat.kernels import KernelSpec, MLPKernel
from keat.time_encoding import TimeEncoder

MLP_KEYS = ("W1", "b1", "W2", "b2", "W3", "b3")
ATTN_KEYS = ("W_q", "W_k", "W_v", "W_e", "W_e2", "W_self")


class Fixture:
    """Random single-node attention problem with learnable omega and an MLP kernel."""

    def __init__(self, seed, d=3, dp=4, d_e=2, d_t=4, k=4):
        rng = np.random.default_rng(seed)
        self.params = AttentionParams.init(d, dp, d_e, d_t, rng)
        self.encoder = TimeEncoder(d_t, "learnable", omega=rng.uniform(0.2, 2.0, d_t // 2))
        self.mlp = MLPKernel(rng)
        self.kernel = KernelSpec("mlp", float(rng.uniform(0.5, 3.0)), self.mlp)
        self.states = rng.standard_normal((k + 1, d))
        feats = rng.standard_normal((k, d_e))
        self.dts = rng.uniform(0.0, 4.0, k)
        self.batch = NeighborBatch(0, 10.0, [(i + 1, feats[i], 10.0 - self.dts[i]) for i in range(k)],
                                   self.dts.copy())
        self.feats = feats
        self.r = rng.standard_normal(dp)
        self.tensors = ([getattr(self.params, name) for name in ATTN_KEYS] + [self.encoder.omega]
                        + [self.mlp.params[name] for name in MLP_KEYS])

    def loss(self):
        out = keat_attention(self.params, self.kernel, self.states[0], self.batch, self.states, self.encoder)
        return ad.tsum(ad.mul(out.h_prime, self.r)) + ad.tsum(ad.mul(out.alphas, out.alphas))

    def tape_gradient(self):
        with ad.Tape() as tape:
            loss = self.loss()
        grads = tape.backward(loss)
        return np.concatenate([grads[t].reshape(-1) for t in self.tensors])

    def theta(self):
        return np.concatenate([t.data.reshape(-1) for t in self.tensors])

    def unpack(self, thetas):
        """Split an ``(N, P)`` stack into named arrays with leading axis N."""
        out, pos = {}, 0
        names = list(ATTN_KEYS) + ["omega"] + list(MLP_KEYS)
        for name, t in zip(names, self.tensors):
            n = t.data.size
            out[name] = thetas[:, pos:pos + n].reshape((len(thetas),) + t.shape)
            pos += n
        return out

    def reference_loss(self, thetas):
        p = self.unpack(np.atleast_2d(thetas))
        hc, hn = self.states[0], self.states[1:]
        dt = self.dts
        # kernel: 1 -> 16 -> 16 -> 1 MLP on dt / width
        x = (dt / self.kernel.width)[None, :, None]                          # (1, K, 1)
        h1 = np.tanh(np.einsum("nki,nij->nkj", np.broadcast_to(x, (len(p["W1"]),) + x.shape[1:]), p["W1"])
                     + p["b1"][:, None, :])
        h2 = np.tanh(np.einsum("nki,nij->nkj", h1, p["W2"]) + p["b2"][:, None, :])
        psi = 1.0 / (1.0 + np.exp(-(np.einsum("nki,nij->nkj", h2, p["W3"]) + p["b3"][:, None, :])))   # (N,K,1)
        # time encoding, interleaved cos/sin
        arg = dt[None, :, None] * p["omega"][:, None, :]                      # (N, K, m)
        enc = np.stack([np.cos(arg), np.sin(arg)], axis=-1).reshape(arg.shape[:2] + (-1,))
        ebar = np.concatenate([np.broadcast_to(self.feats, enc.shape[:2] + self.feats.shape[1:]), enc], axis=-1)
        ebar = psi * ebar
        q = np.einsum("nod,d->no", p["W_q"], hc)
        keys = np.einsum("nod,kd->nko", p["W_k"], hn) + np.einsum("noe,nke->nko", p["W_e"], ebar)
        vals = np.einsum("nod,kd->nko", p["W_v"], hn) + np.einsum("noe,nke->nko", p["W_e2"], ebar)
        logits = np.einsum("no,nko->nk", q, keys) / np.sqrt(q.shape[1])
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        alpha = z / z.sum(axis=1, keepdims=True)
        h = np.einsum("nod,d->no", p["W_self"], hc) + np.einsum("nk,nko->no", alpha, vals)
        return h @ self.r + (alpha ** 2).sum(axis=1)


def central_differences(fx, step=1e-5):
    theta = fx.theta()
    n = len(theta)
    eye = np.eye(n) * step
    plus = fx.reference_loss(theta[None, :] + eye)
    minus = fx.reference_loss(theta[None, :] - eye)
    return (plus - minus) / (2.0 * step)


def gradient_error(seed):
    """``(forward mismatch, relative gradient error)`` for fixture ``seed``."""
    fx = Fixture(seed)
    lib = fx.loss().item()
    ref = float(fx.reference_loss(fx.theta())[0])
    g_tape = fx.tape_gradient()
    g_num = central_differences(fx)
    err = np.linalg.norm(g_tape - g_num) / max(np.linalg.norm(g_tape), np.linalg.norm(g_num), 1e-8)
    return abs(lib - ref) / max(abs(lib), 1.0), float(err)

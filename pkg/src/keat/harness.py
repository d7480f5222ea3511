"""Desk-scale dynamic link prediction on a synthetic recency benchmark."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from . import autodiff as ad
from .attention import AttentionParams, attend
from .config import ModelConfig, substream
from .errors import DomainError, NumericError, TrainingError
from .graph import TemporalGraph, chrono_split, train_sigma
from .kernels import KernelSpec, MLPKernel
from .time_encoding import TimeEncoder, base_for_span

CHECKPOINT_VERSION = 1


# -- data ---------------------------------------------------------------------

DEFAULT_GAP_SIGMA = 1.0


def gen_synthetic(num_src=20, num_dst=200, num_events=10000, recency_prob=0.8, seed=0,
                  d_e=4, gap_sigma=DEFAULT_GAP_SIGMA):
    """Bipartite event stream in which sources tend to repeat their last destination.

    Sources are ids ``0..num_src-1`` and destinations follow.  Each event
    picks a uniform source; with probability ``recency_prob`` it revisits that
    source's most recent destination, otherwise a uniform destination.
    Global inter-arrival gaps are log-normal with log-scale ``gap_sigma``.
    Edge features: ``d_e - 1`` noisy one-hot category channels plus one
    noisy channel that is 1 on repeat events.
    """
    if not 0 <= recency_prob <= 1:
        raise DomainError("recency_prob must lie in [0, 1]")
    if num_src < 1 or num_dst < 1 or num_events < 0 or d_e < 1:
        raise DomainError("counts must be positive")
    rng = substream(seed, "data")
    src = rng.integers(0, num_src, size=num_events)
    coin = rng.random(num_events)
    fresh = rng.integers(0, num_dst, size=num_events)
    gaps = rng.lognormal(0.0, gap_sigma, size=num_events)
    last = np.full(num_src, -1)
    dst = np.empty(num_events, dtype=np.int64)
    repeat = np.zeros(num_events, dtype=bool)
    for i in range(num_events):
        s = src[i]
        if last[s] >= 0 and coin[i] < recency_prob:
            dst[i] = last[s]
            repeat[i] = True
        else:
            dst[i] = fresh[i]
        last[s] = dst[i]
    feats = 0.1 * rng.standard_normal((num_events, d_e))
    if d_e > 1:
        feats[np.arange(num_events), rng.integers(0, d_e - 1, size=num_events)] += 1.0
    feats[:, -1] += repeat
    t = np.cumsum(gaps)
    return TemporalGraph(src, dst + num_src, t, feats, num_nodes=num_src + num_dst, d_e=d_e)


def destination_pool(g):
    return np.unique(g.dst)


# -- model --------------------------------------------------------------------

class LinkModel:
    """One attention layer per endpoint followed by a two-layer link scorer.

    Node states are fixed random features; each node's representation at time
    t is recomputed from its K most recent interactions before t.
    """

    def __init__(self, cfg, num_nodes, d_e, sigma, span, rng=None):
        self.cfg = cfg
        rng = substream(cfg.seed, "init") if rng is None else rng
        self.sigma = float(sigma)
        feats = substream(cfg.seed, "node_feats").standard_normal((num_nodes, cfg.d))
        feats[:, 0] = 1.0                               # bias channel
        self.node_feats = feats
        self.params = AttentionParams.init(cfg.d, cfg.d_prime, d_e, cfg.d_t, rng)
        base = cfg.time_base if cfg.time_base is not None else base_for_span(cfg.d_t, span)
        self.encoder = TimeEncoder(cfg.d_t, cfg.time_mode, base=base)
        width = cfg.kernel_lambda if cfg.kernel_lambda is not None else cfg.lambda_sigma_mult * self.sigma
        if cfg.kernel_family == "none" or not math.isfinite(width):
            self.kernel = KernelSpec("none")
        else:
            mlp = MLPKernel(rng) if cfg.kernel_family == "mlp" else None
            self.kernel = KernelSpec(cfg.kernel_family, width, mlp)
        h = cfg.hidden
        b1, b2 = 1 / math.sqrt(3 * cfg.d_prime), 1 / math.sqrt(h)
        self.pred = {
            "P1": ad.parameter(rng.uniform(-b1, b1, (3 * cfg.d_prime, h)), "P1"),
            "c1": ad.parameter(np.zeros(h), "c1"),
            "P2": ad.parameter(rng.uniform(-b2, b2, (h, 1)), "P2"),
            "c2": ad.parameter(np.zeros(1), "c2"),
        }

    def named_parameters(self):
        out = {f"attn.{k}": v for k, v in self.params.named().items()}
        out.update({f"pred.{k}": v for k, v in self.pred.items()})
        if self.encoder.mode == "learnable":
            out["time.omega"] = self.encoder.omega
        if self.kernel.family == "mlp":
            out.update({f"kernel.{k}": v for k, v in self.kernel.mlp.params.items()})
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def embed(self, g, nodes, times):
        other, eid, dt, mask = g.index.lookup(nodes, times, self.cfg.num_neighbors)
        feats = g.feats[eid] * mask[..., None]
        out = attend(self.params, self.node_feats[nodes], self.node_feats[other], feats, dt, mask,
                     self.encoder, self.kernel, self.cfg.modulation)
        return out.h_prime

    def score(self, hs, hd):
        x = ad.concat([hs, hd, ad.mul(hs, hd)], axis=-1)
        h = ad.tanh(ad.matmul(x, self.pred["P1"]) + self.pred["c1"])
        out = ad.matmul(h, self.pred["P2"]) + self.pred["c2"]
        return ad.reshape(out, (out.shape[0],))

    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_arrays(self, arrays):
        for k, v in self.named_parameters().items():
            if k not in arrays:
                raise DomainError(f"checkpoint lacks parameter {k}")
            if np.shape(arrays[k]) != v.shape:
                raise DomainError(f"parameter {k}: shape {np.shape(arrays[k])} != {v.shape}")
            v.data = np.array(arrays[k], dtype=np.float64)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = grads.get(p)
            if g is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- ranking ------------------------------------------------------------------

def sample_negatives(pool, positive, num_neg, rng):
    """``num_neg`` distinct ids from ``pool`` excluding ``positive``."""
    pool = np.asarray(pool)
    cand = pool[pool != positive]
    if num_neg < 1 or len(cand) < num_neg:
        raise DomainError(f"need {num_neg} negatives but only {len(cand)} candidates")
    return rng.choice(cand, size=num_neg, replace=False)


def negatives_for(pool, positives, num_neg, rng):
    pool = np.asarray(pool)
    out = np.empty((len(positives), num_neg), dtype=np.int64)
    for i, p in enumerate(positives):
        out[i] = sample_negatives(pool, p, num_neg, rng)
    return out


def pessimistic_ranks(pos_scores, neg_scores):
    """Rank of each positive among its candidates; ties count against it."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    return 1 + np.sum(neg >= pos[:, None], axis=1)


@dataclass
class RankingResult:
    ranks: np.ndarray
    num_negatives: int
    ks: tuple = (1, 3, 10)
    ap: float | None = None
    auc: float | None = None

    @property
    def mrr(self):
        return float(np.mean(1.0 / self.ranks)) if len(self.ranks) else float("nan")

    @property
    def mrr_stderr(self):
        r = 1.0 / self.ranks
        return float(np.std(r, ddof=1) / math.sqrt(len(r))) if len(r) > 1 else float("nan")

    def hits(self, k):
        return float(np.mean(self.ranks <= k))

    def metrics(self):
        out = {"mrr": self.mrr}
        out.update({f"hits@{k}": self.hits(k) for k in self.ks})
        if self.ap is not None:
            out["ap"] = self.ap
            out["auc"] = self.auc
        return out


def ranking_from_scores(pos_scores, neg_scores, ks=(1, 3, 10)):
    neg = np.asarray(neg_scores, dtype=np.float64)
    res = RankingResult(pessimistic_ranks(pos_scores, neg), neg.shape[1], tuple(ks))
    if neg.shape[1] == 1 and len(neg):
        y = np.r_[np.ones(len(neg)), np.zeros(len(neg))]
        s = np.r_[np.asarray(pos_scores, dtype=np.float64), neg[:, 0]]
        res.ap = float(average_precision_score(y, s))
        res.auc = float(roc_auc_score(y, s))
    return res


def score_candidates(model, g, src, dst_cands, times, chunk=4096):
    """Scores ``(Q, C)`` for each query's candidate destinations at its time."""
    q, c = dst_cands.shape
    hs = model.embed(g, src, times).data
    out = np.empty((q, c))
    rows = max(1, chunk // c)
    for lo in range(0, q, rows):
        hi = min(q, lo + rows)
        flat = dst_cands[lo:hi].reshape(-1)
        tt = np.repeat(times[lo:hi], c)
        hd = model.embed(g, flat, tt).data
        s = model.score(np.repeat(hs[lo:hi], c, axis=0), hd).data
        out[lo:hi] = s.reshape(hi - lo, c)
    return out


def evaluate(model, g, split, num_neg, ks=(1, 3, 10), seed=0, negatives=None, stream="eval"):
    """Rank each positive event of ``split`` against ``num_neg`` sampled negatives.

    Node representations are built from events of ``g`` strictly before
    each query time.
    """
    if len(split) == 0:
        raise DomainError("cannot evaluate an empty split")
    if negatives is None:
        negatives = negatives_for(destination_pool(g), split.dst, num_neg, substream(seed, f"negatives:{stream}"))
    cands = np.concatenate([split.dst[:, None], negatives], axis=1)
    scores = score_candidates(model, g, split.src, cands, split.t)
    return ranking_from_scores(scores[:, 0], scores[:, 1:], ks)


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    model: LinkModel
    history: list = field(default_factory=list)     # dicts: epoch, train_loss, val_mrr
    best_epoch: int = -1
    best_val_mrr: float = float("nan")


def batch_loss(model, g, src, dst, neg, times):
    n = len(src)
    nodes = np.concatenate([src, dst, neg])
    h = model.embed(g, nodes, np.tile(times, 3))
    hs, hd, hn = h[:n], h[n:2 * n], h[2 * n:]
    pos = model.score(hs, hd)
    negs = model.score(hs, hn)
    return (ad.softplus(-pos).mean() + ad.softplus(negs).mean()) * 0.5


def _split(g, cfg):
    return chrono_split(g, cfg.train_frac, cfg.val_frac)


def build_model(cfg, g, train_part):
    sigma = train_sigma(train_part, cfg.sigma_pooling)
    span = float(train_part.t[-1] - train_part.t[0]) if len(train_part) else 1.0
    return LinkModel(cfg, g.num_nodes, g.d_e, sigma, span)


def validation_queries(cfg, g, val_part):
    """The validation events and fixed negatives used for model selection."""
    val_eval = val_part
    if cfg.val_queries and len(val_part) > cfg.val_queries:
        val_eval = val_part.subset(0, cfg.val_queries)
    negs = negatives_for(destination_pool(g), val_eval.dst, cfg.num_negatives,
                         substream(cfg.seed, "negatives:val"))
    return val_eval, negs


def train(cfg, g, train_part=None, val_part=None, log=None):
    """Train with BCE on one uniform negative per positive; early-stop on val MRR.

    Returns the best-validation parameters (initial ones when ``epochs == 0``).
    """
    if train_part is None or val_part is None:
        train_part, val_part, _ = _split(g, cfg)
    if len(train_part) == 0 or len(val_part) == 0:
        raise DomainError("train and validation splits must be non-empty")
    model = build_model(cfg, g, train_part)
    result = TrainResult(model)
    pool = destination_pool(g)
    val_eval, val_neg = validation_queries(cfg, g, val_part)
    if cfg.epochs == 0:
        res = evaluate(model, g, val_eval, cfg.num_negatives, cfg.ks, negatives=val_neg)
        result.best_epoch, result.best_val_mrr = 0, res.mrr
        result.history.append({"epoch": 0, "train_loss": float("nan"), "val_mrr": res.mrr})
        return result

    params = model.parameters()
    opt = Adam(params, cfg.lr)
    rng = substream(cfg.seed, "train")
    best = None
    stale = 0
    n = len(train_part)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        neg_all = pool[rng.integers(0, len(pool), size=n)]
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with ad.Tape() as tape:
                    loss = batch_loss(model, g, train_part.src[idx], train_part.dst[idx],
                                      neg_all[idx], train_part.t[idx])
                grads = tape.backward(loss)
            except NumericError as exc:
                raise TrainingError(f"non-finite value during training: {exc}", epoch) from None
            lv = loss.item()
            if not math.isfinite(lv):
                raise TrainingError("loss diverged", epoch)
            total += lv * len(idx)
            opt.step(grads)
        val = evaluate(model, g, val_eval, cfg.num_negatives, cfg.ks, negatives=val_neg)
        rec = {"epoch": epoch, "train_loss": total / n, "val_mrr": val.mrr}
        result.history.append(rec)
        if log:
            log(rec)
        if best is None or val.mrr > result.best_val_mrr + cfg.tolerance:
            best = model.state_arrays()
            result.best_epoch, result.best_val_mrr = epoch, val.mrr
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_arrays(best)
    return result


def run_experiment(cfg, g):
    """Train on the chronological split and report val/test MRR of the best checkpoint."""
    tr, va, te = _split(g, cfg)
    res = train(cfg, g, tr, va)
    test = evaluate(res.model, g, te, cfg.num_negatives, cfg.ks, seed=cfg.seed, stream="test")
    return {"val_mrr": res.best_val_mrr, "test_mrr": test.mrr, "test": test, "train": res}


def sweep_sigma(cfg, g, multipliers=(0.25, 0.5, 1, 2, 4, math.inf), seeds=(1, 2, 3, 4, 5)):
    """Test MRR per kernel-width multiple of train sigma; inf means no kernel."""
    table, long = [], []
    for mult in multipliers:
        vals = []
        for s in seeds:
            c = cfg.replace(seed=s, kernel_lambda=None, lambda_sigma_mult=float(mult),
                            kernel_family="none" if math.isinf(mult) else cfg.kernel_family)
            r = run_experiment(c, g)
            vals.append(r["test_mrr"])
            long.append((f"lambda={mult}", s, "test", "mrr", r["test_mrr"]))
        table.append({"multiplier": mult, "mean_test_mrr": float(np.mean(vals)),
                      "std_test_mrr": float(np.std(vals)), "n_seeds": len(vals)})
    return table, long


def ablate_modulation(cfg, g, flags=("neither", "node", "edge", "both"), seeds=(1, 2, 3, 4, 5)):
    table, long = [], []
    for flag in flags:
        val, test = [], []
        for s in seeds:
            r = run_experiment(cfg.replace(seed=s, modulation=flag), g)
            val.append(r["val_mrr"])
            test.append(r["test_mrr"])
            long.append((flag, s, "val", "mrr", r["val_mrr"]))
            long.append((flag, s, "test", "mrr", r["test_mrr"]))
        table.append({"flag": flag, "val_mrr_mean": float(np.mean(val)), "val_mrr_std": float(np.std(val)),
                      "test_mrr_mean": float(np.mean(test)), "test_mrr_std": float(np.std(test))})
    return table, long


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model, extra=None):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_flat(),
        "sigma": model.sigma,
        "time_base": model.encoder.base,
        "kernel": {"family": model.kernel.family,
                   "width": model.kernel.width if model.kernel.family != "none" else None},
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in sorted(model.state_arrays().items())},
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path, g):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {doc.get('format_version')}")
    cfg = ModelConfig.from_flat(doc["config"])
    cfg = cfg.replace(time_base=doc["time_base"])
    if doc["kernel"]["family"] != "none":
        cfg = cfg.replace(kernel_lambda=doc["kernel"]["width"])
    model = LinkModel(cfg, g.num_nodes, g.d_e, doc["sigma"], 1.0)
    model.load_arrays({k: np.array(v["data"]).reshape(v["shape"]) for k, v in doc["params"].items()})
    return model, doc

"""Temporal event storage, chronological splits, neighbor lookup and
inter-arrival statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, DomainError, ParseError


@dataclass(frozen=True)
class TemporalEvent:
    src: int
    dst: int
    time: float
    edge_feat: tuple = ()


@dataclass(frozen=True)
class NeighborBatch:
    center: int
    query_time: float
    neighbors: list          # (node id, edge_feat array, event time), most recent first
    delta_ts: np.ndarray

    def __len__(self):
        return len(self.neighbors)


class TemporalGraph:
    """Immutable, time-sorted event stream.

    Columnar storage (``src``, ``dst``, ``t``, ``feats``) backs the event list so
    the training harness can index it without per-event Python objects.
    """

    def __init__(self, src, dst, t, feats=None, num_nodes=None, d_e=None):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        n = len(t)
        if not (len(src) == len(dst) == n):
            raise DomainError("src, dst and t must have equal length")
        if feats is None:
            feats = np.zeros((n, d_e or 0))
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2:
            feats = feats.reshape(n, -1) if n else np.zeros((0, d_e or 0))
        if d_e is not None and feats.shape[1] != d_e:
            raise DomainError(f"edge features have width {feats.shape[1]}, expected d_e={d_e}")
        if n and (np.any(t < 0) or not np.isfinite(t).all()):
            raise DomainError("event times must be finite and non-negative")
        if n and (src.min() < 0 or dst.min() < 0):
            raise DomainError("node ids must be non-negative")
        order = np.argsort(t, kind="stable")
        self.src = src[order]
        self.dst = dst[order]
        self.t = t[order]
        self.feats = feats[order]
        max_id = int(max(self.src.max(), self.dst.max())) + 1 if n else 0
        if num_nodes is None:
            num_nodes = max_id
        elif num_nodes < max_id:
            raise DomainError(f"num_nodes={num_nodes} but ids reach {max_id - 1}")
        self.num_nodes = int(num_nodes)
        self.d_e = int(self.feats.shape[1])
        for arr in (self.src, self.dst, self.t, self.feats):
            arr.flags.writeable = False
        self._index = None

    @classmethod
    def from_events(cls, events, num_nodes=None, d_e=None):
        events = list(events)
        if d_e is None:
            d_e = len(events[0].edge_feat) if events else 0
        for ev in events:
            if len(ev.edge_feat) != d_e:
                raise DomainError(f"edge_feat length {len(ev.edge_feat)} != d_e={d_e}")
        feats = np.array([ev.edge_feat for ev in events], dtype=np.float64).reshape(len(events), d_e)
        return cls([e.src for e in events], [e.dst for e in events], [e.time for e in events],
                   feats, num_nodes=num_nodes, d_e=d_e)

    def __len__(self):
        return len(self.t)

    @property
    def events(self):
        return [TemporalEvent(int(s), int(d), float(t), tuple(f))
                for s, d, t, f in zip(self.src, self.dst, self.t, self.feats)]

    def subset(self, start, stop):
        g = TemporalGraph(self.src[start:stop], self.dst[start:stop], self.t[start:stop],
                          self.feats[start:stop], num_nodes=self.num_nodes, d_e=self.d_e)
        return g

    @property
    def index(self):
        if self._index is None:
            self._index = NeighborIndex(self)
        return self._index

    def node_times(self, node):
        """Times of every event incident to ``node`` (self-loops counted once)."""
        hit = (self.src == node) | (self.dst == node)
        return self.t[hit]


class NeighborIndex:
    """Per-node CSR layout of incident events, sorted by time.

    Each event (i, j) is history for both endpoints; a self-loop is stored once.
    """

    def __init__(self, g):
        n = len(g)
        ev = np.arange(n)
        loop = g.src == g.dst
        owner = np.concatenate([g.src, g.dst[~loop]])
        other = np.concatenate([g.dst, g.src[~loop]])
        eid = np.concatenate([ev, ev[~loop]])
        order = np.lexsort((eid, owner))
        self.owner = owner[order]
        self.other = other[order]
        self.eid = eid[order]
        self.times = g.t[self.eid]
        self.offsets = np.searchsorted(self.owner, np.arange(g.num_nodes + 1))
        self.feats = g.feats

    def lookup(self, nodes, query_times, k):
        """Vectorised recent-neighbor lookup.

        Returns ``(other, eid, dt, mask)`` arrays of shape ``(Q, k)`` holding the
        up-to-``k`` most recent incident events strictly before each query
        time, most recent first.  Padded slots have ``mask == False``.
        """
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        query_times = np.asarray(query_times, dtype=np.float64).reshape(-1)
        q = len(nodes)
        pos = np.empty(q, dtype=np.int64)
        order = np.argsort(nodes, kind="stable")
        sorted_nodes = nodes[order]
        bounds = np.flatnonzero(np.diff(sorted_nodes)) + 1
        for grp in np.split(order, bounds):
            if not len(grp):
                continue
            node = nodes[grp[0]]
            lo, hi = self.offsets[node], self.offsets[node + 1]
            pos[grp] = lo + np.searchsorted(self.times[lo:hi], query_times[grp], side="left")
        start = self.offsets[nodes]
        idx = pos[:, None] - 1 - np.arange(k)[None, :]
        mask = idx >= start[:, None]
        idx = np.where(mask, idx, 0)
        if len(self.times) == 0:
            z = np.zeros((q, k), dtype=np.int64)
            return z, z, np.zeros((q, k)), np.zeros((q, k), dtype=bool)
        other = np.where(mask, self.other[idx], 0)
        eid = np.where(mask, self.eid[idx], 0)
        dt = np.where(mask, query_times[:, None] - self.times[idx], 0.0)
        return other, eid, dt, mask


def load_csv(path, d_e=None):
    """Read ``src,dst,time,f_0..f_{d_e-1}`` rows; a non-numeric first row is a header.

    ``d_e=None`` takes the feature width from the first row (header or data).
    """
    src, dst, times, feats = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if d_e is None:
                if len(row) < 3:
                    raise ParseError(f"expected at least 3 fields, got {len(row)}", lineno)
                d_e = len(row) - 3
            if lineno == 1 and not _numeric(row[0]):
                continue
            if len(row) != 3 + d_e:
                raise ParseError(f"expected {3 + d_e} fields, got {len(row)}", lineno)
            try:
                s, d = int(row[0]), int(row[1])
                t = float(row[2])
                f = [float(x) for x in row[3:]]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if s < 0 or d < 0:
                raise ParseError("negative node id", lineno)
            if t < 0 or not math.isfinite(t):
                raise DomainError(f"line {lineno}: event time must be finite and >= 0, got {t}")
            src.append(s)
            dst.append(d)
            times.append(t)
            feats.append(f)
    d_e = d_e or 0
    return TemporalGraph(src, dst, times, np.array(feats).reshape(len(times), d_e), d_e=d_e)


def _numeric(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(g, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "time"] + [f"f_{i}" for i in range(g.d_e)])
        for s, d, t, f in zip(g.src, g.dst, g.t, g.feats):
            w.writerow([int(s), int(d), repr(float(t))] + [repr(float(x)) for x in f])


def chrono_split(g, train_frac, val_frac):
    if not (train_frac > 0 and val_frac >= 0 and train_frac + val_frac <= 1 + 1e-12):
        raise DomainError(f"invalid split fractions {train_frac}/{val_frac}")
    n = len(g)
    # guard against 0.7 * 10 = 6.999... style rounding
    n_train = min(n, int(math.floor(n * train_frac + 1e-9)))
    n_val = min(n - n_train, int(math.floor(n * val_frac + 1e-9)))
    return (g.subset(0, n_train), g.subset(n_train, n_train + n_val),
            g.subset(n_train + n_val, n))


def recent_neighbors(g, node, query_time, k):
    if k < 1:
        raise DomainError("K must be >= 1")
    other, eid, dt, mask = g.index.lookup([node], [query_time], k)
    m = mask[0]
    nbrs = [(int(o), g.feats[e].copy(), float(g.t[e])) for o, e in zip(other[0][m], eid[0][m])]
    return NeighborBatch(int(node), float(query_time), nbrs, dt[0][m].copy())


def train_sigma(train, pooling="global"):
    """Population std of inter-event gaps of the training stream.

    ``pooling="global"`` uses consecutive gaps of the whole time-sorted
    stream; ``pooling="node"`` pools each node's own consecutive gaps, the
    time scale that neighbor delta-t values actually live on.
    """
    if pooling == "global":
        gaps = np.diff(train.t)
    elif pooling == "node":
        gaps = node_gaps(train)
    else:
        raise DomainError(f"unknown sigma pooling {pooling!r}")
    if len(gaps) < 2:
        raise DomainError(f"need at least 2 inter-arrival gaps, got {len(gaps)}")
    sigma = float(np.std(gaps))
    if sigma == 0.0:
        raise DegenerateDataError("all inter-arrival gaps are equal; sigma = 0")
    return sigma


def node_gaps(g):
    """Per-node consecutive gaps, pooled in node order."""
    idx = g.index
    out = []
    for node in range(g.num_nodes):
        lo, hi = idx.offsets[node], idx.offsets[node + 1]
        if hi - lo > 1:
            out.append(np.diff(idx.times[lo:hi]))
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    empty: bool = field(default=False)

    def rows(self):
        return [(float(lo), float(hi), int(c))
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def interarrival_histogram(g, bins):
    """Equal-width histogram of pooled per-node gaps over ``[0, max gap]``.

    Bins are closed on the right, ``(lo, hi]``; the first bin also takes 0.
    No gaps at all gives ``Histogram(empty=True)``.
    """
    if bins < 1:
        raise DomainError("bins must be >= 1")
    gaps = node_gaps(g)
    if len(gaps) == 0:
        return Histogram(np.zeros(0), np.zeros(0, dtype=np.int64), empty=True)
    top = float(gaps.max())
    edges = np.linspace(0.0, top, bins + 1)
    if top == 0.0:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = len(gaps)
        return Histogram(edges, counts)
    which = np.clip(np.searchsorted(edges, gaps, side="left") - 1, 0, bins - 1)
    return Histogram(edges, np.bincount(which, minlength=bins).astype(np.int64))


def spectral_entropy_of_series(x, rtol=1e-10):
    """Shannon entropy (nats) of the normalised non-DC FFT magnitude spectrum.

    Magnitudes below ``rtol`` times the total spectral magnitude are rounding
    noise and are dropped, so a constant series has entropy exactly 0.
    """
    mags = np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64)))
    total = mags.sum()
    ac = mags[1:]
    ac = np.where(ac > rtol * max(total, 1e-300), ac, 0.0)
    s = ac.sum()
    if s == 0.0:
        return 0.0
    p = ac[ac > 0] / s
    return float(max(0.0, -np.sum(p * np.log(p))))


def spectral_entropy(g, node):
    times = np.sort(g.node_times(node))
    if len(times) < 4:
        raise DomainError(f"node {node} has {len(times)} events; need >= 4")
    return spectral_entropy_of_series(np.diff(times))

"""Run configuration: flat dotted ``key=value`` files and seeded substreams."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# dotted config key -> (ModelConfig attribute, parser, help)
KEYS = {
    "seed": ("seed", int, "master seed; every random stream derives from it"),
    "model.d": ("d", int, "node feature width d"),
    "model.d_prime": ("d_prime", int, "attention width d' (= d_k)"),
    "model.hidden": ("hidden", int, "hidden width of the link predictor"),
    "model.num_neighbors": ("num_neighbors", int, "K most recent neighbors per query"),
    "model.modulation": ("modulation", str, "where psi applies: neither|node|edge|both"),
    "time_encoding.mode": ("time_mode", str, "fixed|learnable sinusoidal frequencies"),
    "time_encoding.d_t": ("d_t", int, "time encoding width (even, 0 disables)"),
    "time_encoding.base": ("time_base", float, "frequency ladder base (default: fit train span)"),
    "kernel.family": ("kernel_family", str, "laplacian|rbf|mlp|none"),
    "kernel.lambda": ("kernel_lambda", float, "absolute kernel width (overrides the multiple)"),
    "kernel.lambda_sigma_mult": ("lambda_sigma_mult", float, "kernel width as a multiple of train sigma"),
    "kernel.sigma_pooling": ("sigma_pooling", str, "train sigma from node|global inter-event gaps"),
    "train.lr": ("lr", float, "Adam learning rate"),
    "train.batch_size": ("batch_size", int, "positive events per step"),
    "train.epochs": ("epochs", int, "maximum epochs"),
    "train.patience": ("patience", int, "epochs without val improvement before stopping"),
    "train.tolerance": ("tolerance", float, "minimum val MRR gain that counts as improvement"),
    "train.train_frac": ("train_frac", float, "chronological train fraction"),
    "train.val_frac": ("val_frac", float, "chronological validation fraction"),
    "train.val_queries": ("val_queries", int, "validation queries per epoch (0 = all)"),
    "eval.num_negatives": ("num_negatives", int, "negatives per positive when ranking"),
    "eval.ks": ("ks", lambda s: tuple(int(x) for x in str(s).split(",") if x), "Hits@K cutoffs, comma separated"),
}


@dataclass
class ModelConfig:
    seed: int = 0
    d: int = 16
    d_prime: int = 16
    hidden: int = 16
    num_neighbors: int = 10
    modulation: str = "edge"
    time_mode: str = "fixed"
    d_t: int = 8
    time_base: float | None = None
    kernel_family: str = "laplacian"
    kernel_lambda: float | None = None
    lambda_sigma_mult: float = 1.0
    sigma_pooling: str = "node"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    patience: int = 5
    tolerance: float = 1e-6
    train_frac: float = 0.7
    val_frac: float = 0.15
    val_queries: int = 300
    num_negatives: int = 50
    ks: tuple = (1, 3, 10)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for key in ("d", "d_prime", "hidden", "num_neighbors", "batch_size", "num_negatives"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.d_t < 0 or self.d_t % 2:
            raise ConfigError("d_t must be even and >= 0", "time_encoding.d_t")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0", "train.lr")
        if self.epochs < 0 or self.patience < 1:
            raise ConfigError("epochs must be >= 0 and patience >= 1", "train.epochs")
        if self.modulation not in ("neither", "node", "edge", "both"):
            raise ConfigError(f"bad modulation {self.modulation!r}", "model.modulation")
        if self.kernel_family not in ("laplacian", "rbf", "mlp", "none"):
            raise ConfigError(f"bad kernel family {self.kernel_family!r}", "kernel.family")
        if self.sigma_pooling not in ("node", "global"):
            raise ConfigError(f"bad sigma pooling {self.sigma_pooling!r}", "kernel.sigma_pooling")
        if self.time_mode not in ("fixed", "learnable"):
            raise ConfigError(f"bad time encoding mode {self.time_mode!r}", "time_encoding.mode")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_flat(self):
        out = {}
        for key, (attr, _, _) in KEYS.items():
            v = getattr(self, attr)
            if v is None:
                continue
            out[key] = ",".join(map(str, v)) if isinstance(v, tuple) else v
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, flat, base=None):
        cfg = dataclasses.asdict(base or cls())
        for key, raw in flat.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}", key)
            attr, parse, _ = KEYS[key]
            try:
                cfg[attr] = None if str(raw).lower() in ("none", "") and attr in ("time_base", "kernel_lambda") \
                    else parse(raw)
            except ValueError:
                raise ConfigError(f"cannot parse {key}={raw!r}", key) from None
        return cls(**cfg)


def parse_kv_lines(lines, source="<config>"):
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides=(), base=None):
    flat = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            flat.update(parse_kv_lines(fh, source=str(path)))
    flat.update(parse_kv_lines(overrides, source="<override>"))
    return ModelConfig.from_flat(flat, base)


def substream(seed, name):
    """Independent generator for the named stream ``seed:name``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]))

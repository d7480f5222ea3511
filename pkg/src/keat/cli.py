"""``keat`` command-line entry point.

Exit codes: 0 success, 1 an analysed property failed, 2 bad configuration,
arguments or paths, 3 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import warnings
from contextlib import nullcontext

import numpy as np

from . import harness, theory
from .attention import attention_heatmap
from .config import KEYS, load_config
from .errors import ConfigError, DomainError, KeatError, ParseError, TrainingError
from .graph import (chrono_split, interarrival_histogram, load_csv, spectral_entropy,
                    train_sigma, write_csv)
from .kernels import KernelSpec

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _config_help():
    width = max(len(k) for k in KEYS)
    lines = ["config keys (use in --config files or as --set key=value):"]
    lines += [f"  {k:<{width}}  {h}" for k, (_, _, h) in KEYS.items()]
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("KEAT_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"KEAT_SEED must be an integer, got {env!r}", "seed") from None


def _config(args):
    overrides = list(args.set or [])
    seed = _resolve_seed(args)
    if seed is not None:
        overrides.append(f"seed={seed}")
    if args.config and not os.path.exists(args.config):
        raise UsageError(f"config file not found: {args.config}")
    return load_config(args.config, overrides)


def _load_data(path):
    if not path or not os.path.exists(path):
        raise UsageError(f"dataset not found: {path}")
    return load_csv(path)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _variant(cfg):
    if cfg.kernel_family == "none" or cfg.modulation == "neither":
        return "standard"
    return f"{cfg.kernel_family}-{cfg.modulation}"


def _metric_rows(variant, seed, split, metrics):
    return [(variant, seed, split, k, v) for k, v in metrics.items()]


METRIC_HEADER = ["variant", "seed", "split", "metric", "value"]


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args):
    seed = _resolve_seed(args)
    g = harness.gen_synthetic(num_src=args.sources, num_dst=args.destinations, num_events=args.events,
                              recency_prob=args.recency, seed=0 if seed is None else seed,
                              d_e=args.d_e, gap_sigma=args.gap_sigma)
    try:
        write_csv(g, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    try:
        sigma = train_sigma(g)
    except DomainError:
        sigma = float("nan")
    print(f"events={len(g)} nodes={g.num_nodes} sigma={sigma:.6g}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    g = _load_data(args.data)
    out = _outdir(args.out)
    tr, va, te = chrono_split(g, cfg.train_frac, cfg.val_frac)
    hist = []
    res = harness.train(cfg, g, tr, va, log=hist.append if args.verbose else None)
    variant = _variant(cfg)
    rows = _metric_rows(variant, cfg.seed, "val", {"mrr": res.best_val_mrr})
    test_mrr = float("nan")
    if len(te):
        test = harness.evaluate(res.model, g, te, cfg.num_negatives, cfg.ks, seed=cfg.seed, stream="test")
        test_mrr = test.mrr
        rows += _metric_rows(variant, cfg.seed, "test", test.metrics())
    harness.save_checkpoint(os.path.join(out, "checkpoint.json"), res.model,
                            extra={"best_epoch": res.best_epoch, "best_val_mrr": res.best_val_mrr})
    write_rows(os.path.join(out, "metrics.csv"), METRIC_HEADER, rows)
    write_rows(os.path.join(out, "history.csv"), ["epoch", "train_loss", "val_mrr"],
               [(h["epoch"], h["train_loss"], h["val_mrr"]) for h in res.history])
    for h in hist:
        print(f"epoch={h['epoch']} train_loss={h['train_loss']:.6f} val_mrr={h['val_mrr']:.6f}", file=sys.stderr)
    print(f"val_mrr={res.best_val_mrr:.6f} test_mrr={test_mrr:.6f}")
    return EXIT_OK


def _checkpoint(args, g):
    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    return harness.load_checkpoint(args.checkpoint, g)


def cmd_eval(args):
    g = _load_data(args.data)
    model, _ = _checkpoint(args, g)
    cfg = model.cfg
    if args.num_negatives:
        cfg = cfg.replace(num_negatives=args.num_negatives)
    tr, va, te = chrono_split(g, cfg.train_frac, cfg.val_frac)
    if args.split == "val":
        queries, negs = harness.validation_queries(cfg, g, va)
        res = harness.evaluate(model, g, queries, cfg.num_negatives, cfg.ks, negatives=negs)
    else:
        split = te if args.split == "test" else tr
        res = harness.evaluate(model, g, split, cfg.num_negatives, cfg.ks, seed=cfg.seed, stream=args.split)
    write_rows(args.out, METRIC_HEADER, _metric_rows(_variant(cfg), cfg.seed, args.split, res.metrics()))
    print(f"{args.split}_mrr={res.mrr:.6f} queries={len(res.ranks)}")
    return EXIT_OK


def _analyze_moments(args):
    kernel = KernelSpec(args.kernel, args.width) if args.kernel != "none" else KernelSpec("none")
    rep = theory.moment_ratios(args.dist, kernel, N=args.N, samples=args.samples, seed=args.seed or 0)
    rows = []
    for n, b, w, r, s in rep.rows():
        ok = 0.0 < r <= 1.0 and n not in rep.violations
        rows.append((n, b, w, r, s, ok))
    write_rows(args.out, ["n", "base_moment", "weighted_moment", "ratio", "std_err", "ok"], rows)
    bad = [r for r in rows if not r[-1]]
    for r in bad:
        print(f"property violated at n={r[0]}: R_n={r[3]!r}", file=sys.stderr)
    print(f"R_0={rep.ratios[0]:.6f} R_1={rep.ratios[1]:.6f} R_{args.N}={rep.ratios[-1]:.3e}")
    return EXIT_PROPERTY if bad else EXIT_OK


def _analyze_variance(args):
    rows, bad = [], []
    seed = args.seed or 0
    for sx in _floats(args.sigma_x):
        for sy in _floats(args.sigma_y):
            for rho in _floats(args.rho):
                for psi in _floats(args.psi):
                    fx = theory.VarianceFixture(sx, sy, rho, psi)
                    r = theory.variance_delta(fx, samples=args.samples, seed=seed)
                    agree = r.agrees()
                    ok = agree and (r.analytic >= 0 or not r.condition)
                    rows.append((sx, sy, rho, psi, r.analytic, r.monte_carlo, r.std_error,
                                 r.condition, agree))
                    if not ok:
                        bad.append(rows[-1])
    write_rows(args.out, ["sigma_x", "sigma_y", "rho", "psi", "delta", "delta_mc", "std_err",
                          "condition", "agree"], rows)
    for r in bad:
        print(f"property violated for sigma_x={r[0]} sigma_y={r[1]} rho={r[2]} psi={r[3]}", file=sys.stderr)
    print(f"fixtures={len(rows)} failures={len(bad)}")
    return EXIT_PROPERTY if bad else EXIT_OK


def _analyze_series(args):
    coeffs = theory.product_series(args.lam, args.omega, args.K)
    odd = coeffs.c[1::2]
    bad = []
    if args.lam == 0 and np.any(odd != 0):
        bad.append("odd coefficients of a pure cosine must vanish")
    rows = []
    for t in _floats(args.t):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cmp = theory.series_vs_direct(args.lam, args.omega, t, args.K, tol=args.tol)
        converged = cmp.remainder_bound <= args.tol
        ok = not converged or cmp.abs_diff <= cmp.remainder_bound + 1e-12
        rows.append((t, cmp.series, cmp.direct, cmp.abs_diff, cmp.remainder_bound, converged))
        if not ok:
            bad.append(f"series disagrees at t={t}: |diff|={cmp.abs_diff!r}")
    write_rows(args.out, ["t", "series", "direct", "abs_diff", "remainder_bound", "converged"], rows)
    if args.coeffs:
        write_rows(args.coeffs, ["k", "c_k"], list(enumerate(coeffs.c)))
    for msg in bad:
        print(f"property violated: {msg}", file=sys.stderr)
    print(f"K={args.K} odd_nonzero={int(np.count_nonzero(odd))} points={len(rows)}")
    return EXIT_PROPERTY if bad else EXIT_OK


def _analyze_spectral(args):
    g = _load_data(args.data)
    nodes = _ints(args.nodes) if args.nodes else range(g.num_nodes)
    rows, bad = [], []
    for node in nodes:
        count = len(g.node_times(node))
        if count < 4:
            if args.nodes:
                raise UsageError(f"node {node} has {count} events; need >= 4")
            continue
        h = spectral_entropy(g, node)
        bins = count // 2          # rfft of count-1 gaps has at most this many non-DC bins
        ok = 0.0 <= h <= math.log(max(bins, 1)) + 1e-9
        rows.append((node, h))
        if not ok:
            bad.append(node)
    write_rows(args.out, ["node", "entropy"], rows)
    if args.hist_out:
        hist = interarrival_histogram(g, args.bins)
        write_rows(args.hist_out, ["bin_low", "bin_high", "count"], [] if hist.empty else hist.rows())
    for node in bad:
        print(f"property violated: entropy out of range for node {node}", file=sys.stderr)
    print(f"nodes={len(rows)}")
    return EXIT_PROPERTY if bad else EXIT_OK


def cmd_analyze(args):
    return {"moments": _analyze_moments, "variance": _analyze_variance,
            "series": _analyze_series, "spectral": _analyze_spectral}[args.topic](args)


def _model_for(args, g):
    if args.checkpoint:
        return _checkpoint(args, g)[0]
    if not args.train_inline:
        raise UsageError("give --checkpoint PATH or --train-inline")
    cfg = _config(args)
    return harness.train(cfg, g).model


def cmd_heatmap(args):
    g = _load_data(args.data)
    if args.d_t is not None:
        args.set = list(args.set or []) + [f"time_encoding.d_t={args.d_t}"]
    model = _model_for(args, g)
    cfg = model.cfg
    tr, _, _ = chrono_split(g, cfg.train_frac, cfg.val_frac)
    node = int(tr.src[-1]) if args.node is None else args.node
    t_query = float(tr.t[-1]) if args.time is None else args.time
    other, eid, dt, mask = g.index.lookup([node], [t_query], cfg.num_neighbors)
    m = mask[0]
    if not m.any():
        raise UsageError(f"node {node} has no neighbors before t={t_query}")
    kernel = model.kernel if model.kernel.family != "none" else KernelSpec("laplacian", model.sigma)
    dt_max = args.dt_max if args.dt_max is not None else 4.0 * kernel.width
    grid = np.linspace(0.0, dt_max, args.grid)
    rows = attention_heatmap(model.params, kernel, model.encoder, model.node_feats[node],
                             model.node_feats[other[0][m]], g.feats[eid[0][m]], dt[0][m], grid)
    write_rows(args.out, ["neighbor", "delta_t", "alpha_std", "alpha_keat", "alpha_diff"], rows)
    print(f"node={node} neighbors={int(m.sum())} grid={len(grid)}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    g = _load_data(args.data)
    mults = [math.inf if x.strip().lower() in ("inf", "infinity") else float(x)
             for x in args.multipliers.split(",") if x.strip()]
    table, long = harness.sweep_sigma(cfg, g, mults, _ints(args.seeds))
    write_rows(args.out, ["multiplier", "mean_test_mrr", "std_test_mrr", "n_seeds"],
               [(r["multiplier"], r["mean_test_mrr"], r["std_test_mrr"], r["n_seeds"]) for r in table])
    if args.long_out:
        write_rows(args.long_out, METRIC_HEADER, long)
    best = max(table, key=lambda r: r["mean_test_mrr"])
    print(f"cells={len(table)} best_multiplier={best['multiplier']}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    g = _load_data(args.data)
    flags = [f.strip() for f in args.flags.split(",") if f.strip()]
    table, long = harness.ablate_modulation(cfg, g, flags, _ints(args.seeds))
    write_rows(args.out, ["flag", "val_mrr_mean", "val_mrr_std", "test_mrr_mean", "test_mrr_std"],
               [(r["flag"], r["val_mrr_mean"], r["val_mrr_std"], r["test_mrr_mean"], r["test_mrr_std"])
                for r in table])
    if args.long_out:
        write_rows(args.long_out, METRIC_HEADER, long)
    print(f"variants={len(table)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = _config_help() + "\n\nThe seed falls back to $KEAT_SEED when --seed is not given."
    p = argparse.ArgumentParser(prog="keat", description="Kernel-modulated temporal graph attention.",
                                epilog=epilog, formatter_class=fmt)
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=epilog, formatter_class=fmt)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None, help="master seed (else $KEAT_SEED, else config)")
        return sp

    def model_opts(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    sp = add("gen-data", cmd_gen_data, "write a synthetic recency-driven event stream as CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--events", type=int, default=10000)
    sp.add_argument("--sources", type=int, default=20)
    sp.add_argument("--destinations", type=int, default=200)
    sp.add_argument("--recency", type=float, default=0.8, help="probability of repeating the last destination")
    sp.add_argument("--d-e", dest="d_e", type=int, default=4, help="edge feature width")
    sp.add_argument("--gap-sigma", type=float, default=harness.DEFAULT_GAP_SIGMA,
                    help="log-scale of the log-normal inter-arrival gaps")

    sp = add("train", cmd_train, "train a link model; writes checkpoint.json, metrics.csv, history.csv")
    model_opts(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--verbose", action="store_true", help="per-epoch progress on stderr")

    sp = add("eval", cmd_eval, "evaluate a checkpoint on a chronological split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--num-negatives", type=int, default=None)
    sp.add_argument("--out", required=True, help="metrics CSV")

    sp = add("analyze", cmd_analyze, "numerical checks of the kernel theory")
    topics = sp.add_subparsers(dest="topic", required=True)

    def topic(name, help_):
        tp = topics.add_parser(name, help=help_, description=help_, epilog=epilog, formatter_class=fmt)
        tp.add_argument("--seed", type=int, default=None)
        tp.add_argument("--out", required=True, help="report CSV")
        return tp

    tp = topic("moments", "moment ratios R_n = E[psi t^n] / E[t^n]")
    tp.add_argument("--dist", choices=sorted(theory.DISTRIBUTIONS), default="exp1")
    tp.add_argument("--kernel", choices=("laplacian", "rbf", "none"), default="laplacian")
    tp.add_argument("--width", type=float, default=1.0, help="kernel width lambda")
    tp.add_argument("--N", type=int, default=12, help="highest order")
    tp.add_argument("--samples", type=int, default=1_000_000)

    tp = topic("variance", "logit variance change Var[X+Y] - Var[X+psi Y] over a fixture grid")
    tp.add_argument("--sigma-x", default="1.0", help="comma-separated values")
    tp.add_argument("--sigma-y", default="3.0")
    tp.add_argument("--rho", default="-1,0,1")
    tp.add_argument("--psi", default="0.25,0.5,1.0")
    tp.add_argument("--samples", type=int, default=1_000_000)

    tp = topic("series", "Taylor coefficients of exp(-lambda t) cos(omega t) against direct evaluation")
    tp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    tp.add_argument("--omega", type=float, default=1.0)
    tp.add_argument("--K", type=int, default=20)
    tp.add_argument("--t", default="0,0.25,0.5,1.0")
    tp.add_argument("--tol", type=float, default=1e-6, help="remainder bound counted as converged")
    tp.add_argument("--coeffs", help="also write k,c_k to this CSV")

    tp = topic("spectral", "spectral entropy of per-node inter-arrival gaps")
    tp.add_argument("--data", required=True)
    tp.add_argument("--nodes", help="comma-separated node ids (default: all with >= 4 events)")
    tp.add_argument("--bins", type=int, default=20)
    tp.add_argument("--hist-out", help="also write the inter-arrival histogram")

    for name, func, help_ in (("heatmap", cmd_heatmap, "attention weight of each neighbor as its dt sweeps a grid"),
                              ("sweep-sigma", cmd_sweep, "test MRR across kernel widths lambda = m * sigma"),
                              ("ablate", cmd_ablate, "test MRR across kernel placement: neither/node/edge/both")):
        sp = add(name, func, help_)
        model_opts(sp)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True, help="table CSV")
        if name == "heatmap":
            sp.add_argument("--checkpoint")
            sp.add_argument("--train-inline", action="store_true", help="train from the config first")
            sp.add_argument("--d_t", "--d-t", dest="d_t", type=int, default=None,
                            help="shorthand for --set time_encoding.d_t=N (with --train-inline)")
            sp.add_argument("--node", type=int, default=None, help="center node (default: last train source)")
            sp.add_argument("--time", type=float, default=None, help="query time (default: last train event)")
            sp.add_argument("--grid", type=int, default=50)
            sp.add_argument("--dt-max", type=float, default=None, help="default: 4 kernel widths")
        else:
            sp.add_argument("--seeds", default="1,2,3,4,5")
            sp.add_argument("--long-out", help="per-run variant,seed,split,metric,value CSV")
            if name == "sweep-sigma":
                sp.add_argument("--multipliers", default="0.25,0.5,1,2,4,inf")
            else:
                sp.add_argument("--flags", default="neither,node,edge,both")
    return p


def _thread_limit(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if getattr(exc, "key", None) else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, KeatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

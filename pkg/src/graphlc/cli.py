"""Command-line entry point: ``graphlc <subcommand> [options]``."""
import argparse
import json
import os
import sys

from . import cavity, experiments, kernel
from .errors import ConfigError, GraphLCError
from .graph import EnsembleSpec


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for replicates (default: all cores)")


def _load(args):
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}", exc.msg) from exc
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    return experiments.parse_config(raw)


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_gen_graph(args):
    if args.config:
        ens = _load(args).ensemble
    else:
        ens = EnsembleSpec(args.kind, args.V, d=args.d, mean_degree=args.mean_degree,
                           alpha=args.alpha, cutoff=args.cutoff)
    seed = args.seed if args.seed is not None else 0
    g = ens.generate(seed)
    out = args.out or "graph.txt"
    _write(out, g.to_edgelist())
    print(f"wrote {out}: V={g.V}, edges={g.n_edges}")


def cmd_tree_kernel(args):
    text = experiments.emit_tree_kernel(args.d, args.a, args.p)
    out = args.out or "tree_kernel.csv"
    _write(out, text)
    print(f"wrote {out}")


def cmd_kernel_stats(args):
    cfg = _load(args)
    stats = experiments.kernel_stats(cfg.ensemble, cfg.kernel, cfg.graphs, cfg.seed)
    lines = ["quantity,value", f"K1_mean,{stats['K1_mean']!r}", f"kappa_mean,{stats['kappa_mean']!r}"]
    ens, k = cfg.ensemble, cfg.kernel
    if ens.kind == "regular" and ens.d >= 3:
        lines.append(f"cycle_threshold,{kernel.cycle_threshold(ens.V, ens.d)!r}")
        tree = kernel.tree_kernel_recursion(ens.d, k.a, k.p).values
        lines.append(f"tree_C1,{float(tree[1]) if k.p else 0.0!r}")
    out = os.path.join(cfg.out, "kernel_stats.csv")
    _write(out, "\n".join(lines) + "\n")
    print(f"wrote {out}")


def _run_only(*preds):
    """Run the config restricted to ``preds``; the first one is the fallback if none is listed."""
    def run(args):
        cfg = _load(args)
        chosen = [p for p in cfg.predictors if p in preds] or [preds[0]]
        cfg.predictors = chosen
        manifest = experiments.run_experiment(cfg, threads=args.threads, only=chosen)
        for f in manifest["files"]:
            print(os.path.join(cfg.out, f))
    return run


def cmd_predict_cavity(args):
    if args.dump_population:
        cfg = _load(args)
        k = cfg.kernel
        dd = cfg.ensemble.degree_distribution()
        kappa = 1.0 if k.normalisation == "raw" else cavity.estimate_kappa_global(dd, k.a, k.p, cfg.population, cfg.seed)
        pop = cavity.GlobalPopulation(dd, k.a, k.p, cfg.sigma2[0], cfg.nu[0], kappa, cfg.population, cfg.seed)
        for _ in range(cfg.population.burn_in):
            pop.sweep()
        lines = ["member,re_V00,im_V00"]
        for i, v in enumerate(pop.members[:, 0, 0]):
            lines.append(f"{i},{float(v.real)!r},{float(v.imag)!r}")
        _write(args.dump_population, "\n".join(lines) + "\n")
        print(f"wrote {args.dump_population}")
    _run_only("cavity")(args)


def cmd_variance_dist(args):
    cfg = _load(args)
    pred, sim = experiments.variance_distributions(cfg, args.nu, bins=args.bins)
    base = os.path.join(cfg.out, "variance_dist")
    tag = f"nu{args.nu:g}"
    _write(os.path.join(base, f"cavity_{tag}.csv"), pred.to_csv())
    _write(os.path.join(base, f"simulate_{tag}.csv"), sim.to_csv())
    print(os.path.join(base, f"cavity_{tag}.csv"))
    print(os.path.join(base, f"simulate_{tag}.csv"))


def build_parser():
    ap = argparse.ArgumentParser(prog="graphlc", description="GP learning curves on random graphs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="sample a random graph and write its edge list")
    _common(p, config_required=False)
    p.add_argument("--kind", choices=EnsembleSpec.KINDS, default="regular")
    p.add_argument("--V", type=int, default=500)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--mean-degree", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=2.5)
    p.add_argument("--cutoff", type=float, default=2.0)
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("tree-kernel", help="tree kernel versus distance for several step counts")
    _common(p, config_required=False)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--p", type=int, nargs="+", default=[1, 2, 5, 10, 20, 50, 100, 500])
    p.set_defaults(func=cmd_tree_kernel)

    p = sub.add_parser("kernel-stats", help="nearest-neighbour kernel correlation and mean prior variance")
    _common(p)
    p.set_defaults(func=cmd_kernel_stats)

    for name, preds, text in [("simulate", ("simulate", "error_variance"), "Monte-Carlo learning curves"),
                              ("predict-eig", ("eig", "eig_tree"), "eigenvalue-approximation curves"),
                              ("master-curve", ("master",), "large-p master curve"),
                              ("mismatch", ("mismatch",), "student/teacher mismatch curves")]:
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=_run_only(*preds))

    p = sub.add_parser("predict-cavity", help="population-dynamics learning curves")
    _common(p)
    p.add_argument("--dump-population", default=None, metavar="PATH",
                   help="also write the (0,0) entries of the burnt-in population")
    p.set_defaults(func=cmd_predict_cavity)

    p = sub.add_parser("variance-dist", help="predicted and simulated posterior-variance histograms")
    _common(p)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--bins", type=int, default=100)
    p.set_defaults(func=cmd_variance_dist)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GraphLCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configs and the runner that writes CSV results plus a manifest.

A config is one JSON document::

    {
      "ensemble": {"kind": "regular", "d": 3},
      "V": 500,
      "kernel": {"a": 2, "p": 10, "normalisation": "global"},
      "sigma2": [0.1, 0.01],
      "nu": [0.1, 1, 5],
      "replicates": {"graphs": 10, "datasets": 5},
      "predictors": ["simulate", "eig", "cavity"],
      "population": {"size": 2000, "burn_in": 200, "sweeps": 500},
      "mismatch": {"student": "global", "teacher": "local"},
      "seed": 1,
      "out": "results"
    }

``ensemble.kind`` is ``regular`` (``d``), ``erdos_renyi`` (``mean_degree``)
or ``grg_powerlaw`` (``alpha``, ``cutoff``). ``mismatch`` and
``population`` are optional. Results go to ``<out>/<predictor>/<sigma2>.csv``.
"""
from dataclasses import dataclass, field, asdict
import hashlib
import json
import os
import time

import numpy as np

from . import cavity, eigcurve, gp, kernel
from .errors import ConfigError
from .graph import EnsembleSpec

PREDICTORS = ("simulate", "eig", "eig_tree", "cavity", "master", "mismatch", "error_variance")


@dataclass
class ExperimentConfig:
    ensemble: EnsembleSpec
    kernel: kernel.KernelSpec
    sigma2: list
    nu: list
    graphs: int = 10
    datasets: int = 5
    predictors: list = field(default_factory=lambda: ["simulate"])
    mismatch: dict = None
    population: cavity.PopulationConfig = field(default_factory=cavity.PopulationConfig)
    seed: int = 0
    out: str = "results"
    raw: dict = field(default_factory=dict, repr=False)

    def hash(self):
        return config_hash(self.raw)


def config_hash(raw):
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _num(d, key, path, kind=float, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}" if path else key, "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}.{key}" if path else key, f"expected an integer, got {v!r}")
    return kind(v)


def _num_list(raw, key):
    v = raw.get(key)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a non-empty list of numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{key}[{i}]", f"expected a number, got {x!r}")
        out.append(float(x))
    return out


def parse_config(raw):
    """Validate a config dict; errors name the offending field (e.g. ``kernel.a``)."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    ens = raw.get("ensemble")
    if not isinstance(ens, dict):
        raise ConfigError("ensemble", "missing or not an object")
    kind = ens.get("kind")
    if kind not in EnsembleSpec.KINDS:
        raise ConfigError("ensemble.kind", f"must be one of {', '.join(EnsembleSpec.KINDS)}")
    V = _num(raw, "V", "", int)
    if V < 2:
        raise ConfigError("V", "need at least 2 vertices")
    kw = {}
    if kind == "regular":
        kw["d"] = _num(ens, "d", "ensemble", int)
        if kw["d"] < 1 or kw["d"] >= V or (kw["d"] * V) % 2:
            raise ConfigError("ensemble.d", "need 1 <= d < V with V*d even")
    elif kind == "erdos_renyi":
        kw["mean_degree"] = _num(ens, "mean_degree", "ensemble")
        if kw["mean_degree"] < 0:
            raise ConfigError("ensemble.mean_degree", "must be non-negative")
    else:
        kw["alpha"] = _num(ens, "alpha", "ensemble")
        kw["cutoff"] = _num(ens, "cutoff", "ensemble")
        if kw["alpha"] <= 2:
            raise ConfigError("ensemble.alpha", "must exceed 2")
        if kw["cutoff"] <= 0:
            raise ConfigError("ensemble.cutoff", "must be positive")
    ensemble = EnsembleSpec(kind, V, **kw)

    kd = raw.get("kernel")
    if not isinstance(kd, dict):
        raise ConfigError("kernel", "missing or not an object")
    a = _num(kd, "a", "kernel")
    if not a >= 2:
        raise ConfigError("kernel.a", f"must be at least 2, got {a}")
    p = _num(kd, "p", "kernel", int)
    if p < 0:
        raise ConfigError("kernel.p", "must be non-negative")
    norm = kd.get("normalisation", "global")
    if norm not in kernel.NORMALISATIONS:
        raise ConfigError("kernel.normalisation", f"must be one of {', '.join(kernel.NORMALISATIONS)}")
    c = _num(kd, "c", "kernel", default=1.0)
    if not c > 0:
        raise ConfigError("kernel.c", "must be positive")
    kspec = kernel.KernelSpec(a, p, norm, c)

    sigma2 = _num_list(raw, "sigma2")
    for i, s in enumerate(sigma2):
        if not s > 0:
            raise ConfigError(f"sigma2[{i}]", "must be positive")
    nu = _num_list(raw, "nu")
    for i, x in enumerate(nu):
        if x < 0:
            raise ConfigError(f"nu[{i}]", "must be non-negative")

    rep = raw.get("replicates", {})
    if not isinstance(rep, dict):
        raise ConfigError("replicates", "must be an object")
    graphs = _num(rep, "graphs", "replicates", int, 10)
    datasets = _num(rep, "datasets", "replicates", int, 5)
    if graphs < 1:
        raise ConfigError("replicates.graphs", "must be at least 1")
    if datasets < 1:
        raise ConfigError("replicates.datasets", "must be at least 1")

    preds = raw.get("predictors", ["simulate"])
    if not isinstance(preds, list) or not preds:
        raise ConfigError("predictors", "must be a non-empty list")
    for i, pr in enumerate(preds):
        if pr not in PREDICTORS:
            raise ConfigError(f"predictors[{i}]", f"unknown predictor {pr!r}")
    if kind != "regular" and ("eig_tree" in preds or "master" in preds):
        raise ConfigError("predictors", "eig_tree and master need a regular ensemble")

    mm = raw.get("mismatch")
    if mm is not None:
        if not isinstance(mm, dict):
            raise ConfigError("mismatch", "must be an object")
        for role in ("student", "teacher"):
            if mm.get(role) not in kernel.NORMALISATIONS:
                raise ConfigError(f"mismatch.{role}", "must be a normalisation name")
    if "mismatch" in preds and mm is None:
        raise ConfigError("mismatch", "required by the mismatch predictor")

    pd = raw.get("population", {})
    if not isinstance(pd, dict):
        raise ConfigError("population", "must be an object")
    pop = cavity.PopulationConfig(
        size=_num(pd, "size", "population", int, 2000),
        burn_in=_num(pd, "burn_in", "population", int, 200),
        sweeps=_num(pd, "sweeps", "population", int, 500),
    )
    if pop.size < 2:
        raise ConfigError("population.size", "must be at least 2")
    if pop.sweeps < 1:
        raise ConfigError("population.sweeps", "must be at least 1")

    seed = _num(raw, "seed", "", int, 0)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    out = raw.get("out", "results")
    if not isinstance(out, str):
        raise ConfigError("out", "must be a string")
    return ExperimentConfig(ensemble, kspec, sigma2, nu, graphs, datasets, list(preds), mm, pop,
                            seed, out, raw)


def load_config(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}", exc.msg) from exc
    return parse_config(raw)


def sigma_label(s2):
    return f"{s2:g}"


def _eig_empirical(cfg, s2):
    """Eigenvalue approximation on actual graph spectra, averaged over ``graphs`` instances."""
    curves = []
    for gi in range(cfg.graphs):
        g = cfg.ensemble.generate(gp.replicate_seed(cfg.seed, gi))
        spec = eigcurve.kernel_spectrum(cfg.kernel.build(g))
        curves.append(eigcurve.eig_learning_curve(spec, cfg.nu, s2).epsilon)
    table = np.array(curves)
    err = table.std(axis=0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 else None
    return gp.LearningCurve(cfg.nu, table.mean(axis=0), err, dict(predictor="eig", sigma2=s2))


def _cavity(cfg, s2):
    dd = cfg.ensemble.degree_distribution()
    k = cfg.kernel
    if k.normalisation == "local":
        return cavity.cavity_learning_curve("local", dd, k.a, k.p, s2, cfg.nu, k.c, cfg.population,
                                            cfg.seed)
    kappa = 1.0 if k.normalisation == "raw" else None
    return cavity.cavity_learning_curve("global", dd, k.a, k.p, s2, cfg.nu, k.c, cfg.population,
                                        cfg.seed, kappa=kappa)


def run_experiment(cfg, threads=1, only=None):
    """Run the configured predictors; returns the manifest (also written to ``manifest.json``)."""
    preds = [p for p in cfg.predictors if only is None or p in only]
    if not preds:
        raise ConfigError("predictors", "no predictor left to run")
    os.makedirs(cfg.out, exist_ok=True)
    files, walls = [], {}
    ens = cfg.ensemble

    def emit(pred, s2, curve):
        d = os.path.join(cfg.out, pred)
        os.makedirs(d, exist_ok=True)
        path = os.path.join(d, f"{sigma_label(s2)}.csv")
        curve.write(path)
        files.append(os.path.relpath(path, cfg.out))

    for pred in preds:
        t0 = time.perf_counter()
        if pred == "simulate":
            curves = gp.simulate_learning_curves(ens, cfg.kernel, cfg.sigma2, cfg.nu, cfg.graphs,
                                                 cfg.datasets, cfg.seed, threads)
            for s2 in cfg.sigma2:
                emit(pred, s2, curves[s2])
        elif pred == "mismatch":
            student = kernel.KernelSpec(cfg.kernel.a, cfg.kernel.p, cfg.mismatch["student"], cfg.kernel.c)
            teacher = kernel.KernelSpec(cfg.kernel.a, cfg.kernel.p, cfg.mismatch["teacher"], cfg.kernel.c)
            for s2 in cfg.sigma2:
                emit(pred, s2, gp.mismatch_learning_curve(student, teacher, ens, s2, cfg.nu, cfg.graphs,
                                                          cfg.datasets, cfg.seed, threads))
        elif pred == "error_variance":
            for s2 in cfg.sigma2:
                emit(pred, s2, gp.error_variance_curve(ens, cfg.kernel, s2, cfg.nu, cfg.graphs,
                                                       cfg.datasets, cfg.seed, threads))
        elif pred == "eig":
            for s2 in cfg.sigma2:
                emit(pred, s2, _eig_empirical(cfg, s2))
        elif pred == "eig_tree":
            for s2 in cfg.sigma2:
                emit(pred, s2, eigcurve.tree_eig_curve(ens.d, cfg.kernel.a, cfg.kernel.p, s2, cfg.nu))
        elif pred == "master":
            for s2 in cfg.sigma2:
                emit(pred, s2, eigcurve.master_curve(ens.d, cfg.kernel.a, cfg.kernel.p, s2, cfg.nu))
        elif pred == "cavity":
            for s2 in cfg.sigma2:
                emit(pred, s2, _cavity(cfg, s2))
        walls[pred] = time.perf_counter() - t0

    manifest = dict(
        config_hash=cfg.hash(),
        config=cfg.raw,
        files=files,
        seeds=dict(root=cfg.seed, graphs=cfg.graphs, datasets=cfg.datasets,
                   population=asdict(cfg.population)),
        wall_times=walls,
    )
    with open(os.path.join(cfg.out, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def emit_tree_kernel(d, a, p_list):
    """CSV of the tree kernel versus distance: one column per ``p`` plus the large-``p`` limit."""
    p_list = [int(p) for p in p_list]
    lmax = max(p_list) if p_list else 0
    cols = [kernel.tree_kernel_recursion(d, a, p).values for p in p_list]
    lines = ["l," + ",".join(f"p={p}" for p in p_list) + ",p=inf"]
    for l in range(lmax + 1):
        row = [str(l)]
        for col in cols:
            row.append(repr(float(col[l])) if l < col.size else "0.0")
        row.append(repr(float(kernel.tree_kernel_limit(d, l))))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def kernel_stats(ensemble, kspec, graphs, seed):
    """Nearest-neighbour kernel correlation and average raw prior variance over random graphs."""
    k1, diag = [], []
    for gi in range(graphs):
        g = ensemble.generate(gp.replicate_seed(seed, gi))
        raw = kernel.random_walk_kernel(g, kspec.a, kspec.p, "raw")
        k1.append(kernel.neighbor_kernel_average(raw, g))
        diag.append(float(np.mean(raw.diagonal)))
    return dict(K1_mean=float(np.mean(k1)), K1_values=k1, kappa_mean=float(np.mean(diag)),
                kappa_values=diag)


def variance_distributions(cfg, nu, bins=100, seed_offset=0):
    """Predicted (cavity) and simulated histograms of local posterior variances at one ``nu``.

    Uses the first noise level of the config; ``nu = 0`` gives prior variances.
    """
    s2 = cfg.sigma2[0]
    k = cfg.kernel
    dd = cfg.ensemble.degree_distribution()
    mode = "local" if k.normalisation == "local" else "global"
    sim = gp.simulated_posterior_variances(cfg.ensemble, k, s2, nu, cfg.graphs, cfg.seed)
    kappa = None if k.normalisation == "global" else 1.0
    if mode == "global" and kappa is None:
        kappa = cavity.estimate_kappa_global(dd, k.a, k.p, cfg.population, cfg.seed + seed_offset) / k.c
    if mode == "global":
        _, pred = cavity.population_dynamics_global(dd, k.a, k.p, s2, nu, kappa, cfg.population, cfg.seed)
    else:
        _, pred = cavity.population_dynamics_local(dd, k.a, k.p, s2, nu, k.c, cfg.population, cfg.seed)
    hi = float(max(sim.max(), pred.max()))
    rng_ = (0.0, hi * (1 + 1e-9))
    return (gp.Histogram.from_samples(pred, bins, rng_), gp.Histogram.from_samples(sim, bins, rng_))

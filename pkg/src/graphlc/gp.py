"""Exact GP regression on graph vertices and Monte-Carlo learning curves.

Training inputs are vertex indices drawn with replacement, so repeated inputs
are common once ``N`` is comparable to ``V``. Observing vertex ``s`` ``n_s``
times with noise ``sigma2`` carries the same information as observing it once
with noise ``sigma2 / n_s``; the Bayes-error routines use that to work with at
most ``V`` distinct inputs.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import os

import numpy as np

from . import linalg
from .curves import Histogram, LearningCurve
from .errors import BadParameter, DimensionMismatch
from .graph import make_rng
from .kernel import KernelMatrix


@dataclass
class Dataset:
    """Training inputs ``x`` (vertex indices, repeats allowed) and outputs ``y``."""

    x: np.ndarray
    y: np.ndarray
    noise: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape != self.y.shape:
            raise DimensionMismatch("x and y must have equal length")
        if not self.noise > 0:
            raise BadParameter("noise variance must be positive")

    def validate(self, V):
        if self.x.size and (self.x.min() < 0 or self.x.max() >= V):
            raise DimensionMismatch(f"input index outside [0, {V})")


def _entries(k):
    return k.entries if isinstance(k, KernelMatrix) else np.asarray(k, dtype=float)


def gp_posterior(k, data):
    """Posterior mean and variance at every vertex, from the full ``N x N`` system."""
    C = _entries(k)
    V = C.shape[0]
    data.validate(V)
    if data.x.size == 0:
        return np.zeros(V), np.diagonal(C).copy()
    K = C[np.ix_(data.x, data.x)] + data.noise * np.eye(data.x.size)
    f = linalg.chol_factor(K)
    kv = C[data.x, :]
    mean = kv.T @ linalg.solve_spd(f, data.y)
    half = linalg.half_solve(f, kv)
    var = np.diagonal(C) - np.einsum("ij,ij->j", half, half)
    return mean, var


def collapse_inputs(x):
    """Distinct input vertices and their multiplicities."""
    return np.unique(np.asarray(x, dtype=np.int64), return_counts=True)


def posterior_variances(k, x, sigma2):
    """Per-vertex posterior variances; independent of the outputs."""
    C = _entries(k)
    sites, counts = collapse_inputs(x)
    if sites.size and (sites[0] < 0 or sites[-1] >= C.shape[0]):
        raise DimensionMismatch("input index out of range")
    prior = np.diagonal(C).copy()
    if sites.size == 0:
        return prior
    K = C[np.ix_(sites, sites)] + np.diag(sigma2 / counts)
    f = linalg.chol_factor(K)
    half = linalg.half_solve(f, C[sites, :])
    return prior - np.einsum("ij,ij->j", half, half)


def bayes_error_exact(k, x, sigma2):
    """Bayes error: posterior variance averaged over vertices."""
    return float(np.mean(posterior_variances(k, x, sigma2)))


def sample_gp_prior(k, seed, size=None):
    """Draw from ``N(0, C)`` through the symmetric eigendecomposition of ``C``.

    Returns one length-``V`` sample, or ``(size, V)`` samples when ``size`` is given.
    """
    C = _entries(k)
    w, U = linalg.sym_eigen(C, vectors=True)
    root = U * np.sqrt(np.clip(w, 0.0, None))
    rng = make_rng(seed)
    z = rng.standard_normal((1 if size is None else size, C.shape[0]))
    out = z @ root.T
    return out[0] if size is None else out


def replicate_seed(seed, g_idx, s_idx=None):
    """Stream for graph ``g_idx`` (and dataset ``s_idx``) derived from the root seed."""
    key = (g_idx,) if s_idx is None else (g_idx, s_idx)
    return np.random.SeedSequence(seed, spawn_key=key)


def _n_from_nu(nu_grid, V):
    return [int(round(nu * V)) for nu in nu_grid]


def _map(fn, items, threads):
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _curve(nu_grid, table, meta):
    """Reduce a ``(replicates, len(nu))`` table to a LearningCurve."""
    table = np.asarray(table)
    n = table.shape[0]
    mean = table.mean(axis=0)
    err = table.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return LearningCurve(np.asarray(nu_grid, dtype=float), mean, err, dict(meta))


def _replicate_tasks(graphs, datasets):
    return [(gi, si) for gi in range(graphs) for si in range(datasets)]


def simulate_learning_curves(ensemble, kernel_spec, sigma2_list, nu_grid, graphs=10,
                             datasets=5, seed=0, threads=1):
    """Matched-case learning curves for several noise levels from shared replicates.

    Each of ``graphs`` random graphs carries ``datasets`` input sequences; the
    inputs for a given ``nu`` are a prefix of one long sequence, so each
    replicate's curve is a nested series of training sets.
    """
    nus = list(nu_grid)
    sig = list(sigma2_list)
    Ns = _n_from_nu(nus, ensemble.V)
    kernels = {}

    def kernel_for(gi):
        if gi not in kernels:
            g = ensemble.generate(replicate_seed(seed, gi))
            kernels[gi] = kernel_spec.build(g)
        return kernels[gi]

    # build kernels serially so the cache is filled deterministically
    for gi in range(graphs):
        kernel_for(gi)

    def task(ij):
        gi, si = ij
        k = kernels[gi]
        rng = make_rng(replicate_seed(seed, gi, si))
        x = rng.integers(0, k.V, size=max(Ns) if Ns else 0)
        return [[bayes_error_exact(k, x[:n], s2) for n in Ns] for s2 in sig]

    res = np.array(_map(task, _replicate_tasks(graphs, datasets), threads))
    meta = dict(ensemble=ensemble.describe(), kernel=str(kernel_spec), graphs=graphs,
                datasets=datasets, seed=seed)
    return {s2: _curve(nus, res[:, i, :], dict(meta, sigma2=s2)) for i, s2 in enumerate(sig)}


def simulate_learning_curve(ensemble, kernel_spec, sigma2, nu_grid, graphs=10, datasets=5,
                            seed=0, threads=1):
    """Matched-case learning curve: Bayes error averaged over graphs and input draws."""
    return simulate_learning_curves(ensemble, kernel_spec, [sigma2], nu_grid, graphs,
                                    datasets, seed, threads)[sigma2]


def mismatch_errors(student, teacher, x, sigma2):
    """Per-vertex expected squared error of the student mean against a teacher draw.

    The teacher function ``g ~ N(0, T)`` and the output noise ``N(0, sigma2)``
    are averaged analytically.
    """
    S = _entries(student)
    T = _entries(teacher)
    sites, counts = collapse_inputs(x)
    prior = np.diagonal(T).copy()
    if sites.size == 0:
        return prior
    noise = np.diag(sigma2 / counts)
    f = linalg.chol_factor(S[np.ix_(sites, sites)] + noise)
    B = linalg.solve_spd(f, S[sites, :]).T  # V x |sites|
    cross = np.einsum("js,sj->j", B, T[sites, :])
    quad = np.einsum("js,st,jt->j", B, T[np.ix_(sites, sites)] + noise, B, optimize=True)
    return prior - 2 * cross + quad


def mismatch_learning_curve(student_spec, teacher_spec, ensemble, sigma2, nu_grid, graphs=10,
                            datasets=5, seed=0, threads=1):
    """Generalisation error of a student GP learning from a teacher with a different kernel."""
    nus = list(nu_grid)
    Ns = _n_from_nu(nus, ensemble.V)
    pairs = {}
    for gi in range(graphs):
        g = ensemble.generate(replicate_seed(seed, gi))
        pairs[gi] = (student_spec.build(g), teacher_spec.build(g))

    def task(ij):
        gi, si = ij
        st, te = pairs[gi]
        rng = make_rng(replicate_seed(seed, gi, si))
        x = rng.integers(0, st.V, size=max(Ns) if Ns else 0)
        return [float(np.mean(mismatch_errors(st, te, x[:n], sigma2))) for n in Ns]

    res = _map(task, _replicate_tasks(graphs, datasets), threads)
    meta = dict(ensemble=ensemble.describe(), student=str(student_spec), teacher=str(teacher_spec),
                sigma2=sigma2, graphs=graphs, datasets=datasets, seed=seed)
    return _curve(nus, res, meta)


def posterior_variance_stats(k, x, sigma2, bins=50):
    """Mean and across-vertex variance of the posterior variances, plus their histogram."""
    var = posterior_variances(k, x, sigma2)
    return float(var.mean()), float(var.var()), Histogram.from_samples(var, bins=bins)


def error_variance_curve(ensemble, kernel_spec, sigma2, nu_grid, graphs=10, datasets=5, seed=0,
                         threads=1):
    """Across-vertex variance of the posterior variances, averaged over replicates, versus ``nu``."""
    nus = list(nu_grid)
    Ns = _n_from_nu(nus, ensemble.V)
    kernels = [kernel_spec.build(ensemble.generate(replicate_seed(seed, gi))) for gi in range(graphs)]

    def task(ij):
        gi, si = ij
        k = kernels[gi]
        rng = make_rng(replicate_seed(seed, gi, si))
        x = rng.integers(0, k.V, size=max(Ns) if Ns else 0)
        return [float(np.var(posterior_variances(k, x[:n], sigma2))) for n in Ns]

    res = _map(task, _replicate_tasks(graphs, datasets), threads)
    meta = dict(ensemble=ensemble.describe(), kernel=str(kernel_spec), sigma2=sigma2,
                graphs=graphs, datasets=datasets, seed=seed, quantity="posterior variance spread")
    return _curve(nus, res, meta)


def simulated_posterior_variances(ensemble, kernel_spec, sigma2, nu, graphs=1, seed=0):
    """Pooled per-vertex posterior variances over random graphs and inputs at one ``nu``."""
    out = []
    for gi in range(graphs):
        k = kernel_spec.build(ensemble.generate(replicate_seed(seed, gi)))
        rng = make_rng(replicate_seed(seed, gi, 0))
        x = rng.integers(0, k.V, size=int(round(nu * k.V)))
        out.append(posterior_variances(k, x, sigma2))
    return np.concatenate(out)


def _inv_sqrt_psd(K):
    w, U = linalg.sym_eigen(K, vectors=True)
    return (U / np.sqrt(w)) @ U.T


def prediction_diagnostics(student, teacher, data, seed=None):
    """Decompose the posterior mean as ``M @ z``.

    ``M = C_{V,x} K^{-1/2}`` and ``z = K^{-1/2} y`` with ``K = C_{xx} + sigma2 I``
    the student's training covariance and ``K^{-1/2}`` its symmetric inverse
    root. With a ``seed`` the outputs are redrawn from the teacher prior plus
    noise; otherwise ``data.y`` is used. Returns ``(M, z, z**2)``.
    """
    S = _entries(student)
    data.validate(S.shape[0])
    y = data.y
    if seed is not None:
        rng = make_rng(seed)
        g = sample_gp_prior(teacher, rng)
        y = g[data.x] + np.sqrt(data.noise) * rng.standard_normal(data.x.size)
    K = S[np.ix_(data.x, data.x)] + data.noise * np.eye(data.x.size)
    R = _inv_sqrt_psd(K)
    M = S[:, data.x] @ R
    z = R @ y
    return M, z, z * z


def column_mass_vertices(M, col, top=5):
    """Vertices carrying the ``top`` largest absolute entries of column ``col`` of ``M``."""
    return np.argsort(-np.abs(M[:, col]), kind="stable")[:top]


def dangling_vertices(g):
    """Vertices on dangling ends: degree-<=2 chains that terminate in a leaf.

    Walks inward from each leaf through degree-2 vertices and marks every
    vertex visited, including the leaf.
    """
    deg = g.degrees
    marked = np.zeros(g.V, dtype=bool)
    for leaf in np.nonzero(deg == 1)[0]:
        prev, cur = -1, leaf
        while True:
            marked[cur] = True
            nb = [v for v in g.neighbors(cur) if v != prev]
            if not nb:
                break
            nxt = nb[0]
            if deg[nxt] != 2 or marked[nxt]:
                if deg[nxt] <= 2:
                    marked[nxt] = True
                break
            prev, cur = cur, nxt
    return marked

"""Cavity (belief propagation) prediction of GP learning curves on sparse graphs.

The kernel ``sum_q c_q (A_norm)^q`` is represented as a Gaussian graphical
model over per-vertex variables ``h^0..h^p`` and conjugate variables
``hhat^1..hhat^p``. Messages along directed edges are complex symmetric
``(2p+1) x (2p+1)`` covariances. Slots ``0..p`` hold the ``h`` variables and
slots ``p+1..2p`` the ``hhat`` variables.

A vertex of degree ``d`` with ``n`` training examples contributes
``d (B + kappa / (n / sigma2 + lam) e0 e0^T)``, where ``B`` carries the kernel
weights and the ``h``/``hhat`` couplings. ``lam -> 0`` is taken analytically
with the Woodbury identity, so vertices without data need no regulariser.

Two solvers share the same local update:

* ``bp_single_graph`` iterates messages on one graph (exact on trees);
* population dynamics sample the message distribution of a degree ensemble.
"""
from dataclasses import dataclass
import warnings

import numpy as np
from scipy import stats

from . import linalg
from .curves import Histogram, LearningCurve
from .errors import BadParameter, ConvergenceWarning, DegreeMismatch, NoConvergence, Singular
from .graph import DegreeDistribution, make_rng
from .kernel import binomial_weights

BP_TOL = 1e-10
BP_MAX_SWEEPS = 500
DRIFT_TOL = 1e-3


def base_matrix(a, p):
    """Per-unit-degree block: kernel weights in row/column 0 and ``-i`` couplings."""
    c = binomial_weights(a, p)
    m = 2 * p + 1
    B = np.zeros((m, m), dtype=complex)
    B[0, 0] = c[0]
    q = np.arange(1, p + 1)
    B[0, q] = B[q, 0] = c[1:] / 2
    B[q, p + q] = B[p + q, q] = -1j
    return B


def exchange_matrix(p):
    """Constant matrix ``X`` linking slot ``q`` to slot ``p+1+q``, ``q = 0..p-1``."""
    m = 2 * p + 1
    X = np.zeros((m, m), dtype=complex)
    q = np.arange(p)
    X[q, p + 1 + q] = X[p + 1 + q, q] = 1j
    return X


def _exchange_perm(p):
    """Index map with ``(X V X)[a, b] = -Vpad[perm[a], perm[b]]``; slot ``p`` maps to padding."""
    m = 2 * p + 1
    perm = np.full(m, m)  # m indexes the zero padding row/column
    q = np.arange(p)
    perm[q] = p + 1 + q
    perm[p + 1 + q] = q
    return perm


def apply_exchange(Vs, p):
    """``X V X`` for one matrix or a stack, by index permutation."""
    Vs = np.asarray(Vs)
    perm = _exchange_perm(p)
    pad = [(0, 0)] * (Vs.ndim - 2) + [(0, 1), (0, 1)]
    Vp = np.pad(Vs, pad)
    return -Vp[..., perm[:, None], perm[None, :]]


@dataclass(frozen=True)
class CavityMatrices:
    """``O`` (with data term), ``M`` (without it), the constant ``X`` and the base block ``B``."""

    O: np.ndarray
    M: np.ndarray
    X: np.ndarray
    B: np.ndarray
    p: int


def build_cavity_matrices(d, a, p, kappa, n, sigma2, lam):
    if d < 1:
        raise BadParameter("cavity matrices need d >= 1; isolated vertices are handled separately")
    if a < 2:
        raise BadParameter("need a >= 2")
    if n == 0 and lam <= 0:
        raise BadParameter("a vertex without data needs lam > 0; use the Woodbury form for lam -> 0")
    B = base_matrix(a, p)
    M = d * B
    O = M.copy()
    O[0, 0] += d * kappa / (n / sigma2 + lam)
    return CavityMatrices(O, M, exchange_matrix(p), B, p)


def _woodbury(Minv, s):
    """``(M + e0 e0^T / s)^{-1}`` via Woodbury; ``s = 0`` is the no-data limit. Works on stacks."""
    col = Minv[..., :, 0]
    row = Minv[..., 0, :]
    denom = np.asarray(s) + Minv[..., 0, 0]
    V = Minv - col[..., :, None] * row[..., None, :] / denom[..., None, None]
    return 0.5 * (V + np.swapaxes(V, -1, -2))


def cavity_update(incoming, m, n, d, kappa, sigma2):
    """New message from a degree-``d`` vertex given its ``d - 1`` other incoming messages."""
    if len(incoming) != d - 1:
        raise DegreeMismatch(f"expected {d - 1} incoming messages, got {len(incoming)}")
    M = d * m.B
    for Vk in incoming:
        M = M - apply_exchange(Vk, m.p)
    Minv = linalg.complex_inverse(M)
    return _woodbury(Minv, (n / sigma2) / (d * kappa))


def local_error(incoming, B, p, n, kappa, sigma2, c0):
    """Posterior variance at a vertex from all of its incoming messages."""
    d = len(incoming)
    if d == 0:
        return 1.0 / (n / sigma2 + kappa / c0)
    M = d * B
    for Vk in incoming:
        M = M - apply_exchange(Vk, p)
    Minv = linalg.complex_inverse(M)
    return 1.0 / (n / sigma2 + d * kappa * Minv[0, 0].real)


# ---------------------------------------------------------------- single graph

def _reverse_index(g):
    """For each CSR slot ``e = (i -> j)`` the slot of ``j -> i``."""
    rows = np.repeat(np.arange(g.V), g.degrees)
    key = rows * g.V + g.indices
    rkey = g.indices * g.V + rows
    order = np.argsort(key)
    return order[np.searchsorted(key[order], rkey)]


def _segment_sum(stack, starts, counts, take=None):
    """Sum consecutive blocks of a stack; empty segments give zero.

    With ``take``, segment ``b`` sums ``stack[take[starts[b]:starts[b] + counts[b]]]``.
    """
    counts = np.asarray(counts)
    starts = np.asarray(starts)
    out = np.zeros((len(counts),) + stack.shape[1:], dtype=stack.dtype)
    # segments of equal length are summed together with one fancy index
    for c in np.unique(counts):
        if c == 0:
            continue
        sel = np.nonzero(counts == c)[0]
        idx = starts[sel][:, None] + np.arange(c)[None, :]
        if take is not None:
            idx = take[idx]
        out[sel] = stack[idx].sum(axis=1)
    return out


def bp_single_graph(g, n, kappa, a, p, sigma2, tol=BP_TOL, max_sweeps=BP_MAX_SWEEPS):
    """Per-vertex posterior variances from belief propagation on ``g``.

    ``n`` holds example counts and ``kappa`` the per-vertex prior scale: the
    prior covariance is ``diag(kappa)^{-1/2} C_raw diag(kappa)^{-1/2}``.
    Messages are updated in parallel (flooding) from zero until the largest
    entrywise change falls below ``tol`` times ``max(1, largest entry)``;
    entries grow like ``1 / sigma2`` so a purely absolute test would sit
    below rounding noise.
    """
    n = np.asarray(n, dtype=float)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (g.V,))
    if n.shape != (g.V,):
        raise BadParameter("need one example count per vertex")
    B = base_matrix(a, p)
    m = 2 * p + 1
    deg = g.degrees
    starts = g.indptr[:-1]
    rows = np.repeat(np.arange(g.V), deg)
    rev = _reverse_index(g)
    E = g.indices.size
    # message slot e travels from rows[e] to indices[e]
    msgs = np.zeros((E, m, m), dtype=complex)
    d_src = deg[rows].astype(float)
    s_src = (n[rows] / sigma2) / (d_src * kappa[rows]) if E else np.zeros(0)
    resid = 0.0
    for sweep in range(max_sweeps):
        xvx = apply_exchange(msgs, p)
        # messages arriving at vertex j sit in the reverse slots of row j
        total = _segment_sum(xvx, starts, deg, rev)
        M = d_src[:, None, None] * B - total[rows] + xvx[rev]
        new = _woodbury(linalg.complex_inverse_batch(M), s_src) if E else msgs
        resid = float(np.max(np.abs(new - msgs)) / max(1.0, np.max(np.abs(new)))) if E else 0.0
        msgs = new
        if resid < tol:
            break
    else:
        raise NoConvergence(f"BP did not converge in {max_sweeps} sweeps", residual=resid)
    xvx = apply_exchange(msgs, p)
    total = _segment_sum(xvx, starts, deg, rev)
    err = np.empty(g.V)
    iso = deg == 0
    c0 = binomial_weights(a, p)[0]
    err[iso] = 1.0 / (n[iso] / sigma2 + kappa[iso] / c0)
    conn = ~iso
    if conn.any():
        Md = deg[conn, None, None] * B - total[conn]
        inv00 = linalg.complex_inverse_batch(Md)[:, 0, 0]
        err[conn] = 1.0 / (n[conn] / sigma2 + deg[conn] * kappa[conn] * inv00.real)
    return err


# ---------------------------------------------------------- population dynamics

@dataclass
class PopulationConfig:
    """Population size and sweep counts; one sweep replaces ``size`` members."""

    size: int = 2000
    burn_in: int = 200
    sweeps: int = 500
    batch_fraction: float = 0.25


class _Population:
    """Shared machinery: batched gather, update and measurement."""

    def __init__(self, dd, a, p, sigma2, nu, cfg, seed):
        if not isinstance(dd, DegreeDistribution):
            raise BadParameter("need a DegreeDistribution")
        self.dd = dd
        self.edge = dd.edge_biased() if dd.mean > 0 else None
        self.a, self.p, self.sigma2, self.nu = a, p, sigma2, nu
        self.cfg = cfg
        self.rng = make_rng(seed)
        self.B = base_matrix(a, p)
        self.c0 = binomial_weights(a, p)[0]
        self.m = 2 * p + 1
        self.batch = max(1, int(round(cfg.size * cfg.batch_fraction)))
        self.sweep_count = 0

    def _initial(self, d):
        Minv = linalg.complex_inverse(d * self.B)
        return _woodbury(Minv, 0.0)

    def _draw_degrees(self, dist, k):
        return self.rng.choice(dist.support, size=k, p=dist.probs)

    def _draw_counts(self, k):
        return self.rng.poisson(self.nu, size=k).astype(float)

    def _gather(self, pop, counts):
        """Random members, ``counts[b]`` for slot ``b``; returns their ``X V X`` sum per slot."""
        total = int(counts.sum())
        idx = self.rng.integers(0, pop.shape[0], size=total)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        summed = _segment_sum(pop, starts, counts, idx)
        return apply_exchange(summed, self.p), idx, starts

    def _inverse(self, degs, xsum):
        M = degs[:, None, None] * self.B - xsum
        return linalg.complex_inverse_batch(M)

    def _inv00(self, degs, xsum):
        """``(M^{-1})_00`` only, from one linear solve per matrix."""
        M = degs[:, None, None] * self.B - xsum
        e0 = np.zeros(M.shape[:2] + (1,), dtype=complex)
        e0[:, 0, 0] = 1.0
        sol = np.linalg.solve(M, e0)[:, 0, 0]
        if not np.all(np.isfinite(sol)):
            raise Singular("non-finite entries in batched solve")
        return sol.real

    def _replace(self, pop, new):
        slots = self.rng.permutation(pop.shape[0])[:new.shape[0]]
        pop[slots] = new


def poisson_average(nu, sigma2, precision):
    """``E_n[1 / (n / sigma2 + precision)]`` for ``n ~ Poisson(nu)``, elementwise in ``precision``."""
    precision = np.asarray(precision, dtype=float)
    if nu == 0:
        return 1.0 / precision
    nmax = int(nu + 12 * np.sqrt(nu) + 25)
    n = np.arange(nmax + 1)
    w = stats.poisson.pmf(n, nu)
    return (w[None, :] / (n[None, :] / sigma2 + precision[:, None])).sum(axis=1) / w.sum()


def _check_drift(samples, label):
    """Warn when the two halves of the measurement phase disagree."""
    half = len(samples) // 2
    if half == 0:
        return
    first, second = np.mean(samples[:half]), np.mean(samples[half:])
    scale = max(abs(second), 1e-300)
    if abs(first - second) / scale > DRIFT_TOL:
        warnings.warn(f"{label}: running mean drifted by {abs(first - second) / scale:.2e} "
                      f"(tolerance {DRIFT_TOL:g})", ConvergenceWarning, stacklevel=3)


class GlobalPopulation(_Population):
    """Population of single messages for a globally normalised kernel."""

    def __init__(self, dd, a, p, sigma2, nu, kappa, cfg=None, seed=0):
        super().__init__(dd, a, p, sigma2, nu, cfg or PopulationConfig(), seed)
        self.kappa = kappa
        start = max(dd.mode, 1)
        self.members = np.repeat(self._initial(start)[None], self.cfg.size, axis=0)

    def step(self):
        k = self.batch
        degs = self._draw_degrees(self.edge, k)
        n = self._draw_counts(k)
        xsum, _, _ = self._gather(self.members, degs - 1)
        Minv = self._inverse(degs.astype(float), xsum)
        new = _woodbury(Minv, (n / self.sigma2) / (degs * self.kappa))
        self._replace(self.members, new)

    def sweep(self):
        for _ in range(int(np.ceil(self.cfg.size / self.batch))):
            self.step()
        self.sweep_count += 1

    def measure(self, k=None):
        """Local posterior variances of ``k`` fresh vertices drawn with full degree weights.

        Returns the samples (with drawn example counts), the degrees, and the
        same vertices' errors averaged exactly over the Poisson example count.
        """
        k = k or self.cfg.size
        degs = self._draw_degrees(self.dd, k)
        n = self._draw_counts(k)
        prec = np.empty(k)
        iso = degs == 0
        prec[iso] = self.kappa / self.c0
        if (~iso).any():
            dc = degs[~iso]
            xsum, _, _ = self._gather(self.members, dc)
            prec[~iso] = dc * self.kappa * self._inv00(dc.astype(float), xsum)
        out = 1.0 / (n / self.sigma2 + prec)
        return out, degs, poisson_average(self.nu, self.sigma2, prec)


class LocalPopulation(_Population):
    """Population of pairs ``(V_loc, V)`` for a locally normalised kernel.

    ``V`` messages carry the raw kernel (no data) and fix each vertex's local
    scale; ``V_loc`` messages carry the normalised kernel with data.
    """

    def __init__(self, dd, a, p, sigma2, nu, c=1.0, cfg=None, seed=0):
        super().__init__(dd, a, p, sigma2, nu, cfg or PopulationConfig(), seed)
        self.c = c
        start = max(dd.mode, 1)
        init = np.repeat(self._initial(start)[None], self.cfg.size, axis=0)
        self.raw = init.copy()
        self.loc = init.copy()

    def _local_kappa(self, degs, xsum_all):
        inv = self._inverse(degs.astype(float), xsum_all)
        return 1.0 / (self.c * degs * inv[:, 0, 0].real), inv

    def step(self):
        k = self.batch
        degs = self._draw_degrees(self.edge, k)
        n = self._draw_counts(k)
        cnt = degs - 1
        total = int(cnt.sum())
        idx = self.rng.integers(0, self.cfg.size, size=total)
        starts = np.concatenate([[0], np.cumsum(cnt)[:-1]]).astype(np.int64)
        x_raw = apply_exchange(_segment_sum(self.raw, starts, cnt, idx), self.p)
        x_loc = apply_exchange(_segment_sum(self.loc, starts, cnt, idx), self.p)
        back = self.raw[self.rng.integers(0, self.cfg.size, size=k)]
        kap, _ = self._local_kappa(degs, x_raw + apply_exchange(back, self.p))
        inv_raw = self._inverse(degs.astype(float), x_raw)
        new_raw = _woodbury(inv_raw, np.zeros(k))
        inv_loc = self._inverse(degs.astype(float), x_loc)
        new_loc = _woodbury(inv_loc, (n / self.sigma2) / (degs * kap))
        slots = self.rng.permutation(self.cfg.size)[:k]
        self.raw[slots] = new_raw
        self.loc[slots] = new_loc

    def sweep(self):
        for _ in range(int(np.ceil(self.cfg.size / self.batch))):
            self.step()
        self.sweep_count += 1

    def measure(self, k=None):
        k = k or self.cfg.size
        degs = self._draw_degrees(self.dd, k)
        n = self._draw_counts(k)
        prec = np.empty(k)
        iso = degs == 0
        prec[iso] = 1.0 / self.c
        if (~iso).any():
            dc = degs[~iso]
            total = int(dc.sum())
            idx = self.rng.integers(0, self.cfg.size, size=total)
            starts = np.concatenate([[0], np.cumsum(dc)[:-1]]).astype(np.int64)
            x_raw = apply_exchange(_segment_sum(self.raw, starts, dc, idx), self.p)
            x_loc = apply_exchange(_segment_sum(self.loc, starts, dc, idx), self.p)
            raw00 = self._inv00(dc.astype(float), x_raw)
            loc00 = self._inv00(dc.astype(float), x_loc)
            prec[~iso] = loc00 / (self.c * raw00)
        out = 1.0 / (n / self.sigma2 + prec)
        return out, degs, poisson_average(self.nu, self.sigma2, prec)


def _run(pop, label):
    cfg = pop.cfg
    for _ in range(cfg.burn_in):
        pop.sweep()
    means, samples = [], []
    for _ in range(cfg.sweeps):
        pop.sweep()
        s, _, rb = pop.measure()
        samples.append(s)
        means.append(rb.mean())
    _check_drift(means, label)
    return float(np.mean(means)), np.concatenate(samples) if samples else np.zeros(0)


def estimate_kappa_global(dd, a, p, cfg=None, seed=0):
    """Average raw prior variance over the ensemble (population run at ``kappa = 1``, no data)."""
    if p == 0:
        return 1.0
    pop = GlobalPopulation(dd, a, p, 1.0, 0.0, 1.0, cfg, seed)
    eps, _ = _run(pop, "kappa estimate")
    return eps


def population_dynamics_global(dd, a, p, sigma2, nu, kappa, cfg=None, seed=0):
    """Bayes error and local-error samples for a globally normalised kernel."""
    pop = GlobalPopulation(dd, a, p, sigma2, nu, kappa, cfg, seed)
    return _run(pop, f"global population at nu={nu}")


def population_dynamics_local(dd, a, p, sigma2, nu, c=1.0, cfg=None, seed=0):
    """Bayes error and local-error samples for a locally normalised kernel."""
    pop = LocalPopulation(dd, a, p, sigma2, nu, c, cfg, seed)
    return _run(pop, f"local population at nu={nu}")


def prior_variance_samples(dd, a, p, kappa, cfg=None, seed=0):
    """Samples of the globally normalised prior variance at a random vertex.

    Also returns the matching degrees so atoms can be identified.
    """
    pop = GlobalPopulation(dd, a, p, 1.0, 0.0, kappa, cfg, seed)
    c = pop.cfg
    for _ in range(c.burn_in):
        pop.sweep()
    vals, degs = [], []
    for _ in range(c.sweeps):
        pop.sweep()
        s, d, _ = pop.measure()
        vals.append(s)
        degs.append(d)
    return np.concatenate(vals), np.concatenate(degs)


def prior_variance_distribution(dd, a, p, kappa, cfg=None, seed=0, bins=100, range=None):
    samples, _ = prior_variance_samples(dd, a, p, kappa, cfg, seed)
    return Histogram.from_samples(samples, bins=bins, range=range)


def posterior_variance_distribution(mode, dd, a, p, sigma2, nu, kappa=None, c=1.0, cfg=None,
                                    seed=0, bins=100, range=None):
    """Histogram of local posterior variances predicted at one ``nu``."""
    if mode == "global":
        if kappa is None:
            kappa = estimate_kappa_global(dd, a, p, cfg, seed)
        _, samples = population_dynamics_global(dd, a, p, sigma2, nu, kappa, cfg, seed)
    elif mode == "local":
        _, samples = population_dynamics_local(dd, a, p, sigma2, nu, c, cfg, seed)
    else:
        raise BadParameter(f"unknown mode {mode!r}")
    return Histogram.from_samples(samples, bins=bins, range=range)


def cavity_learning_curve(mode, dd, a, p, sigma2, nu_grid, c=1.0, cfg=None, seed=0, kappa=None):
    """Learning curve from population dynamics, one independent population per ``nu``.

    Each grid point gets its own stream spawned from ``seed``; the standard
    error is the spread of per-sweep means.
    """
    ss = np.random.SeedSequence(seed)
    if mode == "global" and kappa is None:
        kappa = estimate_kappa_global(dd, a, p, cfg, np.random.SeedSequence(seed, spawn_key=(10 ** 6,)))
    eps, err = [], []
    for i, nu in enumerate(nu_grid):
        sub = np.random.SeedSequence(ss.entropy, spawn_key=(i,))
        if mode == "global":
            pop = GlobalPopulation(dd, a, p, sigma2, nu, kappa / c, cfg, sub)
        elif mode == "local":
            pop = LocalPopulation(dd, a, p, sigma2, nu, c, cfg, sub)
        else:
            raise BadParameter(f"unknown mode {mode!r}")
        cf = pop.cfg
        for _ in range(cf.burn_in):
            pop.sweep()
        means = []
        for _ in range(cf.sweeps):
            pop.sweep()
            means.append(pop.measure()[2].mean())
        _check_drift(means, f"{mode} population at nu={nu}")
        means = np.asarray(means)
        eps.append(float(means.mean()))
        err.append(float(means.std(ddof=1) / np.sqrt(means.size)) if means.size > 1 else 0.0)
    meta = dict(predictor="cavity", mode=mode, a=a, p=p, sigma2=sigma2, kappa=kappa, seed=seed,
                population=(cfg or PopulationConfig()).size)
    return LearningCurve(nu_grid, eps, err, meta)

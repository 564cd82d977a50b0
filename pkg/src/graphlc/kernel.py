"""Random walk kernels on graphs and the analytic kernel on the infinite d-regular tree."""
from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse
from scipy import integrate, special

from .errors import BadParameter, NoEdges, QuadratureFailure

ISOLATED_DELTA = 1e-12
QUAD_TOL = 1e-10
NORMALISATIONS = ("raw", "global", "local")


def _check_ap(a, p):
    # a = 2 is the boundary where the kernel is still positive semidefinite
    if not a >= 2:
        raise BadParameter(f"kernel parameter a must be at least 2, got {a}")
    if int(p) != p or p < 0:
        raise BadParameter(f"step count p must be a non-negative integer, got {p}")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel hyperparameters: ``C = normalise[((1 - 1/a) I + A_norm / a)^p]``."""

    a: float = 2.0
    p: int = 10
    normalisation: str = "global"
    c: float = 1.0

    def __post_init__(self):
        if self.normalisation not in NORMALISATIONS:
            raise BadParameter(f"unknown normalisation {self.normalisation!r}")
        if not self.a >= 2:
            raise BadParameter(f"kernel parameter a must be at least 2, got {self.a}")
        if int(self.p) != self.p or self.p < 0:
            raise BadParameter("p must be a non-negative integer")
        if not self.c > 0:
            raise BadParameter("target variance c must be positive")

    def build(self, g):
        return random_walk_kernel(g, self.a, self.p, self.normalisation, self.c)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense kernel with its normalisation metadata.

    ``kappa`` is the scalar divisor in global mode and the per-vertex raw
    diagonal in local mode; ``c`` is the target (average) prior variance.
    """

    entries: np.ndarray
    a: float
    p: int
    normalisation: str = "raw"
    kappa: object = 1.0
    c: float = 1.0

    @property
    def V(self):
        return self.entries.shape[0]

    @property
    def diagonal(self):
        return np.diagonal(self.entries).copy()

    def to_csv(self):
        rows = [",".join(repr(float(v)) for v in row) for row in self.entries]
        return "\n".join(rows) + "\n"


def binomial_weights(a, p):
    """Weights ``c_q`` of ``(A_norm)^q`` in the kernel expansion, ``q = 0..p``."""
    _check_ap(a, p)
    q = np.arange(p + 1)
    logw = (special.gammaln(p + 1) - special.gammaln(q + 1) - special.gammaln(p - q + 1)
            + (p - q) * math.log1p(-1.0 / a) - q * math.log(a))
    return np.exp(logw)


def walk_operator(g):
    """Sparse ``(D + delta I)^{-1/2} A (D + delta I)^{-1/2}``."""
    s = 1.0 / np.sqrt(g.degrees + ISOLATED_DELTA)
    A = g.adjacency()
    return scipy.sparse.diags(s) @ A @ scipy.sparse.diags(s)


def raw_kernel(g, a, p):
    """Unnormalised kernel by ``p`` sparse-times-dense products against the identity."""
    _check_ap(a, p)
    W = walk_operator(g).tocsr()
    keep = 1.0 - 1.0 / a
    C = np.eye(g.V)
    for _ in range(int(p)):
        C = keep * C + (W @ C) / a
    return 0.5 * (C + C.T)


def _normalise(raw, a, p, mode, c):
    if mode == "raw":
        return KernelMatrix(raw, a, p, "raw", 1.0, 1.0)
    if mode == "global":
        kappa = float(np.trace(raw)) / raw.shape[0]
        C = raw * (c / kappa)
        return KernelMatrix(C, a, p, "global", kappa / c, c)
    if mode == "local":
        kappa = np.diagonal(raw).copy()
        s = 1.0 / np.sqrt(kappa)
        C = c * raw * s[:, None] * s[None, :]
        np.fill_diagonal(C, c)
        return KernelMatrix(C, a, p, "local", kappa, c)
    raise BadParameter(f"unknown normalisation {mode!r}")


def random_walk_kernel(g, a, p, mode="raw", c=1.0):
    """Random walk kernel on ``g`` in ``raw``, ``global`` or ``local`` normalisation.

    In global mode the kernel is scaled so its average diagonal equals ``c``;
    in local mode every diagonal entry equals ``c``.
    """
    return _normalise(raw_kernel(g, a, p), a, p, mode, c)


def kernel_diagonal(g, a, p, block=512):
    """Diagonal of the raw kernel without forming the dense ``V x V`` matrix."""
    _check_ap(a, p)
    W = walk_operator(g).tocsr()
    keep = 1.0 - 1.0 / a
    out = np.empty(g.V)
    for start in range(0, g.V, block):
        cols = np.arange(start, min(start + block, g.V))
        X = np.zeros((g.V, cols.size))
        X[cols, np.arange(cols.size)] = 1.0
        for _ in range(int(p)):
            X = keep * X + (W @ X) / a
        out[cols] = X[cols, np.arange(cols.size)]
    return out


def neighbor_kernel_average(k, g):
    """Mean over edges of the kernel correlation ``C_ij / sqrt(C_ii C_jj)``."""
    e = g.edges
    if e.shape[0] == 0:
        raise NoEdges("graph has no edges")
    C = k.entries
    dg = np.diagonal(C)
    return float(np.mean(C[e[:, 0], e[:, 1]] / np.sqrt(dg[e[:, 0]] * dg[e[:, 1]])))


@dataclass(frozen=True)
class TreeKernelProfile:
    """Kernel values ``C_l`` at distance ``l`` from a root of the d-regular tree."""

    d: int
    a: float
    p: int
    values: np.ndarray

    @property
    def shell_volumes(self):
        return shell_volumes(self.d, len(self.values) - 1)

    def to_csv(self):
        lines = ["l,C_l,v_l"]
        for l, (cl, vl) in enumerate(zip(self.values, self.shell_volumes)):
            lines.append(f"{l},{float(cl)!r},{int(vl)}")
        return "\n".join(lines) + "\n"


def shell_volumes(d, lmax):
    v = np.ones(lmax + 1)
    if lmax >= 1:
        v[1:] = d * (d - 1.0) ** np.arange(lmax)
    return v


def _tree_step(C, d, a):
    """One application of the kernel step to a radial profile on the tree."""
    nxt = np.zeros_like(C)
    nxt[0] = (1 - 1 / a) * C[0] + C[1] / a
    nxt[1:-1] = (C[:-2] / (a * d) + (1 - 1 / a) * C[1:-1] + (d - 1) * C[2:] / (a * d))
    return nxt


def tree_kernel_recursion(d, a, p):
    """Radial kernel profile ``C_l`` for ``l = 0..p`` normalised to ``C_0 = 1``.

    Each sweep is rescaled by its ``l = 0`` value to avoid underflow.
    """
    if d < 2:
        raise BadParameter("tree degree d must be at least 2")
    _check_ap(a, p)
    p = int(p)
    C = np.zeros(p + 2)  # one spare slot that stays zero
    C[0] = 1.0
    for _ in range(p):
        C = _tree_step(C, d, a)
        C /= C[0]
    return TreeKernelProfile(d, a, p, C[:p + 1].copy())


def tree_kernel_limit(d, l):
    """Large-``p`` tree kernel ``[1 + l (d-2)/d] (d-1)^{-l/2}``."""
    if d < 3:
        raise BadParameter("limit form needs d >= 3")
    if l < 0:
        raise BadParameter("distance must be non-negative")
    return (1 + l * (d - 2) / d) * (d - 1.0) ** (-l / 2)


def heat_kernel_tree(d, a, p, l):
    """Unnormalised tree kernel at distance ``l`` from its spectral integral over ``[0, pi]``."""
    if d < 3:
        raise BadParameter("spectral form needs d >= 3")
    _check_ap(a, p)
    r = math.sqrt(d - 1)

    def base(x):
        lam = 1 - 2 * r * math.cos(x) / d
        return (1 - lam / a) ** p / (d * d - 4 * (d - 1) * math.cos(x) ** 2)

    if l == 0:
        pref = 2 * (d - 1) * d / math.pi

        def f(x):
            return base(x) * math.sin(x) ** 2
    else:
        pref = 2 / (math.pi * (d - 1) ** (l / 2 - 1))

        def f(x):
            return base(x) * math.sin(x) * ((d - 1) * math.sin((l + 1) * x) - math.sin((l - 1) * x))

    val, err = integrate.quad(f, 0.0, math.pi, epsabs=QUAD_TOL / pref, epsrel=0, limit=500)
    if err > QUAD_TOL / pref:
        raise QuadratureFailure(f"quadrature error {err:.3g} above tolerance")
    return pref * val


def cycle_threshold(V, d):
    """Distance ``log V / log(d-1)`` beyond which cycles are typical."""
    if d < 3:
        raise BadParameter("need d >= 3")
    if V < d + 1:
        raise BadParameter("need V >= d + 1")
    return math.log(V) / math.log(d - 1)


def tree_shell_profile(d, a, p):
    """Rescaled shell profile ``(l / sqrt(p), p * rho_l)`` of the tree kernel.

    ``rho_l`` is the unnormalised kernel at distance ``l`` times ``sqrt(v_l)``,
    with every step divided by the spectral-edge growth factor
    ``(1 - 1/a) + 2 sqrt(d-1) / (a d)``.
    """
    if d < 3:
        raise BadParameter("need d >= 3")
    _check_ap(a, p)
    p = int(p)
    if p == 0:
        return np.array([[0.0, 0.0]])
    gamma = (1 - 1 / a) + 2 * math.sqrt(d - 1) / (a * d)
    C = np.zeros(p + 2)
    C[0] = 1.0
    for _ in range(p):
        C = _tree_step(C, d, a) / gamma
    l = np.arange(p + 1)
    # sqrt of shell volumes in log form, which overflow for large p
    log_sqrt_v = np.where(l == 0, 0.0, 0.5 * (np.log(d) + (l - 1) * np.log(d - 1.0)))
    with np.errstate(divide="ignore"):
        rho = np.exp(np.log(C[:p + 1]) + log_sqrt_v)
    return np.column_stack([l / math.sqrt(p), p * rho])


def laplacian_eigenvalues(g):
    """Eigenvalues of the normalised Laplacian ``I - A_norm`` (isolated vertices give 1)."""
    W = walk_operator(g).toarray()
    return np.linalg.eigvalsh(np.eye(g.V) - W)

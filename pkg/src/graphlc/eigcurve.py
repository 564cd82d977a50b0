"""Learning curves from the kernel spectrum.

The approximation solves ``eps = g(nu V / (eps + sigma2))`` with
``g(h) = sum_a 1 / (1/lambda_a + h)`` over the eigenvalues of ``C / V``.
The spectrum can come from an actual kernel matrix or, for large random
d-regular graphs, from the Kesten-McKay density of the normalised Laplacian.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, optimize

from . import linalg
from .curves import LearningCurve
from .errors import BadParameter, NoConvergence, QuadratureFailure
from .kernel import KernelMatrix

QUAD_TOL = 1e-10
FP_TOL = 1e-12
DAMPING = 0.5
MAX_ITER = 2000


@dataclass(frozen=True)
class KernelSpectrum:
    """Eigenvalues of ``C / V`` in descending order."""

    eigenvalues: np.ndarray
    V: int
    source: str = "empirical"


def kernel_spectrum(k):
    C = k.entries if isinstance(k, KernelMatrix) else np.asarray(k, dtype=float)
    V = C.shape[0]
    w = linalg.sym_eigen(C / V)
    return KernelSpectrum(w[::-1].copy(), V, "empirical")


def g_sum(s, h):
    """``sum 1 / (1/lambda + h)``; non-positive eigenvalues contribute nothing."""
    if h < 0:
        raise BadParameter("h must be non-negative")
    lam = s.eigenvalues[s.eigenvalues > 0]
    return float(np.sum(lam / (1.0 + h * lam)))


def solve_self_consistent(gz, nu, sigma2):
    """Solve ``eps = gz(nu / (eps + sigma2))`` for a decreasing function ``gz``.

    Damped iteration from ``gz(0)``; falls back to a bracketing root finder on
    ``[0, gz(0)]`` if the iteration stalls.
    """
    top = gz(0.0)
    if nu == 0:
        return top
    eps = top
    for _ in range(MAX_ITER):
        new = (1 - DAMPING) * eps + DAMPING * gz(nu / (eps + sigma2))
        if abs(new - eps) <= FP_TOL:
            return new
        eps = new

    def resid(e):
        return e - gz(nu / (e + sigma2))

    lo, hi = 0.0, top
    if resid(lo) >= 0:
        return lo
    if resid(hi) <= 0:
        return hi
    try:
        return optimize.brentq(resid, lo, hi, xtol=FP_TOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise NoConvergence("self-consistent equation did not converge", residual=abs(eps - new)) from exc


def eig_learning_curve(s, nu_grid, sigma2):
    if not sigma2 > 0:
        raise BadParameter("noise variance must be positive")

    def gz(z):
        return g_sum(s, z * s.V)

    eps = [solve_self_consistent(gz, nu, sigma2) for nu in nu_grid]
    return LearningCurve(nu_grid, eps, None, dict(predictor="eig", source=s.source, sigma2=sigma2))


def spectrum_edges(d):
    r = 2 * math.sqrt(d - 1) / d
    return 1 - r, 1 + r


def mckay_density(d, lam):
    """Kesten-McKay density of normalised-Laplacian eigenvalues of a d-regular tree."""
    if d < 3:
        raise BadParameter("need d >= 3")
    lo, hi = spectrum_edges(d)
    lam = np.asarray(lam, dtype=float)
    inside = (lam > lo) & (lam < hi)
    rad = np.where(inside, 4 * (d - 1) / d ** 2 - (lam - 1) ** 2, 0.0)
    den = np.where(inside, (2 * math.pi / d) * lam * (2 - lam), 1.0)
    out = np.sqrt(np.clip(rad, 0, None)) / den
    return out if out.ndim else float(out)


def _mckay_quad(d, fn, p=0):
    """``int rho(lambda) fn(lambda) dlambda`` with ``lambda = 1 - R cos(theta)``.

    The substitution removes the square-root edges. Breakpoints near
    ``theta = 0`` resolve the ``(1 - lambda/a)^p`` peak at the lower edge.
    """
    R = 2 * math.sqrt(d - 1) / d

    def integrand(t):
        lam = 1 - R * math.cos(t)
        return R * R * math.sin(t) ** 2 / ((2 * math.pi / d) * lam * (2 - lam)) * fn(lam)

    pts = sorted({min(math.pi / 2, c / math.sqrt(max(p, 1))) for c in (1.0, 3.0, 8.0)})
    val, err = integrate.quad(integrand, 0.0, math.pi, points=pts, epsabs=QUAD_TOL, epsrel=1e-12,
                              limit=500)
    if err > QUAD_TOL:
        raise QuadratureFailure(f"quadrature error {err:.3g} above tolerance")
    return val


def tree_kappa(d, a, p):
    """Average raw prior variance of the kernel on a large d-regular graph."""
    return _mckay_quad(d, lambda lam: (1 - lam / a) ** p, p)


def _tree_weight(d, a, p):
    lo, _ = spectrum_edges(d)
    base = 1 - lo / a
    return lambda lam: ((1 - lam / a) / base) ** p


def g_tree_integral(d, a, p, z):
    """``g`` from the tree spectrum, as a function of ``z = h / V``, normalised to ``g(0) = 1``."""
    if a < 2:
        raise BadParameter("need a >= 2")
    if z < 0:
        raise BadParameter("argument must be non-negative")
    w = _tree_weight(d, a, p)
    total = _mckay_quad(d, w, p)
    return _mckay_quad(d, lambda lam: w(lam) / (total + z * w(lam)), p)


class TreeG:
    """``g(z)`` for the tree spectrum with the normalising integral computed once."""

    def __init__(self, d, a, p):
        self.d, self.a, self.p = d, a, p
        self.w = _tree_weight(d, a, p)
        self.total = _mckay_quad(d, self.w, p)

    def __call__(self, z):
        w = self.w
        return _mckay_quad(self.d, lambda lam: w(lam) / (self.total + z * w(lam)), self.p)


def tree_eig_curve(d, a, p, sigma2, nu_grid):
    """Eigenvalue-approximation learning curve for the large d-regular graph limit."""
    g = TreeG(d, a, p)
    eps = [solve_self_consistent(g, nu, sigma2) for nu in nu_grid]
    return LearningCurve(nu_grid, eps, None, dict(predictor="eig_tree", d=d, a=a, p=p, sigma2=sigma2))


def fermi_integral(z):
    """``F(z) = int_0^inf sqrt(y) / (exp(y) + z) dy`` for ``z >= 0``."""
    if z < 0:
        raise BadParameter("z must be non-negative")

    def f(t):
        # 2 t^2 / (e^{t^2} + z), written to avoid overflow for large t
        e = math.exp(-t * t)
        return 2 * t * t * e / (1 + z * e)

    knee = math.sqrt(math.log1p(z))
    parts = [(0.0, knee), (knee, knee + 8.0)]
    total, errs = 0.0, 0.0
    for lo, hi in parts:
        if hi > lo:
            v, e = integrate.quad(f, lo, hi, epsabs=QUAD_TOL / 3, epsrel=1e-12, limit=200)
            total += v
            errs += e
    v, e = integrate.quad(f, knee + 8.0, np.inf, epsabs=QUAD_TOL / 3, epsrel=1e-12, limit=200)
    total += v
    errs += e
    if errs > QUAD_TOL:
        raise QuadratureFailure(f"quadrature error {errs:.3g} above tolerance")
    return total


FERMI_ZERO = math.sqrt(math.pi) / 2


def master_scale(d, a, p):
    """Scale ``c`` such that large-``p`` learning curves depend on ``nu / c`` only."""
    if d < 3:
        raise BadParameter("need d >= 3")
    lo, _ = spectrum_edges(d)
    r = (d - 1) ** 0.25 * d ** 2.5 / (math.pi * (d - 2) ** 2)
    return r * FERMI_ZERO * ((a - lo) / p) ** 1.5


def master_curve(d, a, p, sigma2, nu_grid):
    """Large-``p`` master curve ``eps = F(nu / (c (eps + sigma2))) / F(0)``."""
    if a < 2:
        raise BadParameter("need a >= 2")
    c = master_scale(d, a, p)
    eps = []
    for nu in nu_grid:
        if nu == 0:
            eps.append(1.0)
            continue

        def resid(e, nu=nu):
            return e - fermi_integral(nu / (c * (e + sigma2))) / FERMI_ZERO

        eps.append(optimize.brentq(resid, 0.0, 1.0, xtol=FP_TOL, maxiter=500))
    return LearningCurve(nu_grid, eps, None, dict(predictor="master", d=d, a=a, p=p, sigma2=sigma2),
                         p_scale=p)

"""Random graph ensembles: d-regular, Erdos-Renyi and power-law generalised random graphs.

Graphs are immutable and stored as CSR neighbour lists. Every generator takes
a seed and draws from numpy's PCG64 bit generator, so equal seeds give
bitwise-equal graphs.
"""
from dataclasses import dataclass, field
from functools import cached_property
import io
import math

import numpy as np
import scipy.sparse
from scipy import integrate, special

from .errors import BadParameter, GenerationFailure, InfeasibleDegreeSequence

RNG_ALGORITHM = "PCG64"
REGULAR_RETRY_CAP = 1000


def make_rng(seed):
    """Return a ``numpy.random.Generator`` for an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _seed_label(seed):
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}/{'.'.join(map(str, seed.spawn_key))}"
    if isinstance(seed, np.random.Generator):
        return "generator"
    return str(seed)


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on vertices ``0..V-1``.

    ``indptr``/``indices`` are the CSR neighbour lists; neighbours of ``i`` are
    ``indices[indptr[i]:indptr[i+1]]`` in increasing order.
    """

    V: int
    indptr: np.ndarray
    indices: np.ndarray
    ensemble_tag: str = ""

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(cls, V, edges, ensemble_tag=""):
        """Build from an ``(E, 2)`` array of undirected edges; validates simplicity."""
        V = int(V)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= V):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        keys = lo * V + hi
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate edges are not allowed")
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(V + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=V), out=indptr[1:])
        return cls(V, indptr, cols.astype(np.int64), ensemble_tag)

    @cached_property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def n_edges(self):
        return int(self.indices.size // 2)

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @cached_property
    def edges(self):
        """Undirected edges as an ``(E, 2)`` array with ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.V), self.degrees)
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def adjacency(self):
        data = np.ones(self.indices.size)
        return scipy.sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.V, self.V))

    def audit(self):
        """Check symmetry, absence of self-loops/duplicates and degree consistency."""
        A = self.adjacency()
        if (A != A.T).nnz:
            raise AssertionError("adjacency not symmetric")
        if A.diagonal().any():
            raise AssertionError("self-loop present")
        if A.max() > 1 if A.nnz else False:
            raise AssertionError("duplicate edge present")
        for i in range(self.V):
            nb = self.neighbors(i)
            if nb.size and np.any(np.diff(nb) <= 0):
                raise AssertionError("neighbour list unsorted or duplicated")
        return True

    def to_edgelist(self):
        """Serialise as text: header ``V <count>`` then one ``i j`` pair per line."""
        buf = io.StringIO()
        buf.write(f"V {self.V}\n")
        for i, j in self.edges:
            buf.write(f"{i} {j}\n")
        return buf.getvalue()

    @classmethod
    def from_edgelist(cls, text, ensemble_tag="edgelist"):
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if len(head) != 2 or head[0] != "V":
            raise ValueError("edge list must start with a 'V <count>' header")
        V = int(head[1])
        edges = np.array([[int(t) for t in ln.split()] for ln in lines[1:]], dtype=np.int64)
        return cls.from_edges(V, edges.reshape(-1, 2), ensemble_tag)

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_edgelist())

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls.from_edgelist(fh.read(), ensemble_tag=f"file:{path}")

    def __eq__(self, other):
        return (isinstance(other, Graph) and self.V == other.V
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    __hash__ = object.__hash__


@dataclass(frozen=True)
class DegreeDistribution:
    """Degree distribution ``p(d)`` on an integer support."""

    support: np.ndarray
    probs: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        if support.shape != probs.shape:
            raise ValueError("support and probs differ in length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @property
    def mean(self):
        return float(np.dot(self.support, self.probs))

    @property
    def mode(self):
        return int(self.support[np.argmax(self.probs)])

    def prob(self, d):
        hit = self.support == d
        return float(self.probs[hit].sum())

    def edge_biased(self):
        """Degree distribution of the endpoint of a random edge, ``p(d) d / mean``."""
        w = self.probs * self.support
        keep = w > 0
        if not keep.any():
            raise BadParameter("degree distribution has no edges")
        w = w[keep]
        return DegreeDistribution(self.support[keep], w / w.sum(), self.label + ":edge")

    @classmethod
    def regular(cls, d):
        return cls(np.array([d]), np.array([1.0]), f"regular(d={d})")

    @classmethod
    def poisson(cls, lam, tail=1e-16):
        """Poisson(lam) degrees truncated where the remaining mass falls below ``tail``."""
        if lam < 0:
            raise BadParameter("mean degree must be non-negative")
        if lam == 0:
            return cls(np.array([0]), np.array([1.0]), "poisson(0)")
        dmax = int(special.pdtrik(1 - tail, lam)) + 2 if lam > 0 else 0
        dmax = max(dmax, int(lam + 10 * math.sqrt(lam)) + 5)
        d = np.arange(dmax + 1)
        pmf = np.exp(d * math.log(lam) - lam - special.gammaln(d + 1))
        return cls(d, pmf / pmf.sum(), f"poisson({lam})")

    @classmethod
    def powerlaw_mixture(cls, alpha, cutoff, dmax=1000):
        """Poisson mixture over shifted-Pareto means, truncated at ``dmax``.

        ``p(d) = int dl Pois(d; l) alpha cutoff^alpha / l^(alpha+1)`` on ``[cutoff, inf)``.
        """
        if alpha <= 2 or cutoff <= 0:
            raise BadParameter("need alpha > 2 and cutoff > 0")
        probs = np.empty(dmax + 1)
        for d in range(dmax + 1):
            logc = math.log(alpha) + alpha * math.log(cutoff) - special.gammaln(d + 1)

            def integrand(lam, d=d, logc=logc):
                return math.exp(logc + d * math.log(lam) - lam - (alpha + 1) * math.log(lam))

            peak = max(cutoff, d - alpha - 1.0)
            pts = [cutoff, peak, peak + 10 * math.sqrt(max(peak, 1.0)) + 10]
            pts = sorted(set(pts))
            total = 0.0
            for lo, hi in zip(pts[:-1], pts[1:]):
                total += integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-11, limit=200)[0]
            total += integrate.quad(integrand, pts[-1], np.inf, epsabs=0, epsrel=1e-11, limit=200)[0]
            probs[d] = total
        return cls(np.arange(dmax + 1), probs / probs.sum(), f"grg_powerlaw({alpha},{cutoff})")


def degree_distribution(g):
    """Empirical degree distribution of a graph."""
    counts = np.bincount(g.degrees, minlength=1)
    support = np.nonzero(counts)[0]
    return DegreeDistribution(support, counts[support] / g.V, f"empirical:{g.ensemble_tag}")


def gen_regular(V, d, seed):
    """Uniform-ish random d-regular graph via the pairing model with rejection."""
    V, d = int(V), int(d)
    if d < 0 or V <= 0:
        raise BadParameter("need V > 0 and d >= 0")
    if (V * d) % 2:
        raise InfeasibleDegreeSequence(f"V*d = {V * d} is odd")
    if d >= V:
        raise InfeasibleDegreeSequence("need d < V")
    rng = make_rng(seed)
    tag = f"regular(V={V},d={d});rng={RNG_ALGORITHM};seed={_seed_label(seed)}"
    stubs = np.repeat(np.arange(V, dtype=np.int64), d)
    for _ in range(REGULAR_RETRY_CAP):
        pairs = rng.permutation(stubs).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keys = lo * V + hi
        if np.unique(keys).size != keys.size:
            continue
        return Graph.from_edges(V, pairs, tag)
    raise GenerationFailure(f"no simple {d}-regular graph on {V} vertices after {REGULAR_RETRY_CAP} tries")


def _pair_from_index(k):
    """Map linear indices over pairs ``j < i`` (ordered by i, then j) to ``(i, j)``."""
    k = np.asarray(k, dtype=np.int64)
    i = ((1 + np.sqrt(1 + 8 * k.astype(float))) // 2).astype(np.int64)
    # float sqrt can be off by one for large k
    i = np.where(i * (i - 1) // 2 > k, i - 1, i)
    i = np.where((i + 1) * i // 2 <= k, i + 1, i)
    j = k - i * (i - 1) // 2
    return i, j


def gen_erdos_renyi(V, mean_degree, seed):
    """G(V, q) with ``q = mean_degree / (V - 1)``, sampled by geometric skipping."""
    V = int(V)
    if mean_degree < 0 or V <= 0:
        raise BadParameter("need V > 0 and mean_degree >= 0")
    rng = make_rng(seed)
    tag = f"erdos_renyi(V={V},lambda={mean_degree});rng={RNG_ALGORITHM};seed={_seed_label(seed)}"
    n_pairs = V * (V - 1) // 2
    q = mean_degree / (V - 1) if V > 1 else 0.0
    if q <= 0 or n_pairs == 0:
        return Graph.from_edges(V, np.zeros((0, 2), dtype=np.int64), tag)
    if q >= 1:
        keys = np.arange(n_pairs)
    else:
        chunks = []
        pos = -1
        expect = int(n_pairs * q + 10 * math.sqrt(n_pairs * q) + 16)
        while True:
            gaps = rng.geometric(q, size=expect)
            steps = pos + np.cumsum(gaps)
            chunks.append(steps[steps < n_pairs])
            if steps[-1] >= n_pairs:
                break
            pos = int(steps[-1])
        keys = np.concatenate(chunks)
    i, j = _pair_from_index(keys)
    return Graph.from_edges(V, np.column_stack([i, j]), tag)


def gen_grg_powerlaw(V, exponent, cutoff, seed, block=256):
    """Generalised random graph with shifted-Pareto vertex weights.

    Weights ``w_i`` have density ``alpha cutoff^alpha / w^(alpha+1)`` on
    ``[cutoff, inf)``; edge ``{i, j}`` is present with probability
    ``min(1, w_i w_j / (mean(w) V))``.
    """
    V = int(V)
    if exponent <= 2:
        raise BadParameter("power-law exponent must exceed 2 for a finite mean")
    if cutoff <= 0:
        raise BadParameter("cutoff must be positive")
    rng = make_rng(seed)
    tag = (f"grg_powerlaw(V={V},alpha={exponent},cutoff={cutoff});"
           f"rng={RNG_ALGORITHM};seed={_seed_label(seed)}")
    w = cutoff * rng.random(V) ** (-1.0 / exponent)
    scale = w.mean() * V
    found = []
    for start in range(0, V, block):
        stop = min(start + block, V)
        rows = np.arange(start, stop)
        prob = np.minimum(1.0, np.outer(w[rows], w) / scale)
        u = rng.random(prob.shape)
        upper = np.arange(V)[None, :] > rows[:, None]
        r, c = np.nonzero((u < prob) & upper)
        found.append(np.column_stack([rows[r], c]))
    edges = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    return Graph.from_edges(V, edges, tag)


@dataclass(frozen=True)
class EnsembleSpec:
    """A named random graph ensemble at a given size."""

    kind: str
    V: int
    d: int = 3
    mean_degree: float = 3.0
    alpha: float = 2.5
    cutoff: float = 2.0

    KINDS = ("regular", "erdos_renyi", "grg_powerlaw")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise BadParameter(f"unknown ensemble {self.kind!r}")

    def generate(self, seed):
        if self.kind == "regular":
            return gen_regular(self.V, self.d, seed)
        if self.kind == "erdos_renyi":
            return gen_erdos_renyi(self.V, self.mean_degree, seed)
        return gen_grg_powerlaw(self.V, self.alpha, self.cutoff, seed)

    def degree_distribution(self, dmax=1000):
        """Large-V degree distribution of the ensemble."""
        if self.kind == "regular":
            return DegreeDistribution.regular(self.d)
        if self.kind == "erdos_renyi":
            return DegreeDistribution.poisson(self.mean_degree)
        return DegreeDistribution.powerlaw_mixture(self.alpha, self.cutoff, dmax)

    def describe(self):
        if self.kind == "regular":
            return f"regular(V={self.V},d={self.d})"
        if self.kind == "erdos_renyi":
            return f"erdos_renyi(V={self.V},lambda={self.mean_degree})"
        return f"grg_powerlaw(V={self.V},alpha={self.alpha},cutoff={self.cutoff})"

"""Result containers shared by the simulators and predictors, with CSV export."""
from dataclasses import dataclass, field

import numpy as np


def _fmt(x):
    return repr(float(x))


@dataclass
class LearningCurve:
    """Error ``epsilon`` and its standard error on a grid of ``nu = N / V``."""

    nu: np.ndarray
    epsilon: np.ndarray
    stderr: np.ndarray = None
    meta: dict = field(default_factory=dict)
    p_scale: float = None  # when set, the CSV gets an extra nu * p^{3/2} column

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.epsilon)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.nu.shape == self.epsilon.shape == self.stderr.shape):
            raise ValueError("nu, epsilon and stderr must have equal length")

    def to_csv(self):
        cols = ["nu", "epsilon", "stderr"]
        if self.p_scale is not None:
            cols.append("nu_p32")
        lines = [",".join(cols)]
        for i in range(self.nu.size):
            row = [_fmt(self.nu[i]), _fmt(self.epsilon[i]), _fmt(self.stderr[i])]
            if self.p_scale is not None:
                row.append(_fmt(self.nu[i] * self.p_scale ** 1.5))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text):
        rows = [ln.split(",") for ln in text.strip().splitlines()]
        data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        return cls(data[:, 0], data[:, 1], data[:, 2])


@dataclass
class Histogram:
    """Normalised histogram (density integrates to one over the bins)."""

    edges: np.ndarray
    density: np.ndarray
    samples: np.ndarray = None

    @classmethod
    def from_samples(cls, samples, bins=50, range=None, weights=None):
        samples = np.asarray(samples, dtype=float)
        density, edges = np.histogram(samples, bins=bins, range=range, weights=weights, density=True)
        return cls(edges, density, samples)

    def to_csv(self):
        lines = ["bin_left,bin_right,density"]
        for lo, hi, dv in zip(self.edges[:-1], self.edges[1:], self.density):
            lines.append(f"{_fmt(lo)},{_fmt(hi)},{_fmt(dv)}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

"""Gaussian-process learning curves on sparse random graphs.

Random walk kernels, exact GP regression on graph vertices, and three ways
of predicting learning curves: Monte-Carlo simulation, the kernel-eigenvalue
approximation and cavity (belief propagation) population dynamics.
"""
from .errors import (BadParameter, ConfigError, ConvergenceWarning, DegreeMismatch, DimensionMismatch,
                     GenerationFailure, GraphLCError, InfeasibleDegreeSequence, NoConvergence, NoEdges,
                     NotPositiveDefinite, QuadratureFailure, Singular)
from .graph import (DegreeDistribution, EnsembleSpec, Graph, degree_distribution, gen_erdos_renyi,
                    gen_grg_powerlaw, gen_regular)
from .kernel import (KernelMatrix, KernelSpec, TreeKernelProfile, binomial_weights, cycle_threshold,
                     heat_kernel_tree, neighbor_kernel_average, random_walk_kernel, tree_kernel_limit,
                     tree_kernel_recursion, tree_shell_profile)
from .curves import Histogram, LearningCurve

__version__ = "0.1.0"

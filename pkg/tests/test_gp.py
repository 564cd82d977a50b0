import numpy as np
import pytest

from graphlc.graph import EnsembleSpec, Graph, gen_erdos_renyi, gen_regular
from graphlc.gp import (Dataset, bayes_error_exact, collapse_inputs, column_mass_vertices, dangling_vertices,
                        gp_posterior, mismatch_errors, mismatch_learning_curve, posterior_variance_stats,
                        posterior_variances, prediction_diagnostics, sample_gp_prior, simulate_learning_curve,
                        simulate_learning_curves)
from graphlc.kernel import KernelSpec, random_walk_kernel

from conftest import path_graph


@pytest.fixture(scope="module")
def er_kernels():
    g = gen_erdos_renyi(150, 3, seed=21)
    return g, random_walk_kernel(g, 2, 10, "global"), random_walk_kernel(g, 2, 10, "local")


def test_no_data_gives_prior(er_kernels):
    _, k, _ = er_kernels
    mean, var = gp_posterior(k, Dataset([], [], 0.1))
    assert np.all(mean == 0)
    np.testing.assert_array_equal(var, np.diagonal(k.entries))


def test_scalar_gp():
    C = np.array([[1.0]])
    y, s2 = 0.8, 0.3
    mean, var = gp_posterior(C, Dataset([0], [y], s2))
    assert var[0] == pytest.approx(s2 / (1 + s2), abs=1e-14)
    assert mean[0] == pytest.approx(y / (1 + s2), abs=1e-14)


def test_infinite_noise_mean_vanishes(er_kernels, rng):
    _, k, _ = er_kernels
    x = rng.integers(0, k.V, 20)
    mean, _ = gp_posterior(k, Dataset(x, rng.standard_normal(20), 1e12))
    assert np.max(np.abs(mean)) < 1e-6


def test_bayes_error_no_data_local_is_one(er_kernels):
    _, _, loc = er_kernels
    assert bayes_error_exact(loc, [], 0.1) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("which", [1, 2])
def test_single_example_error_reduction(er_kernels, which):
    # one example removes sum_j C_ij^2 / (C_ii + sigma2) / V from the error, on any graph
    k = er_kernels[which]
    C = k.entries
    s2 = 0.05
    for i in (0, 7, 42):
        drop = bayes_error_exact(k, [], s2) - bayes_error_exact(k, [i], s2)
        assert drop == pytest.approx(np.sum(C[i] ** 2) / (C[i, i] + s2) / k.V, abs=1e-10)


def test_single_example_reduction_tree_like():
    g = gen_regular(400, 3, seed=2)
    k = random_walk_kernel(g, 2, 4, "global")
    C = k.entries
    drop = bayes_error_exact(k, [], 0.1) - bayes_error_exact(k, [5], 0.1)
    assert drop == pytest.approx(np.sum(C[5] ** 2) / (1 + 0.1) / k.V, rel=0.02)


def test_duplicates_reduce_error_monotonically():
    g = path_graph(3)
    k = random_walk_kernel(g, 2, 3, "local")
    errs = [bayes_error_exact(k, [1] * n, 0.2) for n in range(6)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    # rank-one oracle: n copies at noise s2 equal one copy at noise s2 / n
    for n in range(1, 6):
        assert errs[n] == pytest.approx(bayes_error_exact(k, [1], 0.2 / n), abs=1e-14)


def test_collapsed_variances_match_full_system(er_kernels, rng):
    _, k, loc = er_kernels
    for kern in (k, loc):
        x = rng.integers(0, kern.V, 200)  # plenty of repeats
        _, full = gp_posterior(kern, Dataset(x, np.zeros(x.size), 0.03))
        np.testing.assert_allclose(posterior_variances(kern, x, 0.03), full, atol=1e-10)


def test_collapse_inputs():
    sites, counts = collapse_inputs([3, 1, 3, 3, 0])
    assert list(sites) == [0, 1, 3] and list(counts) == [1, 1, 3]


def test_variance_bounded_by_prior(er_kernels, rng):
    _, k, loc = er_kernels
    for kern in (k, loc):
        x = rng.integers(0, kern.V, 80)
        var = posterior_variances(kern, x, 0.01)
        assert np.all(var <= np.diagonal(kern.entries) + 1e-10)
        assert np.all(var >= -1e-10)


def test_bayes_error_permutation_and_output_invariance(er_kernels, rng):
    _, k, _ = er_kernels
    x = rng.integers(0, k.V, 60)
    e = bayes_error_exact(k, x, 0.1)
    assert bayes_error_exact(k, rng.permutation(x), 0.1) == pytest.approx(e, abs=1e-12)
    for _ in range(3):
        _, var = gp_posterior(k, Dataset(x, rng.standard_normal(60) * 10, 0.1))
        assert var.mean() == pytest.approx(e, abs=1e-10)


def test_prior_samples_scalar_moment():
    s = sample_gp_prior(np.array([[4.0]]), seed=1, size=100000)
    assert s.std() == pytest.approx(2.0, rel=0.02)


def test_prior_samples_independent_coordinates():
    s = sample_gp_prior(np.eye(2), seed=2, size=10000)
    assert abs(np.corrcoef(s.T)[0, 1]) < 0.03


def test_prior_samples_zero_kernel():
    assert np.all(sample_gp_prior(np.zeros((3, 3)), seed=0) == 0)


def test_prior_samples_covariance():
    g = gen_erdos_renyi(10, 3, seed=5)
    k = random_walk_kernel(g, 2, 3, "local")
    s = sample_gp_prior(k, seed=3, size=10000)
    emp = s.T @ s / s.shape[0]
    np.testing.assert_allclose(emp, k.entries, atol=0.05)


def test_prior_samples_deterministic(er_kernels):
    _, k, _ = er_kernels
    np.testing.assert_array_equal(sample_gp_prior(k, 9), sample_gp_prior(k, 9))


def test_matched_mismatch_errors_equal_posterior_variances(er_kernels, rng):
    _, k, _ = er_kernels
    x = rng.integers(0, k.V, 90)
    np.testing.assert_allclose(mismatch_errors(k, k, x, 0.05), posterior_variances(k, x, 0.05), atol=1e-10)


def test_mismatch_errors_against_monte_carlo(er_kernels, rng):
    # independent route: sample teacher functions and noise, fit the student mean
    _, glob, loc = er_kernels
    x = rng.integers(0, glob.V, 40)
    s2 = 0.05
    analytic = mismatch_errors(glob, loc, x, s2).mean()
    teachers = sample_gp_prior(loc, seed=4, size=4000)
    noise = np.random.default_rng(8).standard_normal((4000, x.size)) * np.sqrt(s2)
    K = glob.entries[np.ix_(x, x)] + s2 * np.eye(x.size)
    B = np.linalg.solve(K, glob.entries[x, :]).T
    preds = (teachers[:, x] + noise) @ B.T
    mc = np.mean((teachers - preds) ** 2)
    assert mc == pytest.approx(analytic, rel=0.03)


def test_simulated_curve_starts_at_prior_and_decreases():
    ens = EnsembleSpec("regular", 200, d=3)
    curve = simulate_learning_curve(ens, KernelSpec(2, 10, "global"), 0.1, [0, 0.1, 0.5, 2], graphs=2,
                                    datasets=2, seed=1)
    assert curve.epsilon[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(curve.epsilon) < 2 * curve.stderr[1:])


def test_simulated_curves_ordered_by_noise():
    ens = EnsembleSpec("regular", 500, d=3)
    sig = [1e-4, 1e-3, 1e-2, 1e-1]
    curves = simulate_learning_curves(ens, KernelSpec(2, 10, "global"), sig, [0.3, 1.0, 3.0], graphs=2,
                                      datasets=2, seed=2)
    for lo, hi in zip(sig, sig[1:]):
        assert np.all(curves[lo].epsilon <= curves[hi].epsilon + 2 * curves[hi].stderr)


def test_simulation_deterministic():
    ens = EnsembleSpec("erdos_renyi", 100, mean_degree=3)
    kw = dict(graphs=2, datasets=2, seed=5)
    a = simulate_learning_curve(ens, KernelSpec(2, 5, "local"), 0.1, [0.5, 1], **kw)
    b = simulate_learning_curve(ens, KernelSpec(2, 5, "local"), 0.1, [0.5, 1], threads=2, **kw)
    assert a.to_csv() == b.to_csv()


def test_mismatch_curve_matched_equals_simulation():
    ens = EnsembleSpec("erdos_renyi", 120, mean_degree=3)
    ks = KernelSpec(2, 10, "global")
    kw = dict(graphs=2, datasets=2, seed=3)
    sim = simulate_learning_curve(ens, ks, 0.1, [0.2, 1.0], **kw)
    mm = mismatch_learning_curve(ks, ks, ens, 0.1, [0.2, 1.0], **kw)
    np.testing.assert_allclose(mm.epsilon, sim.epsilon, atol=1e-10)


def test_variance_stats_no_data_local(er_kernels):
    _, _, loc = er_kernels
    mean, spread, hist = posterior_variance_stats(loc, [], 0.1)
    assert mean == pytest.approx(1.0) and spread == pytest.approx(0.0, abs=1e-24)
    assert hist.density.size == 50


def test_prediction_decomposition_reproduces_mean(er_kernels, rng):
    _, k, loc = er_kernels
    x = rng.integers(0, k.V, 25)
    data = Dataset(x, rng.standard_normal(25), 0.1)
    M, z, zsq = prediction_diagnostics(k, loc, data)
    mean, _ = gp_posterior(k, data)
    np.testing.assert_allclose(M @ z, mean, atol=1e-8)
    np.testing.assert_allclose(zsq, z ** 2)


def test_prediction_single_example(er_kernels):
    _, k, _ = er_kernels
    data = Dataset([3], [1.0], 0.2)
    M, z, _ = prediction_diagnostics(k, k, data)
    np.testing.assert_allclose(M[:, 0], k.entries[:, 3] / np.sqrt(k.entries[3, 3] + 0.2), atol=1e-12)


def test_matched_pseudo_outputs_are_white(er_kernels, rng):
    _, k, _ = er_kernels
    x = rng.choice(k.V, 8, replace=False)
    data = Dataset(x, np.zeros(8), 0.1)
    zs = np.array([prediction_diagnostics(k, k, data, seed=s)[1] for s in range(1000)])
    cov = zs.T @ zs / len(zs)
    off = cov - np.diag(np.diagonal(cov))
    assert np.max(np.abs(off)) < 0.1
    np.testing.assert_allclose(np.diagonal(cov), 1.0, atol=0.15)


def test_dangling_vertices():
    # triangle 0-1-2 with a chain 2-3-4-5 hanging off and a leaf 6 on vertex 0
    g = Graph.from_edges(7, [[0, 1], [1, 2], [0, 2], [2, 3], [3, 4], [4, 5], [0, 6]])
    marked = dangling_vertices(g)
    assert list(np.nonzero(marked)[0]) == [3, 4, 5, 6]


def test_mismatch_spikes_sit_on_isolated_vertices_or_touch_dangling_ends():
    # global student, local teacher, sigma2 = 1e-4, nu = 0.7 on 250-vertex ER graphs
    isolated = touching = other = 0
    for gs in range(6):
        g = gen_erdos_renyi(250, 3, seed=gs)
        st = random_walk_kernel(g, 2, 10, "global")
        te = random_walk_kernel(g, 2, 10, "local")
        x = np.random.default_rng(gs).integers(0, 250, 175)
        M, _, zsq = prediction_diagnostics(st, te, Dataset(x, np.zeros(x.size), 1e-4), seed=gs)
        dang = dangling_vertices(g)
        for col in np.argsort(-zsq)[:5]:
            if g.degrees[x[col]] == 0:
                isolated += 1
            elif dang[column_mass_vertices(M, col)].any():
                touching += 1
            else:
                other += 1
    assert isolated + touching >= 28 and touching > other

import warnings

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mortsmooth.data import simulate_dataset
from mortsmooth.graphs import AdjacencyGraph, icar_structure, identity_structure, rw_structure
from mortsmooth.inference import (ConvergenceError, compute_dic, compute_waic, deviance,
                                  dic_from_draws, fit_model, gaussian_approx, gradient_z,
                                  log_likelihood_z, log_marginal_hyper, log_prior_z,
                                  waic_from_draws)
from mortsmooth.model import assemble_model, custom_model, parse_model_spec
from mortsmooth.oracle import grid_posterior, mcmc_sample


def intercept_only(O, N, **kw):
    return custom_model(np.atleast_1d(O), np.atleast_1d(N), **kw)


# --- Gaussian approximation ------------------------------------------------

def test_intercept_mode_penalized_root(frozen):
    ga = gaussian_approx(intercept_only(10.0, 1000.0), np.zeros(0))
    assert ga.mode[0] == pytest.approx(frozen["intercept_mode_O10_N1000"], abs=1e-6)
    assert abs(ga.mode[0] - np.log(0.01)) < 1e-3


def test_intercept_mode_flat_prior(frozen):
    ga = gaussian_approx(intercept_only(10.0, 1000.0, fixed_precision=0.0), np.zeros(0))
    assert ga.mode[0] == pytest.approx(frozen["intercept_mode_flat_O10_N1000"], abs=1e-6)
    assert ga.mode[0] == pytest.approx(-4.60517, abs=1e-5)


def test_poisson_score_at_mode():
    m = intercept_only([120.0, 80.0, 95.0], [1e4, 2e4, 1.5e4])
    ga = gaussian_approx(m, np.zeros(0))
    a = ga.mode[0]
    mu = m.exposure * np.exp(a)
    assert np.sum(m.observed - mu) == pytest.approx(m.fixed_precision * a, abs=1e-6)


def test_rate_invariant_to_common_scaling():
    m1 = intercept_only([1000.0], [1e5])
    m10 = intercept_only([10000.0], [1e6])
    r1 = np.exp(gaussian_approx(m1, np.zeros(0)).mode[0])
    r10 = np.exp(gaussian_approx(m10, np.zeros(0)).mode[0])
    assert abs(r1 - r10) < 1e-6


def _toy_time(seed=0, T=6):
    r = np.random.default_rng(seed)
    O = r.poisson(2000 * np.exp(0.2 * np.sin(np.arange(T)))).astype(float)
    return custom_model(O, np.full(T, 1e6), [("time", range(T), rw_structure(T, 1))])


def test_projected_gradient_small_at_mode():
    m = _toy_time()
    for th in ([-1.0], [2.0], [6.0]):
        ga = gaussian_approx(m, th)
        assert ga.grad_norm < 1e-6
        assert np.linalg.norm(gradient_z(m, ga.z, th)) < 1e-6


def test_gradient_matches_finite_differences():
    O = np.random.default_rng(2).poisson(50, (3, 4)).astype(float)
    m = __import__("mortsmooth").build_model(parse_model_spec("age-time; interaction=IV"), O,
                                            np.full((3, 4), 1e3))
    th = np.array([0.5, 1.0, 1.5])
    r = np.random.default_rng(3)

    def f(z):
        return log_likelihood_z(m, z) + log_prior_z(m, z, th)

    for _ in range(5):
        z = r.normal(0, 0.3, m.basis.shape[1])
        z[0] = -3.0
        g = gradient_z(m, z, th)
        h = 1e-5
        fd = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(z.size)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * np.abs(g).max())


def test_constraints_hold_at_mode():
    O = np.random.default_rng(1).poisson(300, (5, 7)).astype(float)
    for inter in (None, "I", "II", "III", "IV"):
        spec = parse_model_spec("age-time; time=rw2").with_interaction(inter)
        m = __import__("mortsmooth").build_model(spec, O, np.full((5, 7), 1e5))
        ga = gaussian_approx(m, np.zeros(m.n_hyper))
        assert abs(ga.mode[m.block("age").slice].sum()) < 1e-8
        assert np.abs(m.constraints @ ga.mode).max() < 1e-8
        assert (ga.sd > 0).all()


def test_path_toy_fixed_theta_matches_grid_oracle():
    g = AdjacencyGraph.from_pairs([(0, 1), (1, 2)], 3)
    m = custom_model([60.0, 100.0, 80.0], [1e4] * 3, [("space", range(3), icar_structure(g))])
    theta = [1.0]
    ga = gaussian_approx(m, theta)
    ref = grid_posterior(m, theta=theta)
    assert np.abs(ga.mean - ref.mean).max() < 0.02


def test_non_convergence_reports_gradient():
    m = _toy_time()
    with pytest.raises(ConvergenceError) as err:
        gaussian_approx(m, [1.0], max_iter=1)
    assert err.value.grad_norm > 1e-6
    assert err.value.iterations == 1


def test_theta_must_be_finite():
    with pytest.raises(ValueError):
        gaussian_approx(_toy_time(), [np.inf])


# --- log marginal ------------------------------------------------------------

def test_gaussian_surrogate_matches_closed_form():
    y = np.array([0.3, -0.2, 1.1, 0.4, 0.0, -0.7])
    idx = np.array([0, 1, 2, 0, 1, 2])
    lam, tau, kappa = 4.0, np.exp(0.7), 0.001
    m = custom_model(y, np.ones(6), [("u", idx, identity_structure(3))], likelihood="gaussian",
                     noise_precision=lam, offset=np.zeros(6))
    Z = np.eye(3)[idx]
    cov = np.ones((6, 6)) / kappa + Z @ Z.T / tau + np.eye(6) / lam
    exact = multivariate_normal(np.zeros(6), cov).logpdf(y)
    ga = gaussian_approx(m, [0.7])
    assert ga.log_evidence == pytest.approx(exact, abs=1e-6)


def test_log_marginal_penalizes_vanishing_variance():
    m = _toy_time()
    vals = [log_marginal_hyper(m, [t]) for t in (6.0, 9.0, 12.0)]
    assert vals[0] > vals[1] > vals[2]


def test_log_marginal_symmetric_roles():
    O = np.array([[900.0, 1100.0], [1100.0, 1300.0]])
    a = np.array([0, 0, 1, 1])
    b = np.array([0, 1, 0, 1])
    R = rw_structure(2, 1)
    m = custom_model(O.reshape(-1), np.full(4, 1e6), [("a", a, R), ("b", b, R)])
    assert log_marginal_hyper(m, [0.5, 2.0]) == pytest.approx(log_marginal_hyper(m, [2.0, 0.5]), abs=1e-8)


# --- grid integration ----------------------------------------------------------

@pytest.fixture(scope="module")
def small_fit():
    return fit_model(_toy_time(seed=5))


def test_weights_normalized(small_fit):
    assert abs(small_fit.weights.sum() - 1.0) < 1e-12
    assert (small_fit.weights > 0).all()


def test_mixture_mean_definition(small_fit):
    means = np.array([p.approx.mean for p in small_fit.points])
    assert np.allclose(small_fit.mean, small_fit.weights @ means, atol=1e-12, rtol=0)
    assert (small_fit.sd > 0).all()


def test_mixture_quantiles_ordered(small_fit):
    q = small_fit.quantiles()
    assert (q[0] < q[1]).all() and (q[1] < q[2]).all()


def test_grid_refinement_stable():
    m = _toy_time(seed=7)
    coarse = fit_model(m).quantiles([0.5])[0]
    fine = fit_model(m, grid_step=0.375).quantiles([0.5])[0]
    assert np.abs(coarse - fine).max() < 0.01


def test_parallel_grid_identical():
    m = _toy_time(seed=8)
    a, b = fit_model(m), fit_model(m, n_jobs=3)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.mean, b.mean)


def test_boundary_mode_warns():
    # one contrast (rank-1 structure): the hyperprior cancels the prior's log-determinant
    # term and the log-marginal keeps rising as the precision goes to zero
    m = custom_model([1000.0, 3000.0], [1e6, 1e6], [("t", range(2), rw_structure(2, 1))])
    with pytest.warns(RuntimeWarning, match="boundary"):
        fit = fit_model(m)
    assert fit.warnings


def test_metadata_contains_grid(small_fit):
    meta = small_fit.metadata()
    assert len(meta["grid"]) == len(small_fit.points)
    assert meta["seed"] == small_fit.seed


def test_hyperparameter_coverage_type1():
    spec = parse_model_spec("age-time; time=rw1; interaction=I")
    theta_true = np.array([1.0, 2.0, 3.0])
    covered = np.zeros(3, dtype=int)
    for seed in range(50):
        ds, _ = simulate_dataset(spec, theta_true, [], np.full((4, 6), 2e5), seed, alpha_true=-8.0)
        fit = fit_model(assemble_model(spec, ds))
        for j, row in enumerate(fit.hyper_summary()):
            covered[j] += row["log_precision_q025"] <= theta_true[j] <= row["log_precision_q975"]
    assert (covered >= 43).all(), covered


# --- DIC / WAIC ----------------------------------------------------------------

def test_point_mass_criteria():
    m = _toy_time()
    x = gaussian_approx(m, [2.0]).mode
    X = np.repeat(x[None, :], 200, axis=0)
    dic = dic_from_draws(m, X)
    waic = waic_from_draws(m, X)
    D = deviance(m, x[None, :])[0]
    assert dic.penalty == pytest.approx(0.0, abs=1e-9)
    assert dic.value == pytest.approx(D, abs=1e-9)
    assert waic.penalty == pytest.approx(0.0, abs=1e-9)
    assert waic.value == pytest.approx(D, abs=1e-9)


def test_deviance_includes_factorial_term():
    m = intercept_only([3.0], [1.0])
    x = np.array([[np.log(3.0)]])
    # -2 (3 log 3 - 3 - log 6)
    assert deviance(m, x)[0] == pytest.approx(-2 * (3 * np.log(3) - 3 - np.log(6)), abs=1e-12)


def test_intercept_pd_near_one():
    fit = fit_model(intercept_only(np.full(20, 5000.0), np.full(20, 1e6)))
    pd_ = compute_dic(fit, n_draws=4000).penalty
    assert 0.8 <= pd_ <= 1.2
    ref = mcmc_sample(fit.model, 6000, seed=3)
    assert 0.8 <= dic_from_draws(fit.model, ref.draws).penalty <= 1.2


def test_waic_needs_100_draws():
    fit = fit_model(_toy_time())
    with pytest.raises(ValueError):
        compute_waic(fit, n_draws=99)


def test_waic_matches_oracle():
    g = AdjacencyGraph.from_pairs([(0, 1), (1, 2)], 3)
    m = custom_model([6000.0, 10000.0, 8000.0], [1e7] * 3, [("space", range(3), icar_structure(g))])
    fit = fit_model(m)
    ref = mcmc_sample(m, 20000, seed=2, chains=8)
    assert abs(compute_waic(fit, n_draws=4000).value - waic_from_draws(m, ref.draws).value) < 2.0


def test_criteria_seeded_reproducible(small_fit):
    assert compute_dic(small_fit).value == compute_dic(small_fit).value
    assert compute_waic(small_fit).value == compute_waic(small_fit).value

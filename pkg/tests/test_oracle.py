import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mortsmooth.graphs import AdjacencyGraph, icar_structure, rw_structure
from mortsmooth.model import build_model, custom_model, parse_model_spec
from mortsmooth.oracle import (OracleError, effective_sample_size, grid_posterior, mcmc_sample,
                               rhat)


def conjugate_toy(k=0.5, lam=4.0):
    y = np.array([0.3, -0.2, 1.1])
    m = custom_model(y, np.ones(3), likelihood="gaussian", noise_precision=lam,
                     offset=np.zeros(3), fixed_precision=k)
    post_prec = k + 3 * lam
    evidence = multivariate_normal(np.zeros(3), np.ones((3, 3)) / k + np.eye(3) / lam).logpdf(y)
    return m, lam * y.sum() / post_prec, 1 / np.sqrt(post_prec), evidence


def test_standard_normal_target():
    res = mcmc_sample(lambda x: -0.5 * (np.atleast_2d(x) ** 2).sum(axis=1), 8000, seed=4, dim=1)
    assert abs(res.mean[0]) < 3 * res.mcse[0]
    assert res.sd[0] == pytest.approx(1.0, abs=0.05)


def test_correlated_bivariate_target():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    prec = np.linalg.inv(cov)

    def logp(x):
        x = np.atleast_2d(x)
        return -0.5 * np.einsum("ci,ij,cj->c", x, prec, x)

    res = mcmc_sample(logp, 20000, seed=5, dim=2)
    assert np.corrcoef(res.draws.T)[0, 1] == pytest.approx(0.8, abs=0.05)
    assert (res.rhat < 1.05).all()


def test_intercept_mcmc_agrees_with_grid():
    m = custom_model([40.0, 55.0], [1e4, 1.2e4])
    grid = grid_posterior(m)
    res = mcmc_sample(m, 10000, seed=6)
    assert abs(res.mean[0] - grid.mean[0]) < 3 * res.mcse[0]


def test_grid_conjugate_closed_form():
    m, mean, sd, evidence = conjugate_toy()
    res = grid_posterior(m)
    assert res.mean[0] == pytest.approx(mean, abs=1e-6)
    assert res.sd[0] == pytest.approx(sd, abs=1e-6)
    assert res.extra["log_normalizer"] == pytest.approx(evidence, abs=1e-6)


def test_grid_flat_prior_mode_is_mle():
    m = custom_model([10.0], [1000.0], fixed_precision=0.0)
    res = grid_posterior(m)
    assert np.exp(res.extra["mode"][0]) == pytest.approx(0.01, rel=1e-4)


def test_grid_refinement_halves_error():
    m, mean, sd, evidence = conjugate_toy()
    errs = [abs(grid_posterior(m, n_points=n).extra["log_normalizer"] - evidence) for n in (5, 9, 17)]
    assert errs[1] <= errs[0] / 2 and errs[2] <= errs[1] / 2


def test_cross_oracle_agreement_fixed_theta():
    g = AdjacencyGraph.from_pairs([(0, 1), (1, 2)], 3)
    m = custom_model([60.0, 100.0, 80.0], [1e4] * 3, [("space", range(3), icar_structure(g))])
    grid = grid_posterior(m, theta=[1.0])
    res = mcmc_sample(m, 20000, seed=7, theta=[1.0])
    assert (np.abs(res.mean - grid.mean) < 3 * res.mcse + 1e-12).all()


@pytest.mark.filterwarnings("ignore:oracle")
def test_draws_satisfy_constraints():
    O = np.random.default_rng(0).poisson(400, (3, 3)).astype(float)
    m = build_model(parse_model_spec("age-time; interaction=II"), O, np.full((3, 3), 1e5))
    res = mcmc_sample(m, 2000, seed=1)
    assert np.abs(res.draws @ m.constraints.T).max() < 1e-8
    assert res.ess.shape == res.mean.shape and res.theta_ess.shape == (3,)


def test_theta_support_matches_engine_box():
    from mortsmooth.oracle import log_density

    m = custom_model([5.0] * 3, [100.0] * 3, [("t", range(3), rw_structure(3, 1))])
    f, dim = log_density(m)
    x = np.zeros((2, dim))
    x[:, -1] = [14.9, 15.1]
    out = f(x)
    assert np.isfinite(out[0]) and out[1] == -np.inf


def test_dimension_guards():
    O = np.ones((8, 26))
    m = build_model(parse_model_spec("age-time; interaction=I"), O, np.full((8, 26), 100.0))
    with pytest.raises(OracleError):
        mcmc_sample(m, 10)
    small = custom_model([5.0] * 4, [100.0] * 4, [("t", range(4), rw_structure(4, 1))])
    with pytest.raises(OracleError):
        grid_posterior(small)


def test_low_ess_warns():
    with pytest.warns(RuntimeWarning, match="ESS"):
        mcmc_sample(custom_model([30.0], [1e3]), 60, seed=1)


def test_seeded_reproducible():
    m = custom_model([30.0, 20.0], [1e3, 1e3])
    a, b = mcmc_sample(m, 500, seed=9), mcmc_sample(m, 500, seed=9)
    assert np.array_equal(a.draws, b.draws)


def test_ess_and_rhat_on_iid():
    x = np.random.default_rng(1).standard_normal((4, 5000))
    assert effective_sample_size(x) == pytest.approx(20000, rel=0.1)
    assert rhat(x) == pytest.approx(1.0, abs=0.01)
    stuck = np.vstack([np.zeros(100), np.ones(100)]) + 0.01 * np.random.default_rng(2).standard_normal((2, 100))
    assert rhat(stuck) > 1.5

import numpy as np
import pytest
from conftest import AGES8, make_tables

from mortsmooth.data import ingest_dataset
from mortsmooth.graphs import AdjacencyGraph, rw_structure
from mortsmooth.inference import fit_model, gaussian_approx, prior_precision
from mortsmooth.model import (ModelDataError, SpecError, assemble_model, build_model,
                              constraint_set, custom_model, parse_model_spec)


# --- spec parsing ----------------------------------------------------------

def test_parse_male_spec():
    s = parse_model_spec("age-time; age=rw1; time=rw1; interaction=II")
    assert (s.kind, s.age_prior, s.second_prior, s.interaction) == ("age-time", "rw1", "rw1", "II")


def test_parse_female_spec():
    s = parse_model_spec("age-time; age=rw1; time=rw2; interaction=IV")
    assert s.second_prior == "rw2" and s.interaction == "IV"


def test_parse_axis_prior_mismatch():
    with pytest.raises(SpecError):
        parse_model_spec("age-space; time=rw1")


def test_parse_icar_on_time_rejected():
    with pytest.raises(SpecError):
        parse_model_spec("age-time; time=icar")


def test_parse_unknown_interaction():
    with pytest.raises(SpecError):
        parse_model_spec("age-time; interaction=V")


def test_parse_k_cap():
    text = "age-space\ncovariate=rural:spatial:k=10  # too many"
    with pytest.raises(SpecError):
        parse_model_spec(text, axis_lengths={"spatial": 47})
    s = parse_model_spec("age-space; covariate=rural:spatial:k=5", axis_lengths={"spatial": 47})
    c = s.covariates[0]
    assert (c.name, c.axis, c.decorrelate, c.k) == ("rural", "spatial", True, 5)


def test_parse_covariate_axis_must_match_kind():
    with pytest.raises(SpecError):
        parse_model_spec("age-time; covariate=rural:spatial")


def test_spec_text_round_trip():
    s = parse_model_spec("kind=age-time; time=rw2; interaction=III; covariate=unemp:temporal:k=2; removal=k")
    assert parse_model_spec(s.to_text()) == s


# --- constraints -----------------------------------------------------------

def test_constraints_additive():
    assert len(constraint_set(parse_model_spec("age-time"), (8, 13))) == 2


def test_constraints_type4():
    assert len(constraint_set(parse_model_spec("age-time; interaction=IV"), (8, 13))) == 22


def test_constraints_type3_space():
    assert len(constraint_set(parse_model_spec("age-space; interaction=III"), (8, 47))) == 2 + 47


@pytest.mark.parametrize("inter,rows", [("I", 1), ("II", 8), ("III", 13), ("IV", 20)])
def test_interaction_rows_match_nullity(inter, rows):
    from mortsmooth.graphs import interaction_structure

    cs = constraint_set(parse_model_spec(f"age-time; interaction={inter}"), (8, 13))
    n_int = sum(1 for lab in cs.labels if lab == "interaction")
    assert n_int == rows
    R = interaction_structure(inter, rw_structure(13, 1), rw_structure(8, 1))
    # type I has no null space; its single grand-sum row identifies the intercept
    assert n_int == (R.nullity if inter != "I" else 1)


@pytest.mark.parametrize("inter", ["II", "III", "IV"])
def test_interaction_rows_cancel_null_space(inter):
    from mortsmooth.graphs import interaction_structure

    spec = parse_model_spec(f"age-time; time=rw2; interaction={inter}")
    cs = constraint_set(spec, (4, 6))
    C = cs.rows[:, 4 + 6:]
    C = C[np.abs(C).sum(axis=1) > 0]
    R = interaction_structure(inter, rw_structure(6, 2), rw_structure(4, 1))
    # every null vector of R is excluded by the constraints
    assert np.linalg.matrix_rank(C @ R.null_basis) == R.nullity
    assert np.linalg.matrix_rank(C) == C.shape[0]


def test_constraints_full_row_rank():
    for inter in (None, "I", "II", "III", "IV"):
        spec = parse_model_spec("age-time").with_interaction(inter)
        C = constraint_set(spec, (5, 7)).rows
        assert np.linalg.matrix_rank(C) == C.shape[0]


def test_constraints_expand_for_disconnected_graph():
    g = AdjacencyGraph.from_pairs([(0, 1), (1, 2), (3, 4)], 5)
    m = build_model(parse_model_spec("age-space; interaction=II"), np.ones((3, 5)),
                    np.full((3, 5), 100.0), graph=g)
    labels = list(m.constraint_labels)
    assert labels.count("space") == 2
    assert labels.count("interaction") == 3 * 2


# --- assembly --------------------------------------------------------------

def _grid(A, J, seed=0):
    r = np.random.default_rng(seed)
    N = r.uniform(1e5, 1e6, (A, J))
    O = r.poisson(N * 1e-4).astype(float)
    return O, N


def test_latent_dimension_type2():
    O, N = _grid(8, 13)
    m = build_model(parse_model_spec("age-time; interaction=II"), O, N)
    assert m.n_latent == 1 + 8 + 13 + 104
    m2 = build_model(parse_model_spec("age-time; interaction=II; covariate=u:temporal"), O, N,
                     covariates={"u": np.arange(13.0)})
    assert m2.n_latent == 1 + 1 + 8 + 13 + 104


def test_cell_order_age_fastest():
    O, N = _grid(3, 4)
    m = build_model(parse_model_spec("age-time"), O, N)
    assert m.cell_age.tolist()[:4] == [0, 1, 2, 0]
    assert m.observed[1] == O[1, 0] and m.observed[3] == O[0, 1]


def test_every_block_structure_scaled():
    O, N = _grid(4, 6)
    m = build_model(parse_model_spec("age-time; time=rw2; interaction=IV"), O, N)
    for b in m.blocks:
        if b.structure is not None:
            assert b.structure.scaled


def test_constrained_prior_proper():
    O, N = _grid(4, 6)
    for inter in ("I", "II", "III", "IV"):
        m = build_model(parse_model_spec(f"age-time; time=rw1; interaction={inter}"), O, N)
        Q = prior_precision(m, np.zeros(m.n_hyper))
        np.linalg.cholesky(Q)  # proper on the constrained subspace
        assert np.abs(m.constraints @ m.basis).max() < 1e-12


def test_zero_exposure_with_deaths_rejected():
    O, N = _grid(3, 4)
    N[1, 2] = 0.0
    O[1, 2] = 3.0
    with pytest.raises(ModelDataError):
        build_model(parse_model_spec("age-time"), O, N)


def test_space_model_needs_graph():
    O, N = _grid(3, 4)
    with pytest.raises(ModelDataError):
        build_model(parse_model_spec("age-space"), O, N)


def test_missing_cells_kept_for_prediction():
    areas = ["Madrid", "Toledo"]
    years = list(range(2008, 2014))
    miss = [("Madrid", y, g, "M") for y in (2010, 2011, 2012) for g in AGES8]
    counts, pop = make_tables(areas, years, AGES8, missing=miss)
    ds = ingest_dataset(counts, pop)
    g = AdjacencyGraph.from_pairs([(0, 1)], 2, labels=areas)
    m = assemble_model(parse_model_spec("age-space; interaction=I"), ds, g)
    # years are pooled for age-space: Madrid cells are only partly missing, so none is dropped
    assert not m.missing.any()
    m_t = assemble_model(parse_model_spec("age-time"), ds.__class__(
        ds.cells[ds.cells["area"] == "Madrid"].reset_index(drop=True)))
    assert m_t.missing.sum() == 3 * 8
    assert np.isnan(m_t.observed[m_t.missing]).all()
    fit = fit_model(m_t)
    assert np.isfinite(fit.mean).all()


def test_covariate_standardized_and_decorrelated():
    O, N = _grid(3, 13)
    x = np.linspace(0, 1, 13) ** 2 * 50 + 3
    m = build_model(parse_model_spec("age-time; covariate=u:temporal:k=2"), O, N,
                    covariates={"u": x})
    cov = m.covariates[0]
    assert cov.center == pytest.approx(x.mean()) and cov.scale == pytest.approx(x.std(ddof=1))
    from mortsmooth.graphs import eigendecompose

    es = eigendecompose(rw_structure(13, 1))
    assert np.abs(es.vectors[:, -3:].T @ cov.values).max() < 1e-10
    assert cov.removed_energy > 0


def test_permutation_equivariance():
    r = np.random.default_rng(4)
    O = r.poisson(5000, 6).astype(float)
    N = np.full(6, 1e6)
    levels = np.array([0, 1, 2, 0, 1, 2])
    R = rw_structure(3, 1)
    m1 = custom_model(O, N, [("t", levels, R)])
    perm = r.permutation(6)
    m2 = custom_model(O[perm], N[perm], [("t", levels[perm], R)])
    g1 = gaussian_approx(m1, [1.0])
    g2 = gaussian_approx(m2, [1.0])
    assert np.allclose(g1.mean, g2.mean, atol=1e-9)
    assert g1.log_marginal == pytest.approx(g2.log_marginal, abs=1e-9)
    f1, f2 = fit_model(m1), fit_model(m2)
    assert np.allclose(f1.mean, f2.mean, atol=1e-8)


def test_model_is_immutable():
    O, N = _grid(3, 4)
    m = build_model(parse_model_spec("age-time"), O, N)
    with pytest.raises(Exception):
        m.likelihood = "gaussian"

"""Stratified mortality data: ingestion, crude rates, simulation and export."""

from __future__ import annotations

import io
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

KEYS = ["area", "year", "age_group", "sex"]
PER = 1e5
Z975 = 1.959963984540054

RURALITY_LEVELS = ("low", "medium", "high")
AGE_BANDS = ("<=40", "40-70", ">=70")
SCHEMA_VERSION = 1


class DataError(ValueError):
    pass


def age_lower(label: str) -> int:
    m = re.match(r"\s*(\d+)", str(label))
    if not m:
        raise DataError(f"cannot read age group {label!r}")
    return int(m.group(1))


def age_band(label: str) -> str:
    lo = age_lower(label)
    if lo < 40:
        return "<=40"
    if lo < 70:
        return "40-70"
    return ">=70"


def rurality_level(percent: float) -> str:
    """Low below 20%, medium 20-40%, high above 40%."""
    if not np.isfinite(percent) or percent < 0 or percent > 100:
        raise DataError(f"rurality percentage out of range: {percent}")
    if percent < 20:
        return "low"
    if percent <= 40:
        return "medium"
    return "high"


@dataclass(eq=False)
class Dataset:
    """Full-grid table of deaths and population by area, year, age group and sex.

    ``cells`` has columns ``area, year, age_group, sex, deaths, population,
    missing``; missing cells carry ``deaths = NaN``. ``covariates`` maps a
    name to a frame with ``label, value`` and an optional ``sex`` column.
    """

    cells: pd.DataFrame
    covariates: dict = field(default_factory=dict)

    @property
    def areas(self):
        return tuple(sorted(self.cells["area"].unique(), key=str))

    @property
    def years(self):
        return tuple(sorted(self.cells["year"].unique()))

    @property
    def age_groups(self):
        return tuple(sorted(self.cells["age_group"].unique(), key=age_lower))

    @property
    def sexes(self):
        return tuple(sorted(self.cells["sex"].unique()))

    def for_sex(self, sex):
        if sex is None:
            if len(self.sexes) != 1:
                raise DataError(f"dataset has sexes {self.sexes}; choose one")
            return self.cells
        sub = self.cells[self.cells["sex"] == sex]
        if sub.empty:
            raise DataError(f"no cells for sex {sex!r}")
        return sub

    def covariate_vector(self, name, labels, sex=None) -> np.ndarray:
        """Covariate values aligned with ``labels`` (areas or years)."""
        if name not in self.covariates:
            raise DataError(f"covariate {name!r} not loaded")
        tab = self.covariates[name]
        if "sex" in tab.columns and tab["sex"].notna().any():
            if sex is not None and (tab["sex"] == sex).any():
                tab = tab[tab["sex"] == sex]
            elif sex is not None:
                tab = tab[tab["sex"].isna() | (tab["sex"] == "")]
        lookup = {str(k): float(v) for k, v in zip(tab["label"], tab["value"])}
        try:
            return np.array([lookup[str(lab)] for lab in labels])
        except KeyError as exc:
            raise DataError(f"covariate {name!r} has no value for {exc.args[0]!r}") from None

    def equals(self, other: "Dataset") -> bool:
        a = self.cells.sort_values(KEYS).reset_index(drop=True)
        b = other.cells.sort_values(KEYS).reset_index(drop=True)
        if not a.equals(b):
            return False
        if sorted(self.covariates) != sorted(other.covariates):
            return False
        return all(
            self.covariates[k].reset_index(drop=True).equals(other.covariates[k].reset_index(drop=True))
            for k in self.covariates
        )


def _read_csv(source) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.copy()
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    return pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")


def ingest_dataset(counts_csv, population_csv, covariate_csvs=None, area_labels=None,
                   drop_youngest=True) -> Dataset:
    """Read and validate the counts and population tables.

    Parameters
    ----------
    counts_csv, population_csv : path, CSV text or DataFrame
        Headers ``area,year,age_group,sex,deaths`` and
        ``area,year,age_group,sex,population``. An empty deaths field marks
        the cell missing.
    covariate_csvs : dict, optional
        Name to ``label,value[,sex]`` table.
    area_labels : sequence, optional
        Allowed area labels (e.g. from the adjacency graph).
    drop_youngest : bool
        Drop age groups starting at 0.

    Raises
    ------
    DataError
        Negative counts, non-positive population, deaths above population,
        unknown labels or gaps in the grid.
    """
    counts = _read_csv(counts_csv)
    pop = _read_csv(population_csv)
    for df, col, what in ((counts, "deaths", "counts"), (pop, "population", "population")):
        missing_cols = set(KEYS + [col]) - set(df.columns)
        if missing_cols:
            raise DataError(f"{what} table lacks columns {sorted(missing_cols)}")
        for k in KEYS:
            df[k] = df[k].astype(str).str.strip()
    for df, what in ((counts, "counts"), (pop, "population")):
        dup = df.duplicated(KEYS)
        if dup.any():
            raise DataError(f"duplicate {what} row {tuple(df.loc[dup.idxmax(), KEYS])}")
        try:
            df["year"] = df["year"].astype(int)
        except ValueError:
            raise DataError(f"non-integer year in {what} table") from None

    d = counts["deaths"].astype(str).str.strip()
    counts["missing"] = d.eq("") | d.str.upper().isin(["NA", "NAN"])
    try:
        counts["deaths"] = pd.to_numeric(d.where(~counts["missing"], None), errors="raise").astype(float)
        pop["population"] = pd.to_numeric(pop["population"].astype(str).str.strip(),
                                          errors="raise").astype(float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"non-numeric value: {exc}") from None

    if drop_youngest:
        counts = counts[counts["age_group"].map(age_lower) > 0]
        pop = pop[pop["age_group"].map(age_lower) > 0]

    merged = counts[KEYS + ["deaths", "missing"]].merge(
        pop[KEYS + ["population"]], on=KEYS, how="outer", indicator=True)
    if (merged["_merge"] != "both").any():
        row = merged[merged["_merge"] != "both"].iloc[0]
        side = "population" if row["_merge"] == "left_only" else "counts"
        raise DataError(f"cell {tuple(row[KEYS])} has no matching {side} row")
    merged = merged.drop(columns="_merge")
    _validate_cells(merged, area_labels)

    covs = {}
    for name, src in (covariate_csvs or {}).items():
        covs[name] = _read_covariate(src, name)
    merged = merged[KEYS + ["deaths", "population", "missing"]]
    merged = merged.sort_values(KEYS, key=_sort_key).reset_index(drop=True)
    return Dataset(merged, covs)


def _sort_key(col):
    if col.name == "age_group":
        return col.map(age_lower)
    return col


def _read_covariate(src, name):
    tab = _read_csv(src)
    if not {"label", "value"} <= set(tab.columns):
        raise DataError(f"covariate {name!r} needs header 'label,value'")
    tab["label"] = tab["label"].astype(str).str.strip()
    try:
        tab["value"] = pd.to_numeric(tab["value"], errors="raise").astype(float)
    except ValueError:
        raise DataError(f"non-numeric value in covariate {name!r}") from None
    cols = ["label", "value"] + (["sex"] if "sex" in tab.columns else [])
    return tab[cols].reset_index(drop=True)


def _validate_cells(cells, area_labels=None):
    obs = cells[~cells["missing"]]
    if (obs["deaths"] < 0).any():
        raise DataError(f"negative deaths at {tuple(obs.loc[obs['deaths'].idxmin(), KEYS])}")
    if (np.floor(obs["deaths"]) != obs["deaths"]).any():
        raise DataError("deaths must be whole numbers")
    if not (cells["population"] > 0).all():
        bad = cells.loc[~(cells["population"] > 0)].iloc[0]
        raise DataError(f"population must be positive at {tuple(bad[KEYS])}")
    over = obs["deaths"] > obs["population"]
    if over.any():
        raise DataError(f"deaths exceed population at {tuple(obs.loc[over.idxmax(), KEYS])}")
    if area_labels is not None:
        unknown = set(cells["area"]) - set(map(str, area_labels))
        if unknown:
            raise DataError(f"unknown area labels: {sorted(unknown)[:5]}")
    n_a, n_y, n_g = (cells[k].nunique() for k in ("area", "year", "age_group"))
    for sex, sub in cells.groupby("sex"):
        if len(sub) != n_a * n_y * n_g:
            raise DataError(
                f"grid gap for sex {sex!r}: {len(sub)} cells, expected {n_a}x{n_y}x{n_g}")


def aggregate_grid(dataset: Dataset, kind: str, sex=None):
    """Collapse one sex onto the ``(age, year)`` or ``(age, area)`` grid.

    Missing cells are left out of both numerator and denominator; a grid
    cell whose contributions are all missing is itself missing.
    """
    cells = dataset.for_sex(sex)
    second = "year" if kind == "age-time" else "area"
    ages = dataset.age_groups
    seconds = tuple(sorted(cells[second].unique(), key=(None if second == "year" else str)))
    obs = cells[~cells["missing"]]
    O = obs.pivot_table(index="age_group", columns=second, values="deaths", aggfunc="sum")
    N = obs.pivot_table(index="age_group", columns=second, values="population", aggfunc="sum")
    O = O.reindex(index=list(ages), columns=list(seconds))
    N_obs = N.reindex(index=list(ages), columns=list(seconds))
    miss = O.isna().to_numpy()
    N_all = cells.pivot_table(index="age_group", columns=second, values="population",
                              aggfunc="sum").reindex(index=list(ages), columns=list(seconds))
    N_arr = np.where(miss, N_all.to_numpy(), N_obs.to_numpy())
    return O.to_numpy(dtype=float), N_arr.astype(float), miss, ages, tuple(str(s) for s in seconds)


# ---------------------------------------------------------------------------
# descriptive rates


def crude_rates(dataset: Dataset, grouping=(), clamp=True, rurality="rurality") -> pd.DataFrame:
    """Crude rates per 100,000 with Poisson-normal 95% intervals.

    ``grouping`` is any subset of ``sex, age_band, age_group, year, area,
    rurality``. Rates pool counts within each stratum (never averaging
    sub-stratum rates); missing cells leave both deaths and population.
    """
    grouping = [g.strip().replace("-", "_") for g in grouping]
    allowed = {"sex", "age_band", "age_group", "year", "area", "rurality"}
    bad = set(grouping) - allowed
    if bad:
        raise DataError(f"unknown grouping {sorted(bad)}")
    cells = dataset.cells.copy()
    if "age_band" in grouping:
        cells["age_band"] = cells["age_group"].map(age_band)
    if "rurality" in grouping:
        vals = dict(zip(*_covariate_pairs(dataset, rurality)))
        try:
            cells["rurality"] = cells["area"].map(lambda a: rurality_level(vals[str(a)]))
        except KeyError as exc:
            raise DataError(f"no rurality value for area {exc.args[0]!r}") from None
    obs = cells[~cells["missing"]]
    if grouping:
        g = obs.groupby(grouping, sort=True)[["deaths", "population"]].sum().reset_index()
        full = cells.groupby(grouping, sort=True).size().reset_index()[grouping]
        g = full.merge(g, on=grouping, how="left").fillna({"deaths": 0.0, "population": 0.0})
    else:
        g = pd.DataFrame({"deaths": [obs["deaths"].sum()], "population": [obs["population"].sum()]})
    if (g["population"] <= 0).any():
        row = g[g["population"] <= 0].iloc[0]
        raise DataError(f"empty stratum {tuple(row[grouping]) if grouping else ()}")
    out = rate_table(g["deaths"].to_numpy(), g["population"].to_numpy(), clamp)
    for col in ("deaths", "population"):
        g[col] = g[col].astype(float)
    return pd.concat([g.reset_index(drop=True), out], axis=1)


def rate_table(deaths, population, clamp=True) -> pd.DataFrame:
    deaths = np.asarray(deaths, dtype=float)
    population = np.asarray(population, dtype=float)
    rate = PER * deaths / population
    half = Z975 * PER * np.sqrt(deaths) / population
    lo = rate - half
    if clamp:
        lo = np.maximum(lo, 0.0)
    return pd.DataFrame({"rate": rate, "ci_low": lo, "ci_high": rate + half})


def _covariate_pairs(dataset, name):
    if name not in dataset.covariates:
        raise DataError(f"covariate {name!r} not loaded")
    tab = dataset.covariates[name]
    return tab["label"].astype(str).tolist(), tab["value"].astype(float).tolist()


# ---------------------------------------------------------------------------
# simulation


def simulate_dataset(spec, theta_true, beta_true, exposures, seed, graph=None, alpha_true=-9.0,
                     covariates=None, age_labels=None, second_labels=None, sex="M"):
    """Draw a synthetic dataset from the model's scaled, constrained priors.

    Parameters
    ----------
    spec : ModelSpec
    theta_true : sequence of float
        Log-precisions for (age, time|space[, interaction]); ``+inf`` gives
        a zero effect.
    beta_true : sequence of float
        Coefficients of the model-ready (standardized, possibly
        decorrelated) covariates, in ``spec.covariates`` order.
    exposures : array, shape (A, J)
    seed : int

    Returns
    -------
    (Dataset, dict)
        The dataset and a truth record with ``alpha, beta, theta, latent,
        rates`` and the per-block effects.
    """
    from .model import build_model

    theta = np.asarray(theta_true, dtype=float)
    if np.any(np.isnan(theta)) or np.any(theta == -np.inf):
        raise ValueError("theta_true must be finite or +inf")
    N = np.asarray(exposures, dtype=float)
    if np.any(N <= 0):
        raise ValueError("exposures must be positive")
    A, J = N.shape
    if age_labels is None:
        age_labels = [f"{10 * (a + 1)}-{10 * (a + 1) + 9}" for a in range(A)]
    if second_labels is None:
        second_labels = (list(graph.labels) if spec.kind == "age-space"
                         else [str(2010 + j) for j in range(J)])
    model = build_model(spec, np.zeros_like(N), N, None, graph, age_labels, second_labels,
                        covariates)
    if theta.size != model.n_hyper:
        raise ValueError(f"need {model.n_hyper} log-precisions, got {theta.size}")
    beta = np.atleast_1d(np.asarray(beta_true, dtype=float))
    if beta.size != len(model.covariates):
        raise ValueError("one beta per covariate required")
    rng = np.random.default_rng(seed)

    x = np.zeros(model.n_latent)
    x[0] = alpha_true
    for b, c in zip((b for b in model.blocks if b.name.startswith("beta:")), beta):
        x[b.start] = c
    for b in model.blocks:
        if b.structure is None:
            continue
        tau = np.exp(theta[b.hyper])
        if not np.isfinite(tau):
            continue
        Bj = model.basis[b.slice]
        Bj = Bj[:, np.abs(Bj).sum(axis=0) > 0]
        P = Bj.T @ b.structure.entries @ Bj
        vals, vecs = np.linalg.eigh(P)
        keep = vals > 1e-9 * vals.max()
        eps = rng.standard_normal(keep.sum())
        z = vecs[:, keep] @ (eps / np.sqrt(tau * vals[keep]))
        x[b.slice] = Bj @ z
    eta = model.design @ x
    rates = np.exp(eta).reshape(J, A).T
    deaths = rng.poisson(N * rates)

    rows = []
    area_of = (lambda j: "national") if spec.kind == "age-time" else (lambda j: second_labels[j])
    year_of = (lambda j: int(second_labels[j])) if spec.kind == "age-time" else (lambda j: 2010)
    for j in range(J):
        for a in range(A):
            rows.append((area_of(j), year_of(j), age_labels[a], sex, float(deaths[a, j]),
                         float(N[a, j]), False))
    cells = pd.DataFrame(rows, columns=KEYS + ["deaths", "population", "missing"])
    cells = cells.sort_values(KEYS, key=_sort_key).reset_index(drop=True)
    covs = {name: pd.DataFrame({"label": [str(s) for s in second_labels],
                                "value": np.asarray(v, dtype=float)})
            for name, v in (covariates or {}).items()}
    effects = {b.name: x[b.slice].copy() for b in model.blocks}
    truth = {"alpha": alpha_true, "beta": beta, "theta": theta, "latent": x, "rates": rates,
             "effects": effects, "model": model, "seed": seed}
    return Dataset(cells, covs), truth


# ---------------------------------------------------------------------------
# export


def _write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, lineterminator="\n")


def export_results(tables: dict, out_dir, metadata: dict | None = None) -> list:
    """Write named tables as CSV plus ``metadata.json``; returns written paths.

    Files are written in sorted name order and JSON keys are sorted, so the
    same inputs produce identical bytes.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"destination {out_dir} is not writable")
    written = []
    for name in sorted(tables):
        path = os.path.join(out_dir, f"{name}.csv")
        _write_csv(tables[name], path)
        written.append(path)
    if metadata is not None:
        metadata = {"schema_version": SCHEMA_VERSION, **metadata}
        path = os.path.join(out_dir, "metadata.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(metadata), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written


def export_dataset(dataset: Dataset, out_dir) -> dict:
    """Write a dataset back to ingestible CSVs; returns the paths by role."""
    os.makedirs(out_dir, exist_ok=True)
    c = dataset.cells
    counts = c[KEYS].copy()
    counts["deaths"] = [("" if m else _num(v)) for v, m in zip(c["deaths"], c["missing"])]
    pop = c[KEYS].copy()
    pop["population"] = [_num(v) for v in c["population"]]
    paths = {"counts": os.path.join(out_dir, "counts.csv"),
             "population": os.path.join(out_dir, "population.csv")}
    _write_csv(counts, paths["counts"])
    _write_csv(pop, paths["population"])
    for name in sorted(dataset.covariates):
        p = os.path.join(out_dir, f"covariate_{name}.csv")
        _write_csv(dataset.covariates[name], p)
        paths[f"covariate:{name}"] = p
    return paths


def _num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj

"""Reported quantities derived from a fitted model: rates, exceedances, variance shares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .inference import FitResult

DEFAULT_DRAWS = 4000
PROBS = (0.025, 0.5, 0.975)


class ProductError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExceedanceReport:
    """Posterior exceedance probabilities, one per unit (or per age-area cell)."""

    labels: tuple
    probabilities: np.ndarray
    threshold: str
    age_labels: tuple = ()

    def to_frame(self) -> pd.DataFrame:
        p = np.asarray(self.probabilities)
        if p.ndim == 2:
            A, S = p.shape
            return pd.DataFrame({
                "age_group": np.repeat(self.age_labels, S),
                "unit": np.tile(self.labels, A),
                "probability": p.reshape(-1),
                "threshold": self.threshold,
            })
        return pd.DataFrame({"unit": list(self.labels), "probability": p, "threshold": self.threshold})


def _draws(fit: FitResult, draws, seed):
    if isinstance(draws, np.ndarray):
        return draws
    X, _ = fit.draws(DEFAULT_DRAWS if draws is None else int(draws), seed)
    return X


def _require_block(fit, block):
    if not fit.model.has_block(block):
        raise ProductError(f"model has no {block!r} block")
    return fit.model.block(block)


def _quantile_frame(values, labels, per, key="index"):
    q = np.quantile(values, PROBS, axis=0) * per
    return pd.DataFrame({key: list(labels), "q025": q[0], "median": q[1], "q975": q[2]})


def marginal_pattern_rates(fit: FitResult, block: str, draws=None, seed=None, per=1e5) -> pd.DataFrame:
    """Quantiles of ``exp(alpha + effect_i)`` from joint mixture draws.

    Parameters
    ----------
    block : {"age", "time", "space"}
    draws : int or ndarray, optional
        Number of mixture draws (default 4000) or a ready ``(n, n_latent)`` array.
    per : float
        Rate multiplier; ``1e5`` reports deaths per 100,000.
    """
    if block not in ("age", "time", "space"):
        raise ProductError(f"pattern rates are defined for age, time or space, not {block!r}")
    b = _require_block(fit, block)
    X = _draws(fit, draws, seed)
    alpha = X[:, fit.model.block("intercept").start]
    rates = np.exp(alpha[:, None] + X[:, b.slice])
    return _quantile_frame(rates, b.labels, per)


def _cell_log_rates(fit, X):
    m = fit.model
    shift = m.log_offset - np.log(m.exposure)
    return X @ m.design.T + shift


def cell_rate_estimates(fit: FitResult, draws=None, seed=None, per=1e5) -> pd.DataFrame:
    """Per-cell quantiles of the rate ``exp(eta - log N)``, missing cells included."""
    m = fit.model
    X = _draws(fit, draws, seed)
    rates = np.exp(_cell_log_rates(fit, X))
    q = np.quantile(rates, PROBS, axis=0) * per
    axis = m.spec.second_axis if m.spec is not None else "unit"
    return pd.DataFrame({
        "age_group": [m.age_labels[a] for a in m.cell_age] if m.age_labels else m.cell_age,
        axis: [m.second_labels[j] for j in m.cell_second] if m.second_labels else m.cell_second,
        "observed": m.observed,
        "exposure": m.exposure,
        "missing": m.missing,
        "q025": q[0],
        "median": q[1],
        "q975": q[2],
    })


def exceedance_effect(fit: FitResult, block: str, draws=None, seed=None) -> ExceedanceReport:
    """``Pr(effect_i > 0 | O)`` for every unit of ``block``."""
    b = _require_block(fit, block)
    X = _draws(fit, draws, seed)
    p = (X[:, b.slice] > 0).mean(axis=0)
    return ExceedanceReport(tuple(b.labels), p, f"{block} effect > 0")


def exceedance_vs_age_mean(fit: FitResult, draws=None, seed=None, joint=False) -> ExceedanceReport:
    """Probability that each area's rate exceeds its age group's overall level.

    By default the comparison is on the rate scale against the plug-in
    posterior median of ``exp(alpha + phi_a)``. With ``joint=True`` the
    probability ``Pr(xi_s + delta_as > 0 | O)`` is computed from the same
    draws instead, with no plug-in.
    """
    m = fit.model
    if m.spec is None or m.spec.kind != "age-space":
        raise ProductError("exceedance against the age mean needs an age-space model")
    X = _draws(fit, draws, seed)
    A, S = m.dims
    age = m.block("age")
    space = m.block("space")
    if joint:
        contrast = X[:, space.start + m.cell_second]
        if m.has_block("interaction"):
            contrast = contrast + X[:, m.block("interaction").slice]
        p = (contrast > 0).mean(axis=0)
        threshold = "spatial + interaction effect > 0"
    else:
        alpha = X[:, m.block("intercept").start]
        ref = np.median(np.exp(alpha[:, None] + X[:, age.slice]), axis=0)
        rates = np.exp(_cell_log_rates(fit, X))
        p = (rates > ref[m.cell_age]).mean(axis=0)
        threshold = "rate > posterior median of exp(alpha + phi_a)"
    grid = np.empty((A, S))
    grid[m.cell_age, m.cell_second] = p
    return ExceedanceReport(tuple(m.second_labels), grid, threshold, tuple(m.age_labels))


def variance_shares(precisions: dict) -> dict:
    """``share_i = (1/tau_i) / sum_j (1/tau_j)``."""
    tau = np.array([float(v) for v in precisions.values()])
    if np.any(~(tau > 0)):
        raise ProductError("precisions must be positive")
    inv = 1.0 / tau
    return dict(zip(precisions, inv / inv.sum()))


def variance_decomposition(fit: FitResult) -> pd.DataFrame:
    """Share of total variance per random-effect block from median precisions.

    Shares are only comparable when every structure matrix was scaled to unit
    generalized variance; unscaled structures raise ``ProductError``.
    """
    m = fit.model
    blocks = [b for b in m.blocks if b.hyper is not None]
    if not blocks:
        raise ProductError("model has no random-effect blocks")
    for b in blocks:
        if not b.structure.scaled:
            raise ProductError(f"structure of block {b.name!r} is not scaled; shares are not comparable")
    med = {row["name"]: row["precision_median"] for row in fit.hyper_summary()}
    names = [m.hyper_names[b.hyper] for b in blocks]
    shares = variance_shares({n: med[n] for n in names})
    rest = {n: med[n] for n in names if n != "age"}
    adjusted = variance_shares(rest) if rest and "age" in names else {}
    return pd.DataFrame({
        "component": names,
        "precision_median": [med[n] for n in names],
        "share": [shares[n] for n in names],
        "share_excluding_age": [adjusted.get(n, np.nan) for n in names],
    })

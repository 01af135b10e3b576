"""Simplified spatial+ decorrelation of covariates and rate-ratio summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import EigenSystem

CAP_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class CovariateVector:
    axis: str
    values: np.ndarray
    standardized: bool
    center: float = 0.0
    scale: float = 1.0
    raw: np.ndarray | None = None

    def __post_init__(self):
        if self.axis not in ("spatial", "temporal"):
            raise ValueError(f"axis must be 'spatial' or 'temporal', got {self.axis!r}")
        if self.scale <= 0:
            raise ValueError("covariate scale must be positive")


@dataclass(frozen=True, eq=False)
class DecorrelatedCovariate:
    """``x = z + removed`` with ``removed`` in the span of the smoothest eigenvectors."""

    z: np.ndarray
    removed: np.ndarray
    removed_span: np.ndarray
    k: int
    coefficients: np.ndarray
    axis: str = "spatial"

    @property
    def removed_energy(self) -> float:
        return float(self.removed @ self.removed)


@dataclass(frozen=True)
class RateRatioSummary:
    q025: float
    median: float
    q975: float

    def as_tuple(self):
        return (self.q025, self.median, self.q975)


def standardize_covariate(x, axis="spatial") -> CovariateVector:
    """Center and divide by the sample standard deviation (n - 1 denominator)."""
    if isinstance(x, CovariateVector):
        axis, x = x.axis, x.values
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("covariate needs at least two values")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariate contains non-finite values")
    center = float(x.mean())
    scale = float(x.std(ddof=1))
    if scale <= 1e-12 * max(1.0, abs(center)):
        raise ValueError("cannot standardize a constant covariate")
    return CovariateVector(axis, (x - center) / scale, True, center, scale, raw=x)


def removal_count(k: int, include_boundary: bool = True) -> int:
    """Number of trailing eigenvectors removed for a given ``k``.

    With ``include_boundary`` the index range ``n-k .. n`` is taken
    literally (``k + 1`` vectors); otherwise exactly ``k``.
    """
    return k + 1 if include_boundary else k


def check_cap(k: int, n: int) -> None:
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k > CAP_FRACTION * n:
        raise ValueError(f"k={k} exceeds {CAP_FRACTION:.0%} of the {n} eigenvectors")


def decorrelate_covariate(x, eigensystem: EigenSystem, k: int, include_boundary: bool = True,
                          axis: str | None = None) -> DecorrelatedCovariate:
    """Remove the projection of ``x`` onto the smoothest eigenvectors.

    Parameters
    ----------
    x : array_like or CovariateVector
        Covariate on the same axis as ``eigensystem`` (one value per area or year).
    eigensystem : EigenSystem
        Eigenvectors of the matching structure matrix, eigenvalues descending.
    k : int
        Number of large-scale eigenvectors; must not exceed 20% of the axis.
    include_boundary : bool
        Remove ``k + 1`` trailing vectors (default) instead of ``k``.
    axis : {"spatial", "temporal"}, optional
        Checked against ``x.axis`` when ``x`` is a CovariateVector.
    """
    if isinstance(x, CovariateVector):
        if axis is not None and axis != x.axis:
            raise ValueError(f"axis mismatch: covariate is {x.axis}, eigensystem is {axis}")
        axis = x.axis
        x = x.values
    x = np.asarray(x, dtype=float)
    U = eigensystem.vectors
    n = U.shape[0]
    if x.shape != (n,):
        raise ValueError(f"covariate length {x.size} does not match axis length {n}")
    check_cap(k, n)
    m = removal_count(k, include_boundary)
    span = U[:, n - m:] if m else np.zeros((n, 0))
    coef = span.T @ x
    removed = span @ coef
    return DecorrelatedCovariate(x - removed, removed, span, k, coef, axis or "spatial")


def rate_ratio(beta, scale: float, delta: float = 1.0) -> RateRatioSummary:
    """Map coefficient quantiles to rate ratios for a ``delta`` change in original units.

    ``beta`` is either an array of posterior draws of a standardized-covariate
    coefficient or a callable returning its quantile at a probability.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    probs = (0.025, 0.5, 0.975)
    if callable(beta):
        q = np.array([beta(p) for p in probs], dtype=float)
    else:
        q = np.quantile(np.asarray(beta, dtype=float), probs)
    rr = np.exp(q * (delta / scale))
    lo, hi = sorted((rr[0], rr[2]))
    return RateRatioSummary(float(lo), float(rr[1]), float(hi))

"""Gaussian approximation, hyperparameter grid integration and DIC/WAIC.

All latent computations run in the reduced coordinates ``z`` of the
constraint kernel (``x = basis @ z``), so the constrained mode, precision and
determinant are exact for the conditioned Gaussian and no correction step is
needed after the solve.
"""

from __future__ import annotations

import itertools
import logging
import warnings
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp

from .model import AssembledModel

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
THETA_BOUND = 15.0
DEFAULT_SEED = 20240607


class ConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm=None, iterations=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# per-model reduced quantities


@dataclass(frozen=True, eq=False)
class _Reduced:
    Az: np.ndarray          # observed rows of design @ basis
    offset: np.ndarray      # observed rows of the log offset
    y: np.ndarray           # observed outcomes
    lgam: float             # sum log(O!) over observed cells
    fixed_cols: np.ndarray  # z columns with the fixed-effect prior
    hyper_cols: tuple       # z columns of each hyperparameter block
    P: tuple                # reduced structure per hyper block
    rank: tuple
    logpdet: tuple
    m: int


_CACHE: "weakref.WeakKeyDictionary[AssembledModel, _Reduced]" = weakref.WeakKeyDictionary()


def _reduced(model: AssembledModel) -> _Reduced:
    red = _CACHE.get(model)
    if red is not None:
        return red
    B = model.basis
    obs = ~model.missing
    Az = (model.design @ B)[obs]
    col_owner = np.full(B.shape[1], -1)
    for k, b in enumerate(model.blocks):
        col_owner[np.abs(B[b.slice]).sum(axis=0) > 0] = k
    fixed, hyper_cols, P, rank, logpdet = [], [None] * model.n_hyper, [None] * model.n_hyper, \
        [0] * model.n_hyper, [0.0] * model.n_hyper
    for k, b in enumerate(model.blocks):
        cols = np.flatnonzero(col_owner == k)
        if b.structure is None:
            fixed.extend(cols)
            continue
        Bj = B[b.slice][:, cols]
        Pj = Bj.T @ b.structure.entries @ Bj
        Pj = 0.5 * (Pj + Pj.T)
        vals = np.linalg.eigvalsh(Pj)
        pos = vals > 1e-9 * vals.max()
        hyper_cols[b.hyper] = cols
        P[b.hyper] = Pj
        rank[b.hyper] = int(pos.sum())
        logpdet[b.hyper] = float(np.log(vals[pos]).sum())
    y = model.observed[obs]
    lgam = float(gammaln(y + 1).sum()) if model.likelihood == "poisson" else 0.0
    red = _Reduced(Az, model.log_offset[obs], y, lgam, np.array(fixed, dtype=int),
                   tuple(hyper_cols), tuple(P), tuple(rank), tuple(logpdet), B.shape[1])
    _CACHE[model] = red
    return red


def prior_precision(model: AssembledModel, theta) -> np.ndarray:
    """Prior precision of the reduced latent vector at log-precisions ``theta``."""
    red = _reduced(model)
    theta = np.asarray(theta, dtype=float)
    Q = np.zeros((red.m, red.m))
    Q[red.fixed_cols, red.fixed_cols] = model.fixed_precision
    for j, cols in enumerate(red.hyper_cols):
        Q[np.ix_(cols, cols)] = np.exp(theta[j]) * red.P[j]
    return Q


def log_hyperprior(theta) -> float:
    """Flat prior on each standard deviation, expressed on log-precision:
    ``p(theta) = exp(-theta / 2) / 2``."""
    theta = np.asarray(theta, dtype=float)
    return float(np.sum(np.log(0.5) - 0.5 * theta))


def _loglik_terms(model, red, eta):
    if model.likelihood == "poisson":
        mu = np.exp(eta)
        return red.y * eta - mu, mu
    kappa = model.noise_precision
    r = red.y - eta
    return 0.5 * (np.log(kappa) - LOG2PI) - 0.5 * kappa * r * r, r


def log_likelihood_z(model, z):
    red = _reduced(model)
    eta = red.offset + red.Az @ z
    ll, _ = _loglik_terms(model, red, eta)
    return float(ll.sum() - red.lgam)


def log_prior_z(model, z, theta) -> float:
    red = _reduced(model)
    theta = np.asarray(theta, dtype=float)
    kappa = model.fixed_precision
    zf = z[red.fixed_cols]
    out = -0.5 * kappa * float(zf @ zf)
    if kappa > 0:
        out += -0.5 * zf.size * (LOG2PI - np.log(kappa))
    for j, cols in enumerate(red.hyper_cols):
        zj = z[cols]
        out += (-0.5 * red.rank[j] * LOG2PI + 0.5 * red.rank[j] * theta[j] + 0.5 * red.logpdet[j]
                - 0.5 * np.exp(theta[j]) * float(zj @ red.P[j] @ zj))
    return float(out)


def gradient_z(model, z, theta) -> np.ndarray:
    """Gradient of the constrained log-posterior in reduced coordinates."""
    red = _reduced(model)
    eta = red.offset + red.Az @ z
    if model.likelihood == "poisson":
        resid = red.y - np.exp(eta)
    else:
        resid = model.noise_precision * (red.y - eta)
    return red.Az.T @ resid - prior_precision(model, theta) @ z


# ---------------------------------------------------------------------------
# Gaussian approximation at fixed hyperparameters


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """Gaussian approximation of the latent field at one hyperparameter value."""

    theta: np.ndarray
    z: np.ndarray
    chol: np.ndarray
    basis: np.ndarray = field(repr=False)
    loglik: float
    logprior: float
    log_evidence: float
    log_marginal: float
    grad_norm: float
    iterations: int

    @property
    def mode(self) -> np.ndarray:
        return self.basis @ self.z

    @property
    def precision(self) -> np.ndarray:
        return self.chol @ self.chol.T

    @property
    def cov_z(self) -> np.ndarray:
        return sla.cho_solve((self.chol, True), np.eye(self.z.size))

    @property
    def mean(self) -> np.ndarray:
        return self.mode

    @property
    def sd(self) -> np.ndarray:
        BS = self.basis @ self.cov_z
        return np.sqrt(np.einsum("ij,ij->i", BS, self.basis))

    def sample_z(self, n, rng) -> np.ndarray:
        eps = rng.standard_normal((self.z.size, n))
        return (self.z[:, None] + sla.solve_triangular(self.chol.T, eps, lower=False)).T


def _initial_z(model, red):
    z = np.zeros(red.m)
    if model.likelihood == "poisson" and red.y.size:
        tot = red.y.sum()
        rate = max(tot, 0.5) / np.exp(red.offset).sum()
        z[0] = np.log(rate)
    return z


def gaussian_approx(model: AssembledModel, theta, z0=None, max_iter=50, tol=1e-6) -> GaussianApprox:
    """Newton iterations to the constrained posterior mode at fixed ``theta``.

    Parameters
    ----------
    model : AssembledModel
    theta : array_like
        Log-precisions, one per random-effect block.
    z0 : array_like, optional
        Warm start in reduced coordinates.
    max_iter : int
        Newton iteration cap.
    tol : float
        Convergence threshold on the norm of the projected gradient.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iter``; carries the last gradient norm.
    NumericalError
        The negative Hessian is not positive definite.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_hyper,) or not np.all(np.isfinite(theta)):
        raise ValueError(f"theta must hold {model.n_hyper} finite log-precisions")
    red = _reduced(model)
    Q = prior_precision(model, theta)
    Az = red.Az
    z = _initial_z(model, red) if z0 is None else np.array(z0, dtype=float)

    def objective(z):
        eta = red.offset + Az @ z
        ll, _ = _loglik_terms(model, red, eta)
        return float(ll.sum() - 0.5 * z @ Q @ z)

    def weights_grad(z):
        eta = red.offset + Az @ z
        if model.likelihood == "poisson":
            w = np.exp(eta)
            return w, Az.T @ (red.y - w) - Q @ z
        w = np.full(eta.size, model.noise_precision)
        return w, Az.T @ (w * (red.y - eta)) - Q @ z

    f = objective(z)
    it = 0
    w, grad = weights_grad(z)
    gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(gnorm):
        raise NumericalError(f"non-finite gradient at theta={theta}")
    while gnorm >= tol and it < max_iter:
        it += 1
        try:
            L = np.linalg.cholesky((Az.T * w) @ Az + Q)
        except np.linalg.LinAlgError:
            raise NumericalError(f"negative Hessian not positive definite at theta={theta}") from None
        step = sla.cho_solve((L, True), grad)
        t = 1.0
        while t >= 1e-10:
            z_new = z + t * step
            f_new = objective(z_new)
            if np.isfinite(f_new) and f_new >= f - 1e-12 * abs(f):
                break
            t *= 0.5
        else:
            break  # no ascent at working precision
        z, f = z_new, f_new
        w, grad = weights_grad(z)
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(gnorm):
            raise NumericalError(f"non-finite gradient at theta={theta}")
    if gnorm >= tol:
        raise ConvergenceError(
            f"Newton stopped after {it} iterations with |grad|={gnorm:.3g}", gnorm, it)

    eta = red.offset + Az @ z
    w = np.exp(eta) if model.likelihood == "poisson" else np.full(eta.size, model.noise_precision)
    H = (Az.T * w) @ Az + Q
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NumericalError(f"negative Hessian not positive definite at theta={theta}") from None
    ll = log_likelihood_z(model, z)
    lp = log_prior_z(model, z, theta)
    log_ev = ll + lp + 0.5 * red.m * LOG2PI - float(np.log(np.diag(L)).sum())
    return GaussianApprox(theta, z, L, model.basis, ll, lp, log_ev, log_ev + log_hyperprior(theta),
                          gnorm, it)


def log_marginal_hyper(model: AssembledModel, theta, z0=None) -> float:
    """Laplace approximation of ``log p(theta | O)`` up to a constant."""
    return gaussian_approx(model, theta, z0).log_marginal


# ---------------------------------------------------------------------------
# grid integration over hyperparameters


@dataclass(frozen=True, eq=False)
class GridPoint:
    theta: np.ndarray
    log_post: float
    approx: GaussianApprox
    z_std: np.ndarray


@dataclass(eq=False)
class FitResult:
    """Mixture of Gaussian approximations over a hyperparameter grid."""

    model: AssembledModel
    theta_mode: np.ndarray
    theta_cov: np.ndarray
    points: list
    weights: np.ndarray
    grid_step: float
    grid_range: float
    seed: int = DEFAULT_SEED
    n_draws: int = 1000
    warnings: list = field(default_factory=list)
    _draws: dict = field(default_factory=dict, repr=False)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.points])

    @property
    def mean(self) -> np.ndarray:
        means = np.array([p.approx.mean for p in self.points])
        return self.weights @ means

    @property
    def sd(self) -> np.ndarray:
        means = np.array([p.approx.mean for p in self.points])
        sds = np.array([p.approx.sd for p in self.points])
        second = self.weights @ (sds ** 2 + means ** 2)
        return np.sqrt(np.maximum(second - self.mean ** 2, 0.0))

    def component_moments(self):
        means = np.array([p.approx.mean for p in self.points])
        sds = np.array([p.approx.sd for p in self.points])
        return means, sds

    def quantiles(self, probs=(0.025, 0.5, 0.975), index=None) -> np.ndarray:
        """Quantiles of the Gaussian-mixture marginals, shape ``(len(probs), n)``."""
        from scipy.special import ndtr

        means, sds = self.component_moments()
        if index is not None:
            means, sds = means[:, index], sds[:, index]
        means = np.atleast_2d(means.T).T if means.ndim == 1 else means
        sds = np.atleast_2d(sds.T).T if sds.ndim == 1 else sds
        sds = np.maximum(sds, 1e-300)
        w = self.weights[:, None]
        lo = (means - 10 * sds).min(axis=0)
        hi = (means + 10 * sds).max(axis=0)
        out = []
        for p in np.atleast_1d(probs):
            a, b = lo.copy(), hi.copy()
            for _ in range(100):
                mid = 0.5 * (a + b)
                cdf = (w * ndtr((mid - means) / sds)).sum(axis=0)
                below = cdf < p
                a = np.where(below, mid, a)
                b = np.where(below, b, mid)
            out.append(0.5 * (a + b))
        return np.array(out)

    def hyper_summary(self) -> list:
        """Weighted summaries of each log-precision over the grid."""
        th = self.thetas
        rows = []
        for j, name in enumerate(self.model.hyper_names):
            v = th[:, j]
            mean = float(self.weights @ v)
            sd = float(np.sqrt(max(self.weights @ (v - mean) ** 2, 0.0)))
            q = _weighted_quantiles(v, self.weights, (0.025, 0.5, 0.975))
            rows.append({"name": name, "log_precision_mean": mean, "log_precision_sd": sd,
                         "log_precision_q025": q[0], "log_precision_median": q[1],
                         "log_precision_q975": q[2], "precision_mean": float(self.weights @ np.exp(v)),
                         "precision_median": float(np.exp(q[1]))})
        return rows

    def draws(self, n=None, seed=None):
        """Joint posterior draws ``(x, component index)`` from the mixture.

        Results are cached per ``(n, seed)``.
        """
        n = self.n_draws if n is None else int(n)
        seed = self.seed if seed is None else seed
        key = (n, seed)
        if key not in self._draws:
            rng = np.random.default_rng(seed)
            comp = rng.choice(len(self.points), size=n, p=self.weights)
            X = np.empty((n, self.model.n_latent))
            for k in np.unique(comp):
                idx = np.flatnonzero(comp == k)
                Z = self.points[k].approx.sample_z(idx.size, rng)
                X[idx] = Z @ self.model.basis.T
            self._draws[key] = (X, comp)
        return self._draws[key]

    def metadata(self) -> dict:
        return {
            "theta_mode": self.theta_mode.tolist(),
            "theta_cov": self.theta_cov.tolist(),
            "hyper_names": list(self.model.hyper_names),
            "grid": [{"theta": p.theta.tolist(), "z": p.z_std.tolist(), "log_post": p.log_post,
                      "weight": float(w)} for p, w in zip(self.points, self.weights)],
            "grid_step": self.grid_step,
            "grid_range": self.grid_range,
            "seed": self.seed,
            "n_draws": self.n_draws,
            "warnings": list(self.warnings),
        }


def _weighted_quantiles(values, weights, probs):
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.cumsum(w) - 0.5 * w
    cw = cw / w.sum()
    return [float(np.interp(p, cw, v)) for p in probs]


def _hyper_hessian(f, x, h=0.02):
    d = x.size
    H = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def _explore_grid(evaluate, d, step, radius, max_drop, max_radius, n_jobs=1):
    """Breadth-first walk over an integer lattice in standardized coordinates."""
    r = int(np.floor(radius / step + 1e-9))
    rmax = int(np.floor(max_radius / step + 1e-9))
    core = [p for p in itertools.product(range(-r, r + 1), repeat=d)
            if np.linalg.norm(p) * step <= radius + 1e-9]

    def run(keys):
        pts = [np.array(k, dtype=float) * step for k in keys]
        if n_jobs and n_jobs > 1 and len(pts) > 1:
            with ThreadPoolExecutor(n_jobs) as ex:
                return list(ex.map(evaluate, pts))
        return [evaluate(p) for p in pts]

    done = {}
    for key, res in zip(core, run(core)):
        done[key] = res
    top = max((res[2].log_marginal for res in done.values() if isinstance(res[2], GaussianApprox)),
              default=-np.inf)
    frontier = list(done)
    while frontier:
        fresh = set()
        for key in frontier:
            res = done[key]
            if not isinstance(res[2], GaussianApprox) or res[2].log_marginal < top - max_drop:
                continue
            if np.linalg.norm(key) * step < radius - 1e-9:
                continue  # interior points have their neighbours in the core
            for i in range(d):
                for sgn in (-1, 1):
                    nb = list(key)
                    nb[i] += sgn
                    nb = tuple(nb)
                    if nb not in done and max(abs(v) for v in nb) <= rmax:
                        fresh.add(nb)
        fresh = sorted(fresh)
        for key, res in zip(fresh, run(fresh)):
            done[key] = res
            if isinstance(res[2], GaussianApprox):
                top = max(top, res[2].log_marginal)
        frontier = fresh
    return [done[k] for k in sorted(done)]


def _boundary_axes(model, mode, z_mode, tol=1e-3):
    """Names of log-precisions whose Laplace log-marginal has not decayed at a search bound."""
    try:
        top = gaussian_approx(model, mode, z_mode).log_marginal
    except (ConvergenceError, NumericalError):
        return []
    out = []
    for j, name in enumerate(model.hyper_names):
        for bound in (-THETA_BOUND, THETA_BOUND):
            if abs(mode[j] - bound) < 1e-3:
                out.append(name)
                break
            probe = mode.copy()
            probe[j] = bound
            try:
                val = gaussian_approx(model, probe, z_mode).log_marginal
            except (ConvergenceError, NumericalError):
                continue
            if val > top - tol:
                out.append(name)
                break
    return out


def find_theta_mode(model: AssembledModel, theta0=None):
    """Maximize the Laplace log-marginal over log-precisions (L-BFGS-B)."""
    d = model.n_hyper
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)
    state = {"z": None}

    def negf(theta):
        try:
            ga = gaussian_approx(model, theta, state["z"])
        except (ConvergenceError, NumericalError):
            try:
                ga = gaussian_approx(model, theta)
            except (ConvergenceError, NumericalError):
                return 1e300
        state["z"] = ga.z
        return -ga.log_marginal

    res = minimize(negf, theta0, method="L-BFGS-B", bounds=[(-THETA_BOUND, THETA_BOUND)] * d,
                   options={"maxiter": 200, "eps": 1e-4})
    return res.x, state["z"], res


def fit_model(model: AssembledModel, grid_step=0.75, grid_range=3.0, theta0=None,
              seed=DEFAULT_SEED, n_draws=1000, min_weight=1e-9, max_drop=6.0, max_radius=8.0,
              n_jobs=1) -> FitResult:
    """Fit by Gaussian approximations over a hyperparameter grid.

    The log-precision mode is found by quasi-Newton on the Laplace
    log-marginal. The grid lives in standardized coordinates along the
    principal axes of the inverse Hessian at the mode, with spacing
    ``grid_step`` (sd units). Every lattice point within ``grid_range`` sd is
    evaluated; beyond that the lattice keeps growing outward from accepted
    points while the log-marginal stays within ``max_drop`` of the mode,
    up to ``max_radius`` sd, so skewed posteriors keep their long side.
    Points carrying less than ``min_weight`` of the largest weight are dropped.
    """
    notes = []
    d = model.n_hyper
    if d == 0:
        ga = gaussian_approx(model, np.zeros(0))
        pt = GridPoint(np.zeros(0), ga.log_marginal, ga, np.zeros(0))
        return FitResult(model, np.zeros(0), np.zeros((0, 0)), [pt], np.ones(1), grid_step,
                         grid_range, seed, n_draws, notes)

    mode, z_mode, _ = find_theta_mode(model, theta0)
    edge = _boundary_axes(model, mode, z_mode)
    if edge:
        msg = (f"log-precision mode at the search boundary ({mode.round(2).tolist()}); "
               f"posterior does not decay toward |log tau| = {THETA_BOUND:g} for {edge}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    def negf(theta):
        return -gaussian_approx(model, theta, z_mode).log_marginal

    H = _hyper_hessian(negf, mode)
    vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
    if np.any(vals <= 0):
        msg = "hyperparameter Hessian not positive definite; flat directions clipped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        vals = np.maximum(vals, 1e-2)
    cov = (vecs / vals) @ vecs.T
    scale = vecs / np.sqrt(vals)

    def evaluate(zstd):
        theta = mode + scale @ zstd
        if np.any(np.abs(theta) > THETA_BOUND):
            return zstd, theta, None
        try:
            ga = gaussian_approx(model, theta, z_mode)
        except (ConvergenceError, NumericalError) as exc:
            return zstd, theta, exc
        return zstd, theta, ga

    results = _explore_grid(evaluate, d, grid_step, grid_range, max_drop, max_radius, n_jobs)
    points = []
    failed = 0
    for zstd, theta, ga in results:
        if ga is None:
            continue
        if isinstance(ga, Exception):
            failed += 1
            continue
        points.append(GridPoint(theta, ga.log_marginal, ga, zstd))
    if not points:
        raise NumericalError("every hyperparameter grid point failed")
    if failed:
        msg = f"{failed} of {len(results)} grid points failed and were dropped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    lp = np.array([p.log_post for p in points])
    rel = np.exp(lp - lp.max())
    keep = rel >= min_weight
    points = [p for p, k in zip(points, keep) if k]
    w = rel[keep] / rel[keep].sum()
    return FitResult(model, mode, cov, points, w, grid_step, grid_range, seed, n_draws, notes)


# ---------------------------------------------------------------------------
# deviance-based criteria


def pointwise_loglik(model: AssembledModel, X) -> np.ndarray:
    """Per-cell log-likelihood for each latent draw (rows of ``X``), observed cells only."""
    X = np.atleast_2d(X)
    obs = ~model.missing
    eta = model.log_offset[obs][None, :] + X @ model.design[obs].T
    y = model.observed[obs]
    if model.likelihood == "poisson":
        return y * eta - np.exp(eta) - gammaln(y + 1)
    kappa = model.noise_precision
    return 0.5 * (np.log(kappa) - LOG2PI) - 0.5 * kappa * (y - eta) ** 2


def deviance(model, X) -> np.ndarray:
    return -2.0 * pointwise_loglik(model, X).sum(axis=1)


@dataclass(frozen=True)
class Criterion:
    value: float
    penalty: float
    fit_term: float


def dic_from_draws(model, X) -> Criterion:
    """DIC = mean deviance + p_D with p_D = mean deviance - deviance at the mean."""
    X = np.atleast_2d(X)
    Dbar = float(deviance(model, X).mean())
    Dhat = float(deviance(model, X.mean(axis=0))[0])
    pD = Dbar - Dhat
    return Criterion(Dbar + pD, pD, Dbar)


def waic_from_draws(model, X, min_draws=100) -> Criterion:
    """WAIC = -2 (lppd - p_waic) with p_waic the summed pointwise variance."""
    X = np.atleast_2d(X)
    if X.shape[0] < min_draws:
        raise ValueError(f"WAIC needs at least {min_draws} draws, got {X.shape[0]}")
    ll = pointwise_loglik(model, X)
    S = ll.shape[0]
    lppd = float((logsumexp(ll, axis=0) - np.log(S)).sum())
    p = float(ll.var(axis=0, ddof=1).sum())
    return Criterion(-2.0 * (lppd - p), p, -2.0 * lppd)


def compute_dic(fit: FitResult, n_draws=None, seed=None) -> Criterion:
    if fit is None or not fit.points:
        raise ValueError("fit has no deviance diagnostics")
    X, _ = fit.draws(n_draws, seed)
    return dic_from_draws(fit.model, X)


def compute_waic(fit: FitResult, n_draws=None, seed=None) -> Criterion:
    X, _ = fit.draws(n_draws, seed)
    return waic_from_draws(fit.model, X)

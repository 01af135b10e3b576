"""Brute-force reference posteriors for small models.

Both routes evaluate the joint log density directly and share nothing with
the Laplace engine beyond the assembled model itself.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .inference import THETA_BOUND
from .model import AssembledModel

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
MAX_LATENT = 200
MAX_GRID_DIM = 3


class OracleError(ValueError):
    pass


@dataclass(eq=False)
class OracleResult:
    """Posterior summaries from an oracle.

    ``mean``/``sd``/``mcse``/``ess`` cover the latent field ``x`` (one entry
    per coordinate); the ``theta_*`` fields cover log-precisions.
    """

    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    ess: np.ndarray
    theta_mean: np.ndarray
    theta_sd: np.ndarray
    theta_mcse: np.ndarray
    theta_ess: np.ndarray
    draws: np.ndarray | None = None
    theta_draws: np.ndarray | None = None
    rhat: np.ndarray | None = None
    acceptance: float | None = None
    extra: dict = field(default_factory=dict)

    def quantiles(self, probs=(0.025, 0.5, 0.975)):
        if self.draws is None:
            raise OracleError("quantiles need posterior draws")
        return np.quantile(self.draws, probs, axis=0)


# ---------------------------------------------------------------------------
# log density of (z, theta)


def _pieces(model: AssembledModel):
    B = model.basis
    obs = ~model.missing
    Az = (model.design @ B)[obs]
    y = model.observed[obs]
    off = model.log_offset[obs]
    owner = np.full(B.shape[1], -1)
    for k, b in enumerate(model.blocks):
        owner[np.abs(B[b.slice]).sum(axis=0) > 0] = k
    fixed = []
    hyper = []
    for k, b in enumerate(model.blocks):
        cols = np.flatnonzero(owner == k)
        if b.structure is None:
            fixed.extend(cols)
        else:
            Bj = B[b.slice][:, cols]
            P = Bj.T @ b.structure.entries @ Bj
            vals = np.linalg.eigvalsh(P)
            pos = vals > 1e-9 * vals.max()
            hyper.append((b.hyper, cols, P, int(pos.sum()), float(np.log(vals[pos]).sum())))
    hyper.sort(key=lambda h: h[0])
    return Az, y, off, np.array(fixed, dtype=int), hyper


def log_density(model: AssembledModel, theta_fixed=None):
    """Vectorized joint log density over rows ``[z, theta]`` (or ``[z]`` when
    ``theta_fixed`` is given). Includes every normalizing constant.

    Log-precisions are supported on the engine's search box ``|theta| <= 15``.
    """
    Az, y, off, fixed, hyper = _pieces(model)
    m = Az.shape[1]
    h = model.n_hyper
    lgam = gammaln(y + 1).sum() if model.likelihood == "poisson" else 0.0
    kappa0 = model.fixed_precision
    if theta_fixed is not None:
        theta_fixed = np.asarray(theta_fixed, dtype=float)

    def f(points):
        P = np.atleast_2d(points)
        Z = P[:, :m]
        TH = np.broadcast_to(theta_fixed, (P.shape[0], h)) if theta_fixed is not None else P[:, m:m + h]
        eta = off[None, :] + Z @ Az.T
        if model.likelihood == "poisson":
            ll = (y * eta - np.exp(eta)).sum(axis=1) - lgam
        else:
            k = model.noise_precision
            ll = (0.5 * (np.log(k) - LOG2PI) - 0.5 * k * (y - eta) ** 2).sum(axis=1)
        zf = Z[:, fixed]
        lp = -0.5 * kappa0 * (zf * zf).sum(axis=1)
        if kappa0 > 0:
            lp = lp + 0.5 * fixed.size * (np.log(kappa0) - LOG2PI)
        for j, cols, Pj, rank, logpdet in hyper:
            zj = Z[:, cols]
            q = np.einsum("ci,ij,cj->c", zj, Pj, zj)
            t = np.clip(TH[:, j], -THETA_BOUND - 1, THETA_BOUND + 1)  # out-of-box rows are masked below
            lp = lp + 0.5 * rank * (t - LOG2PI) + 0.5 * logpdet - 0.5 * np.exp(t) * q
        if theta_fixed is None and h:
            lp = lp + (np.log(0.5) - 0.5 * TH).sum(axis=1)
        out = ll + lp
        if h:
            out = np.where(np.abs(TH).max(axis=1) <= THETA_BOUND, out, -np.inf)
        return np.where(np.isfinite(out), out, -np.inf)

    return f, m + (0 if theta_fixed is not None else h)


def _mode_and_cov(f, dim, x0=None):
    x0 = np.zeros(dim) if x0 is None else x0
    # steps into the masked region give inf - inf in the numerical gradient;
    # the line search backs off from them
    with np.errstate(invalid="ignore"):
        res = minimize(lambda x: -f(x[None, :])[0], x0, method="BFGS",
                       options={"gtol": 1e-8, "maxiter": 5000})
    x = res.x
    # finite-difference Hessian for a reliable curvature estimate
    hstep = 1e-4 * np.maximum(1.0, np.abs(x))
    H = np.zeros((dim, dim))
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = hstep[i]
        for j in range(i + 1):
            ej = np.zeros(dim)
            ej[j] = hstep[j]
            pts = np.array([x + ei + ej, x + ei - ej, x - ei + ej, x - ei - ej])
            v = -f(pts)
            H[i, j] = H[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * hstep[i] * hstep[j])
    vals, vecs = np.linalg.eigh(H)
    vals = np.maximum(vals, 1e-8)
    return x, (vecs / vals) @ vecs.T


def _initial_guess(model, dim):
    x0 = np.zeros(dim)
    obs = ~model.missing
    if model.likelihood == "poisson" and obs.any():
        x0[0] = np.log(max(np.nansum(model.observed), 0.5) / np.exp(model.log_offset[obs]).sum())
    return x0


# ---------------------------------------------------------------------------
# dense quadrature


def grid_posterior(model: AssembledModel, theta=None, n_points=401, half_width=8.0) -> OracleResult:
    """Tensor-grid trapezoid posterior on a ``+-half_width`` sd box.

    With ``theta`` the hyperparameters are held fixed and only the latent
    field is integrated; otherwise log-precisions join the grid. The total
    free dimension must not exceed three. The grid is swept one slice of
    the first axis at a time, accumulating weighted moments.
    """
    f, dim = log_density(model, theta)
    if dim > MAX_GRID_DIM:
        raise OracleError(f"grid oracle limited to {MAX_GRID_DIM} free dimensions, model has {dim}")
    if n_points < 3:
        raise OracleError("need at least three points per axis")
    center, cov = _mode_and_cov(f, dim, _initial_guess(model, dim))
    sd = np.sqrt(np.diag(cov))
    axes = [np.linspace(c - half_width * s, c + half_width * s, n_points) for c, s in zip(center, sd)]
    steps = np.array([a[1] - a[0] for a in axes])
    tw = np.ones(n_points)
    tw[0] = tw[-1] = 0.5
    rest_axes = axes[1:]
    if rest_axes:
        rest = np.stack(np.meshgrid(*rest_axes, indexing="ij"), axis=-1).reshape(-1, dim - 1)
        rest_w = np.ones(1)
        for _ in rest_axes:
            rest_w = np.multiply.outer(rest_w, tw).reshape(-1)
    else:
        rest = np.zeros((1, 0))
        rest_w = np.ones(1)
    shift = float(f(center[None, :])[0])
    keep_all = n_points ** dim <= 2_000_000
    stored = []
    S0 = 0.0
    S1 = np.zeros(dim)
    S2 = np.zeros((dim, dim))
    best = (-np.inf, None)
    for i, v in enumerate(axes[0]):
        pts = np.hstack([np.full((rest.shape[0], 1), v), rest])
        lp = f(pts)
        if keep_all:
            stored.append(lp)
        k = int(np.argmax(lp))
        if lp[k] > best[0]:
            best = (float(lp[k]), pts[k])
        w = tw[i] * rest_w * np.exp(lp - shift)
        S0 += w.sum()
        S1 += w @ pts
        S2 += pts.T @ (pts * w[:, None])
    mean_all = S1 / S0
    cov_all = S2 / S0 - np.outer(mean_all, mean_all)
    log_norm = float(shift + np.log(S0) + np.log(steps).sum())

    m = model.basis.shape[1]
    B = model.basis
    mean = B @ mean_all[:m]
    sdx = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, cov_all[:m, :m], B), 0.0))
    h = dim - m
    tm = mean_all[m:]
    tsd = np.sqrt(np.maximum(np.diag(cov_all)[m:], 0.0))
    mode = best[1]
    if keep_all:
        mode = _refined_mode(axes, np.concatenate(stored).reshape((n_points,) * dim))
    extra = {"log_normalizer": log_norm, "center": center, "box_sd": sd, "mode": mode,
             "n_points": n_points, "cov": cov_all}
    if dim == 1:
        w = tw * np.exp(np.concatenate(stored) - shift)
        cdf = np.cumsum(w) / w.sum()
        extra["quantiles"] = {p: float(np.interp(p, cdf, axes[0])) for p in (0.025, 0.5, 0.975)}
    inf = np.full(mean.size, np.inf)
    return OracleResult(mean, sdx, np.zeros(mean.size), inf, tm, tsd, np.zeros(h), np.full(h, np.inf),
                        extra=extra)


def _refined_mode(axes, logp):
    idx = np.unravel_index(np.argmax(logp), logp.shape)
    mode = []
    for d, a in enumerate(axes):
        i = idx[d]
        if 0 < i < len(a) - 1:
            sl = list(idx)
            sl[d] = i - 1
            lm = logp[tuple(sl)]
            sl[d] = i + 1
            lp = logp[tuple(sl)]
            l0 = logp[idx]
            denom = lm - 2 * l0 + lp
            off = 0.5 * (lm - lp) / denom if denom != 0 else 0.0
            mode.append(a[i] + off * (a[1] - a[0]))
        else:
            mode.append(a[i])
    return np.array(mode)


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis


def effective_sample_size(chains) -> float:
    """ESS over chains, autocorrelations summed until the first negative pair."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    c, n = x.shape
    if n < 4:
        return float(c * n)
    x = x - x.mean(axis=1, keepdims=True)
    var = x.var(axis=1)
    if np.all(var == 0):
        return float(c * n)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x, nfft, axis=1)
    acov = np.fft.irfft(fx * np.conj(fx), nfft, axis=1)[:, :n] / n
    rho = (acov / np.where(var > 0, var, 1.0)[:, None]).mean(axis=0)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2 * pair
    tau = max(tau, 1.0 / np.log10(max(c * n, 10)))
    return float(c * n / tau)


def rhat(chains) -> float:
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    c, n = x.shape
    if c < 2:
        return float("nan")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    Bv = n * means.var(ddof=1)
    if W == 0:
        return 1.0
    return float(np.sqrt(((n - 1) / n * W + Bv / n) / W))


def adaptive_metropolis(logp, x0, iterations, seed, chains=4, cov0=None, thin=1):
    """Adaptive random-walk Metropolis run on ``chains`` chains in lockstep.

    The proposal covariance and global scale adapt during the first half
    (burn-in) and are frozen for the second half, which is returned.
    Chain ``c`` draws from its own generator seeded ``seed + c``.

    Returns ``(samples, acceptance)`` with samples shaped ``(chains, kept, dim)``.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    rngs = [np.random.default_rng(seed + c) for c in range(chains)]
    cov = np.eye(d) * 0.01 if cov0 is None else np.array(cov0, dtype=float)
    start = np.array([x0 + np.linalg.cholesky(cov + 1e-12 * np.eye(d)) @ r.standard_normal(d) * 0.5
                      for r in rngs])
    x = start
    lp = logp(x)
    bad = ~np.isfinite(lp)
    if bad.any():
        x[bad] = x0
        lp = logp(x)
    burn = iterations // 2
    log_scale = np.log(2.38 ** 2 / d)
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
    kept = []
    acc_count = 0
    total = 0
    hist = []
    for it in range(iterations):
        eps = np.stack([r.standard_normal(d) for r in rngs])
        prop = x + np.exp(0.5 * log_scale) * eps @ L.T
        lq = logp(prop)
        u = np.array([r.random() for r in rngs])
        acc = np.log(u) < lq - lp
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lq, lp)
        if it < burn:
            rate = acc.mean()
            log_scale += (rate - 0.234) / np.sqrt(it + 1.0) * 0.5
            hist.append(x.copy())
            if (it + 1) % 200 == 0 and it + 1 >= 400:
                H = np.concatenate(hist[len(hist) // 2:])
                emp = np.cov(H.T).reshape(d, d) + 1e-10 * np.eye(d)
                try:
                    L = np.linalg.cholesky(emp)
                except np.linalg.LinAlgError:
                    pass
        else:
            if (it - burn) % thin == 0:
                kept.append(x.copy())
            acc_count += acc.sum()
            total += chains
    samples = np.stack(kept, axis=1)
    return samples, acc_count / max(total, 1)


def mcmc_sample(model, iterations=20000, seed=1, chains=4, theta=None, dim=None, thin=1):
    """Adaptive Metropolis oracle over the reduced latent field and log-precisions.

    ``model`` is an AssembledModel, or (validation mode) a vectorized log
    density callable with ``dim`` given. Sampling in the constraint-kernel
    basis keeps every draw feasible.
    """
    if callable(model) and not isinstance(model, AssembledModel):
        if dim is None:
            raise OracleError("dim required for a raw log density")
        f = model
        x0 = np.zeros(dim)
        cov0 = np.eye(dim)
        m = dim
        B = np.eye(dim)
        h = 0
    else:
        if model.n_latent > MAX_LATENT:
            raise OracleError(f"oracle limited to {MAX_LATENT} latent coordinates, model has {model.n_latent}")
        f, dim = log_density(model, theta)
        x0, cov0 = _mode_and_cov(f, dim, _initial_guess(model, dim))
        B = model.basis
        m = B.shape[1]
        h = dim - m
    samples, acc = adaptive_metropolis(f, x0, iterations, seed, chains, cov0, thin)
    c, n, _ = samples.shape
    Z = samples[:, :, :m]
    X = Z @ B.T
    T = samples[:, :, m:]
    ess_x = np.array([effective_sample_size(X[:, :, i]) for i in range(X.shape[2])])
    ess_t = np.array([effective_sample_size(T[:, :, i]) for i in range(h)])
    rh = np.array([rhat(X[:, :, i]) for i in range(X.shape[2])] + [rhat(T[:, :, i]) for i in range(h)])
    flat_x = X.reshape(-1, X.shape[2])
    flat_t = T.reshape(c * n, h)
    mean, sd = flat_x.mean(axis=0), flat_x.std(axis=0, ddof=1)
    tm = flat_t.mean(axis=0) if h else np.zeros(0)
    tsd = flat_t.std(axis=0, ddof=1) if h else np.zeros(0)
    const = sd == 0
    ess_x = np.where(const, float(c * n), ess_x)
    monitored = np.concatenate([ess_x[~const], ess_t])
    if monitored.size and monitored.min() < 100:
        warnings.warn(f"oracle ESS below 100 (min {monitored.min():.0f})", RuntimeWarning, stacklevel=2)
    if rh.size and np.nanmax(rh) > 1.05:
        warnings.warn(f"oracle chains disagree (max R-hat {np.nanmax(rh):.2f})", RuntimeWarning, stacklevel=2)
    return OracleResult(mean, sd, sd / np.sqrt(ess_x), ess_x, tm, tsd,
                        tsd / np.sqrt(np.maximum(ess_t, 1.0)) if h else np.zeros(0), ess_t,
                        draws=flat_x, theta_draws=flat_t, rhat=rh, acceptance=float(acc))

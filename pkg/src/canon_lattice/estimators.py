"""Statistical reductions: errors, correlation curves, decay fits, sigma(m).

Sample batches and deterministic engine output are turned into the objects
the verification experiments compare: means with honest standard errors,
covariance against distance, exponential-plus-plateau fits, and the external
field matching a target mean spin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "CorrelationCurve",
    "DecayFit",
    "FreeEnergyReport",
    "mean_with_error",
    "integrated_autocorrelation_time",
    "covariance_curve",
    "curve_from_matrix",
    "fit_decay",
    "loglinear_rate",
    "sigma_of_m_general",
]

# round-off scale reported as the standard error of exact engine output
DETERMINISTIC_SE = 1e-14


@dataclass(frozen=True)
class CorrelationCurve:
    """Covariance estimates against lattice distance."""

    distances: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "se", np.asarray(self.se, dtype=float))
        object.__setattr__(self, "counts", np.asarray(self.counts))
        if np.any(np.diff(d) <= 0):
            raise ValueError("distances must be strictly increasing")
        if np.any(self.se <= 0):
            raise ValueError("standard errors must be positive")

    def rows(self):
        """CSV rows in fixed column order (d, cov, se, n)."""
        return [
            (float(d), float(c), float(s), int(n))
            for d, c, s, n in zip(self.distances, self.cov, self.se, self.counts)
        ]


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of a covariance curve to A*exp(-c*d) + p.

    ok = False marks a no-fit result (no resolvable signal window); the
    numeric fields are then NaN.  The rate is constrained nonnegative and
    the residual norm is always reported.
    """

    amplitude: float
    rate: float
    plateau: float
    resid: float
    window_lo: float
    window_hi: float
    ok: bool = True

    def __post_init__(self):
        if self.ok and self.rate < 0:
            raise ValueError("decay rate must be nonnegative")

    def row(self):
        """CSV row in fixed column order (A, c, p, resid, window_lo, window_hi)."""
        return (self.amplitude, self.rate, self.plateau, self.resid, self.window_lo, self.window_hi)

    @classmethod
    def no_fit(cls):
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, ok=False)


@dataclass(frozen=True)
class FreeEnergyReport:
    """Free energies of both ensembles with first and second field derivatives."""

    a_gce: float
    a_ce: float
    d1_gce: float
    d1_ce: float
    d2_gce: float
    d2_ce: float

    def __post_init__(self):
        if not self.d2_gce > 0:
            raise ValueError(f"d2 A_gce = {self.d2_gce:.3e} is not positive")

    @property
    def gap(self):
        return abs(self.a_gce - self.a_ce)

    @property
    def d1_gap(self):
        return abs(self.d1_gce - self.d1_ce)

    @property
    def d2_gap(self):
        return abs(self.d2_gce - self.d2_ce)

    def row(self):
        return (
            self.a_gce, self.a_ce, self.d1_gce, self.d1_ce, self.d2_gce, self.d2_ce,
            self.gap, self.d1_gap, self.d2_gap,
        )


def integrated_autocorrelation_time(series):
    """Initial-positive-sequence estimate of the integrated autocorrelation.

    Pairs of empirical autocorrelations are summed while they stay positive;
    the estimate is 2*sum(pairs) - 1, which is 1 for white noise and
    (1+rho)/(1-rho) for an AR(1) chain in the long-sample limit.
    """
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    if n < 4:
        return 1.0
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    tau = 0.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        tau += pair
        k += 1
    return float(max(2.0 * tau - 1.0, 1.0))


def mean_with_error(series):
    """(mean, batch-means standard error, integrated autocorrelation time)."""
    x = np.asarray(series, dtype=float)
    if len(x) < 100:
        raise ValueError(f"series of length {len(x)} is too short (need >= 100)")
    nb = max(50, int(round(np.sqrt(len(x)))))
    blen = len(x) // nb
    trimmed = x[: nb * blen].reshape(nb, blen)
    bm = trimmed.mean(axis=1)
    se = bm.std(ddof=1) / np.sqrt(nb)
    return float(x.mean()), float(se), integrated_autocorrelation_time(x)


def _batch_se(series):
    nb = max(50, int(round(np.sqrt(len(series)))))
    blen = max(len(series) // nb, 1)
    nb = len(series) // blen
    bm = series[: nb * blen].reshape(nb, blen).mean(axis=1)
    return float(bm.std(ddof=1) / np.sqrt(nb))


def covariance_curve(batch, anchor, max_distance=None, pool=True, interior_margin=None):
    """Pooled covariance of (x_i, x_{i+d}) against d from a sample batch.

    Pooling averages over translations of the anchored pair, restricted to
    pairs at least `interior_margin` sites from either edge (default: the
    interaction range), where translation invariance actually holds.
    Standard errors come from batch means of the pooled per-sweep products.
    """
    samples = batch.samples
    nret, n = samples.shape
    if nret < 500:
        raise ValueError(f"{nret} retained sweeps is too few (need >= 500)")
    if max_distance is None:
        max_distance = n // 2
    margin = interior_margin
    if margin is None:
        margin = getattr(batch, "interaction_range", 0)
    means = samples.mean(axis=0)
    dist, cov, se, cnt = [], [], [], []
    for d in range(0, max_distance + 1):
        if pool and d > 0:
            starts = [
                i for i in range(margin, n - d - margin)
            ] or [min(anchor, n - 1 - d)]
        else:
            starts = [anchor if anchor + d < n else n - 1 - d]
        prods = np.zeros(nret)
        for i in starts:
            prods += (samples[:, i] - means[i]) * (samples[:, i + d] - means[i + d])
        prods /= len(starts)
        dist.append(float(d))
        cov.append(float(prods.mean()))
        se.append(max(_batch_se(prods), 1e-300))
        cnt.append(nret * len(starts))
    return CorrelationCurve(np.array(dist), np.array(cov), np.array(se), np.array(cnt))


def curve_from_matrix(cov_matrix, anchor, max_distance=None):
    """Exact covariance curve read off a dense covariance matrix.

    Standard errors are set to the round-off scale so that every resolvable
    entry counts as signal in downstream fits.
    """
    n = cov_matrix.shape[0]
    if max_distance is None:
        max_distance = n - 1 - anchor
    ds = np.arange(0, max_distance + 1, dtype=float)
    vals = np.array([cov_matrix[anchor, anchor + int(d)] for d in ds])
    se = np.full_like(vals, DETERMINISTIC_SE)
    cnt = np.ones(len(ds), dtype=int)
    return CorrelationCurve(ds, vals, se, cnt)


def fit_decay(curve, min_signal=5):
    """Fit the decay shape A*exp(-c*d) + p over the resolvable window.

    The signal window spans the first through last distance with
    |estimate| > 3 SE (distance 0 excluded); fewer than `min_signal` such
    points yields an explicit no-fit result.  The series is oriented by the
    sign of its first signal point so that a decay toward a plateau of the
    opposite sign stays representable; amplitude and plateau are reported in
    the original orientation.
    """
    d = curve.distances
    y = curve.cov
    mask = (np.abs(y) > 3.0 * curve.se) & (d > 0)
    if mask.sum() < min_signal:
        return DecayFit.no_fit()
    lo, hi = d[mask][0], d[mask][-1]
    sel = (d >= lo) & (d <= hi)
    dd, yy = d[sel], y[sel]
    flip = 1.0 if yy[0] >= 0 else -1.0
    yy = flip * yy
    a0 = yy[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = yy[0] / yy[1] if len(yy) > 1 and yy[1] > 0 else np.e
    c0 = np.log(ratio) / (dd[1] - dd[0]) if np.isfinite(ratio) and ratio > 1 else 0.1
    p0 = float(np.median(yy[-min(3, len(yy)):]))
    sol = least_squares(
        lambda th: th[0] * np.exp(-th[1] * dd) + th[2] - yy,
        x0=[a0, max(c0, 0.01), p0],
        bounds=([-np.inf, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
    )
    a, c, p = sol.x
    resid = float(np.linalg.norm(sol.fun))
    return DecayFit(float(flip * a), float(c), float(flip * p), resid, float(lo), float(hi))


def loglinear_rate(curve, window=None):
    """Least-squares slope of ln|cov| against distance, with residual quality.

    Returns (rate, resid_norm / signal_norm); the rate is the negated slope.
    Used for pure exponential decay where no plateau is expected.
    """
    d = curve.distances
    y = np.abs(curve.cov)
    mask = (d > 0) & (y > 0)
    if window is not None:
        mask &= (d >= window[0]) & (d <= window[1])
    dd, ly = d[mask], np.log(y[mask])
    design = np.vstack([dd, np.ones_like(dd)]).T
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = float(np.linalg.norm(design @ coef - ly))
    return float(-coef[0]), resid / float(np.linalg.norm(ly))


def sigma_of_m_general(model, m, engine="oracle", quad_order=64, chain=None, max_iter=100):
    """Newton solve of mean_spin(sigma) = m on the chosen engine.

    The derivative d mean/d sigma is the variance of the total spin over n,
    positive by strict convexity, so the iteration is monotone-safe; the
    MCMC branch adds a bisection safeguard and stops inside 2 SE.
    """
    if engine == "oracle":
        from . import gaussian

        mean_fn = lambda s: float(gaussian.gce_moments(model, s).mean.mean())
        deriv_fn = lambda s: gaussian.total_variance_over_n(model)
        tol = 1e-10
    elif engine == "transfer":
        from .transfer import TransferChain

        def mean_fn(s):
            return TransferChain(model, s, quad_order).mean_spin()

        def deriv_fn(s):
            return TransferChain(model, s, quad_order).total_variance_over_n()

        tol = 1e-8
    elif engine == "mcmc":
        return _sigma_of_m_mcmc(model, m, chain, max_iter)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    sigma = float(m)
    for _ in range(max_iter):
        ms = mean_fn(sigma)
        if abs(ms - m) <= tol:
            return sigma
        sigma -= (ms - m) / deriv_fn(sigma)
    raise RuntimeError(f"sigma_of_m did not converge in {max_iter} iterations")


def _sigma_of_m_mcmc(model, m, chain, max_iter):
    from .samplers import ChainConfig, run_gce_chain

    if chain is None:
        chain = ChainConfig(seed=20260819, sweeps=4000, burn_in=500)
    lo, hi = -np.inf, np.inf
    sigma = float(m)
    for it in range(max_iter):
        cfg = ChainConfig(
            seed=chain.seed, sweeps=chain.sweeps, burn_in=chain.burn_in,
            thinning=chain.thinning, chain_id=chain.chain_id + it,
        )
        batch = run_gce_chain(model, sigma, cfg)
        totals = batch.samples.mean(axis=1)
        mean, se, _ = mean_with_error(totals)
        if abs(mean - m) <= 2.0 * se:
            return sigma
        if mean < m:
            lo = max(lo, sigma)
        else:
            hi = min(hi, sigma)
        deriv = max(batch.samples.sum(axis=1).var() / model.n, 1e-6)
        step = sigma - (mean - m) / deriv
        if not (lo < step < hi):
            step = 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else step
        sigma = float(step)
    raise RuntimeError(f"sigma_of_m (mcmc) did not converge in {max_iter} iterations")

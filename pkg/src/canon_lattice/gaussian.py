"""Closed-form reference values for models with psi_b = 0.

With a vanishing perturbation the grand canonical ensemble is the Gaussian
with banded precision P (unit diagonal, band c_k) and linear term
b_i = sigma - s~_i; the canonical ensemble is that Gaussian conditioned on
the mean spin, which is again Gaussian with a rank-1 corrected covariance.
Everything here is exact up to factorization round-off, so these values
serve as the ground truth for the transfer engine and the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

__all__ = [
    "GaussianMoments",
    "banded_precision",
    "gce_moments",
    "ce_moments",
    "free_energy_gce",
    "free_energy_ce",
    "sigma_of_m",
    "density_at_zero",
    "total_variance_over_n",
    "conditioned_moments_dense",
    "boundary_sensitivity",
    "pair_c_norm",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMoments:
    """First and second moments of one or both ensembles.

    mean/cov describe the grand canonical Gaussian; mean_c/cov_c, when
    present, the mean-spin conditioned one.  cov_c annihilates the constant
    vector: conditioning on the sum removes exactly that direction.
    """

    mean: np.ndarray
    cov: np.ndarray
    mean_c: np.ndarray | None = None
    cov_c: np.ndarray | None = None


def _require_zero_potential(model):
    if not model.potential.is_zero:
        raise ValueError("closed forms require the zero potential")


def banded_precision(model):
    """Precision matrix in scipy upper banded storage, shape (R+1, n)."""
    n, R = model.n, model.interaction.rng
    ab = np.zeros((R + 1, n))
    ab[R] = 1.0
    for k, c in enumerate(model.interaction.band, start=1):
        if k < n:
            ab[R - k, k:] = c
    return ab


def _factor(model):
    ab = banded_precision(model)
    try:
        cb = cholesky_banded(ab)
    except np.linalg.LinAlgError as exc:  # impossible under dominance
        raise RuntimeError("precision matrix not positive definite") from exc
    return cb


def _solve(cb, rhs):
    return cho_solve_banded((cb, False), rhs)


def _linear_term(model, sigma):
    return sigma - model.effective_field()


def gce_moments(model, sigma=None):
    """Mean vector and dense covariance of the grand canonical Gaussian.

    The covariance is assembled column by column from banded solves, which
    costs O(n^2 R) and stays exact to round-off; the `P Sigma = I` residual
    is checked to 1e-10.
    """
    _require_zero_potential(model)
    if sigma is None:
        sigma = model.window.sigma
        if sigma is None:
            raise ValueError("sigma is required (not set on the window)")
    cb = _factor(model)
    n = model.n
    cov = _solve(cb, np.eye(n))
    cov = 0.5 * (cov + cov.T)
    mean = _solve(cb, _linear_term(model, sigma))
    resid = np.abs(_banded_matmul(model, cov) - np.eye(n)).max()
    if resid > 1e-10:
        raise RuntimeError(f"P*Sigma - I residual {resid:.3e} exceeds 1e-10")
    return GaussianMoments(mean=mean, cov=cov)


def _banded_matmul(model, mat):
    """P @ mat for the unit-diagonal banded precision."""
    out = mat.copy()
    for k, c in enumerate(model.interaction.band, start=1):
        if k < model.n and c != 0.0:
            out[:-k] += c * mat[k:]
            out[k:] += c * mat[:-k]
    return out


def ce_moments(model, m=None, sigma=None):
    """Moments of both ensembles; the conditioned pair via the rank-1 formula.

        mean_c = mean + Sigma 1 (n m - 1' mean) / (1' Sigma 1)
        cov_c  = Sigma - (Sigma 1)(Sigma 1)' / (1' Sigma 1)
    """
    _require_zero_potential(model)
    if m is None:
        m = model.window.mean_spin
        if m is None:
            raise ValueError("mean spin m is required (not set on the window)")
    if sigma is None:
        sigma = model.window.sigma if model.window.sigma is not None else sigma_of_m(model, m)
    g = gce_moments(model, sigma)
    s1 = g.cov @ np.ones(model.n)
    total = s1.sum()
    mean_c = g.mean + s1 * (model.n * m - g.mean.sum()) / total
    cov_c = g.cov - np.outer(s1, s1) / total
    return GaussianMoments(mean=g.mean, cov=g.cov, mean_c=mean_c, cov_c=cov_c)


def free_energy_gce(model, sigma):
    """A_gce(sigma) = (1/n) [ b' P^-1 b / 2 + (n ln 2pi - ln det P) / 2 ]."""
    _require_zero_potential(model)
    cb = _factor(model)
    b = _linear_term(model, sigma)
    mu = _solve(cb, b)
    logdet = 2.0 * np.log(cb[-1]).sum()
    n = model.n
    return float((0.5 * b @ mu + 0.5 * (n * _LOG_2PI - logdet)) / n)


def total_variance_over_n(model):
    """(1/n) 1' Sigma 1, the variance of the rescaled total spin."""
    _require_zero_potential(model)
    cb = _factor(model)
    s1 = _solve(cb, np.ones(model.n))
    return float(s1.sum() / model.n)


def density_at_zero(model):
    """Density of W = n^{-1/2} sum (X_k - m) at 0 when sigma = sigma(m).

    W is centered Gaussian with variance v = (1/n) 1' Sigma 1, so the value
    is (2 pi v)^{-1/2}.
    """
    v = total_variance_over_n(model)
    return float(1.0 / np.sqrt(2.0 * np.pi * v))


def free_energy_ce(model, sigma):
    """A_ce = A_gce + (1/n) ln g(0) with m matched to sigma.

    Matching makes W zero-mean, so g(0) depends only on the total-spin
    variance; the identity is exact for the Gaussian.
    """
    return free_energy_gce(model, sigma) + float(np.log(density_at_zero(model))) / model.n


def sigma_of_m(model, m):
    """External field sigma with grand canonical mean spin m (linear solve)."""
    _require_zero_potential(model)
    cb = _factor(model)
    n = model.n
    s1 = _solve(cb, np.ones(n))
    st = _solve(cb, model.effective_field())
    sigma = (n * m + st.sum()) / s1.sum()
    mu = sigma * s1 - st
    drift = abs(mu.mean() - m)
    if drift > 1e-10:
        raise RuntimeError(f"sigma_of_m post-check failed: mean drift {drift:.3e}")
    return float(sigma)


def conditioned_moments_dense(model, m, sigma=None):
    """Conditioned moments by explicit hyperplane parametrization.

    Independent of the rank-1 route: parametrize {mean spin = m} by an
    orthonormal basis V of the complement of the constant direction and
    invert V' P V densely.  Used to cross-check ce_moments.
    """
    _require_zero_potential(model)
    n = model.n
    if sigma is None:
        sigma = model.window.sigma if model.window.sigma is not None else sigma_of_m(model, m)
    ones = np.ones((n, 1)) / np.sqrt(n)
    # orthonormal basis of the hyperplane directions
    q, _ = np.linalg.qr(np.eye(n) - ones @ ones.T)
    V = q[:, : n - 1]
    P = np.eye(n)
    for k, c in enumerate(model.interaction.band, start=1):
        for i in range(n - k):
            P[i, i + k] = c
            P[i + k, i] = c
    b = _linear_term(model, sigma)
    quad = V.T @ P @ V
    quad_inv = np.linalg.inv(quad)
    anchor = np.full(n, m)
    coef = V.T @ (b - P @ anchor)
    mean_c = anchor + V @ (quad_inv @ coef)
    cov_c = V @ quad_inv @ V.T
    return GaussianMoments(mean=mean_c, cov=cov_c, mean_c=mean_c, cov_c=cov_c)


def boundary_sensitivity(model, m, radii, boundary_value=2.0):
    """|Delta E_ce[x_center]| between boundaries +v and -v on nested windows.

    For radius r the window has n = 2r - 1 sites with the center fixed; the
    curve over growing r is the finite-volume trace of having one limit
    measure regardless of boundary.
    """
    from .model import resize

    out = []
    for r in radii:
        n = 2 * int(r) - 1
        vals = []
        for bv in (boundary_value, -boundary_value):
            bc = (bv,) * model.interaction.rng
            window_model = resize(model, n, mean_spin=m, boundary_left=bc, boundary_right=bc)
            mom = ce_moments(window_model, m)
            vals.append(mom.mean_c[r - 1])
        out.append(abs(vals[0] - vals[1]))
    return np.array(out)


def pair_c_norm(moments, i, j):
    """Gradient-norm coefficient for the spin pair (x_i, x_j), Gaussian case.

    For f = x_i, g = x_j the coefficient is
    ||grad((f - Ef)(g - Eg))||_L4 + ||grad f||_L4 ||grad g||_L4 with all
    norms under the grand canonical Gaussian; the first term has the closed
    form (3 S_ii^2 + 3 S_jj^2 + 2 S_ii S_jj + 4 S_ij^2)^{1/4}.
    """
    s = moments.cov
    quart = 3.0 * s[i, i] ** 2 + 3.0 * s[j, j] ** 2 + 2.0 * s[i, i] * s[j, j] + 4.0 * s[i, j] ** 2
    return float(quart**0.25 + 1.0)

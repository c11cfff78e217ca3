"""Deterministic nearest-neighbor engine: kernel products and Fourier inversion.

For range-1 interactions the partition integral factorizes over the chain, so
expectations reduce to ordered products of a positive bond kernel and per-site
diagonal weights on a Gauss-Hermite grid.  Canonical (fixed mean spin)
quantities are recovered from the grand canonical ones through the
characteristic function of the rescaled centered total spin
W = n^{-1/2} sum(X_k - m):

    g(0)    = (1/2pi) Integral E[exp(i xi W)] d xi
    E_ce[f] = Integral E[f exp(i xi W)] d xi / Integral E[exp(i xi W)] d xi

with one shared adaptive truncation radius for numerator and denominator.
The free energies are tied together by A_ce - A_gce = (1/n) ln g(0).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .estimators import FreeEnergyReport

__all__ = ["QuadratureGrid", "LocalFunction", "TransferChain"]

MAX_SITES = 512
MIN_NODES = 40
XI_CAP = 512.0
MAX_BLOCK = 4


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Hermite nodes rescaled to integrate h(z) exp(-z^2/2) dz exactly
    for polynomial h up to degree 2 * order - 1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, order):
        t, a = hermgauss(order)
        return cls(order, np.sqrt(2.0) * t, np.sqrt(2.0) * a)


@dataclass(frozen=True)
class LocalFunction:
    """Observable on a contiguous block of at most four sites.

    support holds 0-based site indices; func maps len(support) arrays
    (meshgrid broadcastable) to values.
    """

    support: tuple
    func: object

    def __post_init__(self):
        sup = tuple(int(s) for s in self.support)
        object.__setattr__(self, "support", sup)
        if not 1 <= len(sup) <= MAX_BLOCK:
            raise ValueError(f"support size must be between 1 and {MAX_BLOCK}")
        if any(b - a != 1 for a, b in zip(sup, sup[1:])):
            raise ValueError("support must be contiguous")

    @classmethod
    def spin(cls, i):
        return cls((i,), lambda z: z)

    @classmethod
    def site(cls, i, func):
        return cls((i,), func)

    @classmethod
    def centered_cube(cls, i, m):
        """(x_i - m)^3, the default odd nonlinear probe."""
        return cls((i,), lambda z: (z - m) ** 3)

    def grid_values(self, nodes):
        """Value tensor on the grid, shape (Q,) * len(support)."""
        k = len(self.support)
        axes = np.meshgrid(*([nodes] * k), indexing="ij", sparse=True)
        out = np.asarray(self.func(*axes), dtype=float)
        return out * np.ones((len(nodes),) * k)


def _merge_factors(factors):
    """Group factors into disjoint contiguous blocks, merging overlapping
    supports into their union (at most MAX_BLOCK sites)."""
    for lf in factors:
        if not isinstance(lf, LocalFunction):
            raise TypeError("factors must be LocalFunction instances")
    items = sorted(factors, key=lambda lf: lf.support[0])
    groups = []
    for lf in items:
        if groups and lf.support[0] <= groups[-1][1]:
            g = groups[-1]
            g[1] = max(g[1], lf.support[-1])
            g[2].append(lf)
        else:
            groups.append([lf.support[0], lf.support[-1], [lf]])
    out = []
    for lo, hi, lfs in groups:
        if hi - lo + 1 > MAX_BLOCK:
            raise ValueError(
                f"merged factor support spans {hi - lo + 1} sites; "
                f"the engine contracts at most {MAX_BLOCK} contiguous sites"
            )
        out.append((tuple(range(lo, hi + 1)), lfs))
    return out


class TransferChain:
    """Ordered-kernel evaluator for one model at one external field.

    Everything is deterministic given the quadrature order; running log
    rescaling of the kernel products keeps magnitudes bounded for any n.
    """

    def __init__(self, model, sigma=None, quad_order=64):
        if model.interaction.rng != 1:
            raise ValueError("transfer engine requires nearest-neighbor interaction")
        if model.n > MAX_SITES:
            raise ValueError(f"window size {model.n} exceeds engine limit {MAX_SITES}")
        if quad_order < MIN_NODES:
            raise ValueError(f"quadrature order {quad_order} below minimum {MIN_NODES}")
        if sigma is None:
            sigma = model.window.sigma
            if sigma is None:
                raise ValueError("sigma is required (not set on the window)")
        self.model = model
        self.sigma = float(sigma)
        self.grid = QuadratureGrid.build(quad_order)
        self.n = model.n
        z, w = self.grid.nodes, self.grid.weights
        c1 = model.interaction.band[0]
        self.kernel = np.exp(-c1 * np.outer(z, z))
        stilde = model.effective_field()
        # z^2/2 cancels against the Gaussian quadrature weight
        self.log_diag = (
            np.log(w)[None, :]
            + (self.sigma - stilde)[:, None] * z[None, :]
            - model.potential.value(z)[None, :]
        )
        self._fb_cache = None
        self._logz_cache = None

    def refined(self, factor=2):
        """Same chain on a grid with `factor` times the nodes."""
        return TransferChain(self.model, self.sigma, self.grid.order * factor)

    # ---- core passes -----------------------------------------------------

    def _group_values(self, sup, members):
        """Product value tensor of a merged factor group on its union block."""
        k = len(sup)
        axes = np.meshgrid(*([self.grid.nodes] * k), indexing="ij", sparse=True)
        vals = np.ones((self.grid.order,) * k)
        for lf in members:
            off = lf.support[0] - sup[0]
            vals = vals * np.asarray(lf.func(*axes[off : off + len(lf.support)]))
        return vals

    def _pass(self, xis=None, m=0.0, factors=()):
        """log of the (tilted) partition sum, batched over frequencies.

        Returns an array log Z(xi) over the given xis, or the scalar log Z
        when xis is None.  Factor blocks are contracted in place as the pass
        crosses their support.
        """
        z = self.grid.nodes
        n = self.n
        d = np.exp(self.log_diag)
        complex_mode = xis is not None
        if complex_mode:
            xis = np.asarray(xis, dtype=float)
            tilt = np.exp(1j * np.outer(z - m, xis) / np.sqrt(n))  # (Q, nxi)

            def diag(i):
                return d[i][:, None] * tilt

        else:

            def diag(i):
                return d[i][:, None]

        by_entry = {sup[0]: (sup, lfs) for sup, lfs in _merge_factors(factors)}
        if any(sup[-1] >= n for sup, _ in by_entry.values()):
            raise ValueError("factor support extends beyond the window")
        ncols = len(xis) if complex_mode else 1
        logscale = np.zeros(ncols)
        i = 0
        F = None
        while i < n:
            if i in by_entry:
                sup, lfs = by_entry[i]
                vals = self._group_values(sup, lfs)
                F = self._apply_block(F, i, sup, vals, diag)
                i = sup[-1] + 1
            else:
                col = diag(i)
                F = col if F is None else col * (self.kernel @ F)
                i += 1
            s = np.abs(F).max(axis=0)
            s[s == 0.0] = 1.0
            F = F / s
            logscale += np.log(s)
        total = F.sum(axis=0)
        if complex_mode:
            return logscale + np.log(total.astype(complex))
        return float(logscale[0] + np.log(total[0]))

    def _apply_block(self, F, entry, sup, vals, diag):
        """Contract a value tensor across its support inside the pass."""
        k = len(sup)
        first = diag(entry) if F is None else diag(entry) * (self.kernel @ F)
        if k == 1:
            return vals[:, None] * first
        K = self.kernel
        cols = [diag(entry + t) for t in range(1, k)]
        if k == 2:
            # out[b, x] = sum_a vals[a, b] first[a, x] K[a, b] cols0[b, x]
            out = np.einsum("ab,ax,ab->bx", vals, first, K, optimize=True)
            return out * cols[0]
        if k == 3:
            mid = np.einsum("abc,ax,ab->bcx", vals, first, K, optimize=True)
            mid = mid * cols[0][:, None, :]
            out = np.einsum("bcx,bc->cx", mid, K, optimize=True)
            return out * cols[1]
        # k == 4: per-column contraction keeps memory at O(Q^3)
        ncols = first.shape[1]
        dtype = np.result_type(first, cols[0])
        out = np.empty((self.grid.order, ncols), dtype=dtype)
        for x in range(ncols):
            u = np.einsum("abcd,a,ab->bcd", vals, first[:, x], K, optimize=True)
            u = u * cols[0][:, x][:, None, None]
            u = np.einsum("bcd,bc->cd", u, K, optimize=True)
            u = u * cols[1][:, x][:, None]
            u = np.einsum("cd,cd->d", u, K, optimize=True)
            out[:, x] = u * cols[2][:, x]
        return out

    # ---- grand canonical -------------------------------------------------

    def log_partition(self):
        if self._logz_cache is None:
            self._logz_cache = self._pass()
        return self._logz_cache

    def free_energy_gce(self):
        return self.log_partition() / self.n

    def _forward_backward(self):
        if self._fb_cache is not None:
            return self._fb_cache
        n, Q = self.n, self.grid.order
        d = np.exp(self.log_diag)
        F = np.empty((n, Q))
        f = d[0]
        F[0] = f / f.max()
        for i in range(1, n):
            f = d[i] * (self.kernel @ F[i - 1])
            F[i] = f / f.max()
        B = np.empty((n, Q))
        B[n - 1] = 1.0
        for i in range(n - 2, -1, -1):
            b = self.kernel @ (d[i + 1] * B[i + 1])
            B[i] = b / b.max()
        self._fb_cache = (F, B)
        return self._fb_cache

    def site_expectations(self, func=None):
        """E[func(x_i)] for every site, from one forward-backward sweep."""
        F, B = self._forward_backward()
        h = self.grid.nodes if func is None else func(self.grid.nodes)
        norm = (F * B).sum(axis=1)
        return (F * h[None, :] * B).sum(axis=1) / norm

    def mean_spin(self):
        return float(self.site_expectations().mean())

    def gce_expectation(self, *factors):
        """E[product of local functions] under the grand canonical measure."""
        return float(np.exp(self._pass(factors=factors) - self.log_partition()))

    def gce_covariance(self, f, g):
        return self.gce_expectation(f, g) - self.gce_expectation(f) * self.gce_expectation(g)

    def gce_stats(self, observables=()):
        """(1/n) log Z, per-observable means, and the pair covariance matrix."""
        logz = self.log_partition()
        means = [self.gce_expectation(f) for f in observables]
        k = len(observables)
        cov = np.zeros((k, k))
        for a in range(k):
            for b in range(a, k):
                raw = self.gce_expectation(observables[a], observables[b])
                cov[a, b] = cov[b, a] = raw - means[a] * means[b]
        return logz / self.n, means, cov

    def block_central_moments(self, sites, max_power=4, centers=None):
        """E[(sum_{i in A}(x_i - c_i))^k] for k = 0..max_power, exactly.

        Centers default to the per-site means.  Binomial propagation of the
        power sums along the chain keeps the cost linear in n and quadratic
        in the grid size.
        """
        sites = sorted(set(int(s) for s in sites))
        if sites and (sites[0] < 0 or sites[-1] >= self.n):
            raise ValueError("block sites outside the window")
        if centers is None:
            means = self.site_expectations()
            centers = {i: means[i] for i in sites}
        elif np.isscalar(centers):
            centers = {i: float(centers) for i in sites}
        else:
            centers = dict(zip(sites, centers))
        in_block = set(sites)
        z = self.grid.nodes
        d = np.exp(self.log_diag)
        V = np.zeros((max_power + 1, self.grid.order))
        V[0] = d[0]
        if 0 in in_block:
            zc = z - centers[0]
            for k in range(max_power, 0, -1):
                V[k] = V[0] * zc**k
        for i in range(1, self.n):
            V = d[i][None, :] * (V @ self.kernel)
            if i in in_block:
                zc = z - centers[i]
                Vn = V.copy()
                for k in range(max_power, 0, -1):
                    acc = V[k].copy()
                    for l in range(k):
                        acc += comb(k, l) * zc ** (k - l) * V[l]
                    Vn[k] = acc
                V = Vn
            V = V / V[0].max()
        norm = V[0].sum()
        return np.array([float(V[k].sum() / norm) for k in range(max_power + 1)])

    def total_variance_over_n(self):
        """(1/n) var(sum X), the second field derivative of the free energy."""
        return float(self.block_central_moments(range(self.n), 2)[2] / self.n)

    # ---- canonical via Fourier inversion ----------------------------------

    def characteristic_fn(self, xis, m, factors=()):
        """E[prod(factors) * exp(i xi W)] per xi, with W = n^{-1/2} sum(X - m).

        Without factors the value at xi = 0 is exactly 1.
        """
        xis = np.atleast_1d(np.asarray(xis, dtype=float))
        logz = self._pass(xis=xis, m=m, factors=factors)
        out = np.exp(logz - self.log_partition())
        if not factors:
            out[xis == 0.0] = 1.0
        return out

    def _fourier_pair(self, m, factors, step, octave_tol):
        """Adaptive paired line integrals of the tilted expectation (numerator)
        and the bare characteristic function (denominator), sharing one
        truncation radius."""
        den = 0.0 + 0.0j
        num = 0.0 + 0.0j
        radius = 8.0
        xs = np.arange(-radius, radius + step / 2, step)
        den += self.characteristic_fn(xs, m).sum() * step
        if factors:
            num += self.characteristic_fn(xs, m, factors).sum() * step
        prev_add = np.inf
        while True:
            left = np.arange(-2 * radius, -radius, step)
            right = np.arange(radius + step, 2 * radius + step / 2, step)
            new = np.concatenate([left, right])
            add_d = self.characteristic_fn(new, m).sum() * step
            den += add_d
            add_n = 0.0
            if factors:
                add_n = self.characteristic_fn(new, m, factors).sum() * step
                num += add_n
            radius *= 2
            worst = max(abs(add_d), abs(add_n))
            if worst < octave_tol:
                break
            if radius >= XI_CAP:
                raise RuntimeError(
                    f"frequency tail not converged at |xi| = {radius:g}; "
                    "grid order and model scale are inconsistent"
                )
            if worst > prev_add * 1.5:
                raise RuntimeError("frequency tail is growing; aborting inversion")
            prev_add = worst
        return num, den, radius

    def density_at_zero(self, m, step=0.25, octave_tol=1e-9):
        """g(0), the density of W at zero, by trapezoid Fourier inversion."""
        _, den, _ = self._fourier_pair(m, (), step, octave_tol)
        val = den / (2.0 * np.pi)
        if abs(val.imag) > 1e-9:
            raise RuntimeError(f"imaginary residue {val.imag:.3e} in g(0)")
        return float(val.real)

    def ce_expectation(self, m, *factors, step=0.25, octave_tol=1e-9):
        """E_ce[product of factors] as a ratio of tilted line integrals."""
        if not factors:
            raise ValueError("at least one factor is required")
        num, den, _ = self._fourier_pair(m, factors, step, octave_tol)
        val = num / den
        if abs(val.imag) > 1e-8:
            raise RuntimeError(f"imaginary residue {val.imag:.3e} in ce expectation")
        return float(val.real)

    def ce_covariance(self, m, f, g, step=0.25, octave_tol=1e-9):
        """cov_ce(f, g); overlapping supports merge into one union block."""
        ef = self.ce_expectation(m, f, step=step, octave_tol=octave_tol)
        eg = self.ce_expectation(m, g, step=step, octave_tol=octave_tol)
        efg = self.ce_expectation(m, f, g, step=step, octave_tol=octave_tol)
        return efg - ef * eg

    # ---- free energies and tilted checks -----------------------------------

    def free_energy_ce(self, m=None, step=0.25, octave_tol=1e-12):
        """A_ce = A_gce + (1/n) ln g(0); m defaults to the matched mean spin."""
        if m is None:
            m = self.mean_spin()
        g0 = self.density_at_zero(m, step=step, octave_tol=octave_tol)
        return self.free_energy_gce() + float(np.log(g0)) / self.n

    def free_energy_report(self, h=1e-3, octave_tol=1e-12):
        """Both free energies with centered finite-difference derivatives.

        The canonical branch re-solves the matched mean spin at every field
        value, so its derivatives are total derivatives along the field.
        """
        a_g, a_c = [], []
        for s in (self.sigma - h, self.sigma, self.sigma + h):
            ch = TransferChain(self.model, s, self.grid.order)
            a_g.append(ch.free_energy_gce())
            a_c.append(ch.free_energy_ce(octave_tol=octave_tol))
        d1g = (a_g[2] - a_g[0]) / (2 * h)
        d1c = (a_c[2] - a_c[0]) / (2 * h)
        d2g = (a_g[2] - 2 * a_g[1] + a_g[0]) / h**2
        d2c = (a_c[2] - 2 * a_c[1] + a_c[0]) / h**2
        return FreeEnergyReport(a_g[1], a_c[1], d1g, d1c, d2g, d2c)

    def tilted_free_energy(self, tilts):
        """(1/n) log of the partition sum reweighted by exp(sum t_k f_k).

        tilts is a sequence of (LocalFunction, strength) pairs; overlapping
        supports merge automatically.
        """
        factors = tuple(
            LocalFunction(
                lf.support, lambda *zz, _lf=lf, _t=t: np.exp(_t * _lf.func(*zz))
            )
            for lf, t in tilts
        )
        return self._pass(factors=factors) / self.n

    def modified_tilt_check(self, f, g=None, h_step=1e-3, order=2):
        """Residual of the tilted free-energy derivative identities.

        order 1: |d/dt A(t) at 0 - (1/n) E[f]| by centered difference.
        order 2: |n * mixed second difference - cov(f, g)|.
        """
        if not 1e-4 <= h_step <= 1e-2:
            raise ValueError("h_step outside [1e-4, 1e-2]")
        h = h_step
        if order == 1:
            d1 = (
                self.tilted_free_energy([(f, h)]) - self.tilted_free_energy([(f, -h)])
            ) / (2 * h)
            return abs(d1 - self.gce_expectation(f) / self.n)
        if g is None:
            raise ValueError("order 2 needs both observables")
        app = (
            self.tilted_free_energy([(f, h), (g, h)])
            - self.tilted_free_energy([(f, h), (g, -h)])
            - self.tilted_free_energy([(f, -h), (g, h)])
            + self.tilted_free_energy([(f, -h), (g, -h)])
        ) / (4 * h * h)
        return abs(self.n * app - self.gce_covariance(f, g))

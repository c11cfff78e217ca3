"""Command-line experiments: one subcommand per verified statement.

Each run resolves a model config, dispatches to the closed-form oracle, the
deterministic transfer engine, or the MCMC samplers, writes plot-ready CSVs
plus a machine-parseable summary.json, and returns a disciplined exit code:

    0  every check passed
    2  at least one tolerance/trend check failed
    3  configuration or usage error

Every run also writes manifest.json (resolved config, engine, seed, sweep
sizes, package version).  `rerun --manifest <file>` repeats the recorded run
into a new directory; outputs contain no timestamps or environment state, so
a rerun reproduces every CSV byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, estimators, gaussian
from .estimators import (
    DETERMINISTIC_SE,
    CorrelationCurve,
    curve_from_matrix,
    covariance_curve,
    fit_decay,
    mean_with_error,
    sigma_of_m_general,
)
from .model import ConfigError, model_from_dict, resize, _toml_load
from .samplers import ChainConfig, model_digest, run_ce_chain, run_gce_chain, two_boundary_ce_pair
from .transfer import LocalFunction, TransferChain

EXIT_OK = 0
EXIT_CHECK = 2
EXIT_CONFIG = 3

COMMANDS = (
    "oracle-check",
    "equivalence-observables",
    "correlation-equivalence",
    "free-energy",
    "uniqueness",
    "moment-variance-suite",
)

ALLOWED_ENGINES = {
    "oracle-check": ("oracle",),
    "equivalence-observables": ("oracle", "transfer"),
    "correlation-equivalence": ("oracle", "transfer", "mcmc"),
    "free-energy": ("oracle", "transfer"),
    "uniqueness": ("oracle", "mcmc"),
    "moment-variance-suite": ("oracle", "transfer"),
}

DEFAULT_NS = {
    "oracle-check": (32, 64, 128),
    "equivalence-observables": (8, 16, 32),
    "correlation-equivalence": (64, 128),
    "free-energy": (8, 16, 32),
    "uniqueness": (4, 8, 16, 32),
    "moment-variance-suite": (8, 16, 32, 64, 128),
}
DEFAULT_NS_MCMC = {
    "correlation-equivalence": (32, 64),
    "uniqueness": (4, 16),
}

# Bands and tolerances, all overridable through the [checks] config section.
DEFAULT_CHECKS = {
    "plateau_ratio_band": (1.8, 2.2),
    "gap_ratio_band": (1.8, 2.2),
    "ce_plateau_ratio_band": (1.6, 2.5),
    "gce_plateau_band": 3e-3,
    "gce_plateau_band_mcmc": 2e-2,
    "variance_band": (0.1, 10.0),
    "moment_bands": (10.0, 10.0, 40.0),
    "block4_band": 50.0,
    "block_ratio_max": 6.5,
    "sigma_grid": (-2.0, -1.0, 0.0, 1.0, 2.0),
    "fixed_distance": 4,
    "slope_max": -0.4,
    "epsilon_floor": 1e-9,
    "rank1_tol": 1e-10,
    "symmetric_tol": 1e-12,
}


@dataclass(frozen=True)
class Check:
    """One named pass/fail line of a command report."""

    name: str
    passed: bool
    value: float | str
    expected: str


@dataclass
class Opts:
    engine: str
    seed: int
    n_list: tuple
    sweeps: int
    burn_in: int
    bands: dict = field(default_factory=dict)


# ---- plumbing --------------------------------------------------------------


def _fmt_cell(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _capabilities(model):
    caps = {"mcmc"}
    if model.potential.is_zero:
        caps.add("oracle")
    if model.interaction.rng == 1:
        caps.add("transfer")
    return caps


def _pick_engine(model, command, requested):
    allowed = ALLOWED_ENGINES[command]
    caps = _capabilities(model)
    if requested:
        if requested not in allowed:
            raise ConfigError(f"{command} does not support engine {requested!r}")
        if requested not in caps:
            raise ConfigError(
                f"engine {requested!r} unavailable for this model "
                f"(needs {'zero potential' if requested == 'oracle' else 'range 1'})"
            )
        return requested
    for eng in allowed:
        if eng in caps:
            return eng
    raise ConfigError(
        f"no engine of {allowed} can run this model; "
        "oracle needs the zero potential, transfer needs range 1"
    )


def _resolve_bands(cfg, command):
    bands = dict(DEFAULT_CHECKS)
    over = dict(cfg.get("checks", {}))
    for key in list(over):
        if key not in bands:
            raise ConfigError(f"unknown checks key {key!r}")
        val = over.pop(key)
        bands[key] = tuple(val) if isinstance(val, (list, tuple)) else val
    return bands


def _sigma_and_mean(model, engine, seed, sweeps, burn_in):
    """Resolve (sigma, m) from whichever of the two the window pins."""
    w = model.window
    if w.mean_spin is not None:
        m = float(w.mean_spin)
        if engine == "mcmc":
            caps = _capabilities(model)
            eng = "oracle" if "oracle" in caps else ("transfer" if "transfer" in caps else "mcmc")
            chain = ChainConfig(seed=seed, sweeps=max(sweeps // 4, 1000), burn_in=burn_in)
            sigma = sigma_of_m_general(model, m, engine=eng, chain=chain)
        else:
            sigma = sigma_of_m_general(model, m, engine=engine)
        return float(sigma), m
    if w.sigma is not None:
        sigma = float(w.sigma)
        if engine == "oracle":
            m = float(gaussian.gce_moments(model, sigma).mean.mean())
        elif engine == "transfer":
            m = TransferChain(model, sigma).mean_spin()
        else:
            caps = _capabilities(model)
            if "oracle" in caps:
                m = float(gaussian.gce_moments(model, sigma).mean.mean())
            elif "transfer" in caps:
                m = TransferChain(model, sigma).mean_spin()
            else:
                cfg = ChainConfig(seed=seed, sweeps=sweeps, burn_in=burn_in, chain_id=9000)
                batch = run_gce_chain(model, sigma, cfg)
                m = float(batch.samples.mean())
        return sigma, m
    raise ConfigError("window must set mean_spin or sigma")


def _floor_decreasing(vals, floor):
    """Strictly decreasing, treating everything below the floor as converged."""
    ok = True
    for a, b in zip(vals, vals[1:]):
        if a <= floor and b <= floor:
            continue
        if not b < a:
            ok = False
    return ok


def _loglog_slope(ns, gaps, floor):
    pts = [(n, g) for n, g in zip(ns, gaps) if g > floor]
    if len(pts) < 2:
        return None
    ln = np.log([p[0] for p in pts])
    lg = np.log([p[1] for p in pts])
    design = np.vstack([ln, np.ones_like(ln)]).T
    coef, *_ = np.linalg.lstsq(design, lg, rcond=None)
    return float(coef[0])


# ---- transfer-engine helpers ----------------------------------------------


def _transfer_curves(model, sigma, m, anchor, max_distance):
    """Exact gce and ce covariance curves from the transfer engine."""
    ch = TransferChain(model, sigma)
    ds = list(range(0, max_distance + 1))
    gvals, cvals = [], []
    ce_means = {}

    def ce_mean(site):
        if site not in ce_means:
            ce_means[site] = ch.ce_expectation(m, LocalFunction.spin(site))
        return ce_means[site]

    for d in ds:
        f = LocalFunction.spin(anchor)
        g = LocalFunction.spin(anchor + d)
        gvals.append(ch.gce_covariance(f, g))
        joint = ch.ce_expectation(m, f, g)
        cvals.append(joint - ce_mean(anchor) * ce_mean(anchor + d))
    se = np.full(len(ds), DETERMINISTIC_SE)
    cnt = np.ones(len(ds), dtype=int)
    dsf = np.array(ds, dtype=float)
    return (
        CorrelationCurve(dsf, np.array(gvals), se, cnt),
        CorrelationCurve(dsf, np.array(cvals), se, cnt),
    )


def _gaussian_central_even(v, k):
    """E[(X - EX)^k] for a Gaussian with variance v (k even)."""
    if k == 2:
        return v
    if k == 4:
        return 3.0 * v * v
    if k == 6:
        return 15.0 * v**3
    raise ValueError("k must be 2, 4, or 6")


# ---- commands ---------------------------------------------------------------


def cmd_oracle_check(cfg, opts, outdir):
    model = model_from_dict(cfg)
    if not model.potential.is_zero:
        raise ConfigError("oracle-check requires the zero potential")
    checks = []
    bands = opts.bands
    lo, hi = bands["plateau_ratio_band"]

    # symmetric identity on the internal uncoupled 4-site window
    iid = model_from_dict({"interaction": {"range": 1, "band": [0.0], "delta": 0.9},
                          "window": {"n": 4}})
    mom_iid = gaussian.ce_moments(iid, m=0.0, sigma=0.0)
    cov12 = float(mom_iid.cov_c[1, 2])
    write_csv(outdir / "symmetric_identity.csv", ["cov_ce_12", "target"],
              [(cov12, -0.25)])
    checks.append(Check("symmetric_identity", abs(cov12 + 0.25) <= bands["symmetric_tol"],
                        cov12, f"cov_ce(1,2) = -0.25 within {bands['symmetric_tol']:g}"))

    fit_rows = []
    plateau_rows = []
    ident_rows = []
    prev_p = None
    for n in opts.n_list:
        mn = resize(model, n)
        sigma, m = _sigma_and_mean(mn, "oracle", opts.seed, opts.sweeps, opts.burn_in)
        mom = gaussian.ce_moments(mn, m=m, sigma=sigma)
        anchor = 1
        gcurve = curve_from_matrix(mom.cov, anchor)
        ccurve = curve_from_matrix(mom.cov_c, anchor)
        for tag, curve in (("gce", gcurve), ("ce", ccurve)):
            write_csv(outdir / f"curve_{tag}_n{n}.csv", ["d", "cov", "se", "n"], curve.rows())
        gfit = fit_decay(gcurve)
        cfit = fit_decay(ccurve)
        fit_rows.append((n, "gce") + gfit.row())
        fit_rows.append((n, "ce") + cfit.row())
        checks.append(Check(f"gce_fit_n{n}", gfit.ok and gfit.rate > 0.0,
                            gfit.rate if gfit.ok else "no-fit", "decay fit ok, rate > 0"))
        checks.append(Check(
            f"gce_plateau_n{n}",
            gfit.ok and abs(gfit.plateau) <= bands["gce_plateau_band"],
            gfit.plateau if gfit.ok else "no-fit",
            f"|p| <= {bands['gce_plateau_band']:g}",
        ))
        ratio = None if (prev_p is None or not cfit.ok) else prev_p / cfit.plateau
        plateau_rows.append((n, cfit.plateau, float("nan") if ratio is None else ratio))
        if ratio is not None:
            checks.append(Check(f"ce_plateau_ratio_n{n}", lo <= ratio <= hi,
                                ratio, f"ratio in [{lo:g}, {hi:g}]"))
        prev_p = cfit.plateau if cfit.ok else None

        dense = gaussian.conditioned_moments_dense(mn, m, sigma=sigma)
        dmean = float(np.abs(dense.mean_c - mom.mean_c).max())
        dcov = float(np.abs(dense.cov_c - mom.cov_c).max())
        ident_rows.append((n, dmean, dcov))
        checks.append(Check(f"rank1_identity_n{n}",
                            max(dmean, dcov) <= bands["rank1_tol"],
                            max(dmean, dcov), f"residual <= {bands['rank1_tol']:g}"))

    write_csv(outdir / "fits.csv",
              ["n", "ensemble", "A", "c", "p", "resid", "window_lo", "window_hi"], fit_rows)
    write_csv(outdir / "plateau_table.csv", ["n", "plateau", "ratio_prev"], plateau_rows)
    write_csv(outdir / "rank1_identity.csv", ["n", "max_mean_resid", "max_cov_resid"],
              ident_rows)
    return checks


def _cubed_gap_oracle(model, sigma, m):
    mom = gaussian.ce_moments(model, m=m, sigma=sigma)
    mid = model.n // 2
    d_g = mom.mean[mid] - m
    d_c = mom.mean_c[mid] - m
    e_g = d_g**3 + 3.0 * d_g * mom.cov[mid, mid]
    e_c = d_c**3 + 3.0 * d_c * mom.cov_c[mid, mid]
    return float(e_g), float(e_c)


def cmd_equivalence_observables(cfg, opts, outdir):
    model = model_from_dict(cfg)
    checks = []
    bands = opts.bands
    floor = bands["epsilon_floor"]
    rows = []
    gaps = []
    linear_rows = []
    for n in opts.n_list:
        mn = resize(model, n)
        sigma, m = _sigma_and_mean(mn, opts.engine, opts.seed, opts.sweeps, opts.burn_in)
        mid = n // 2
        if opts.engine == "oracle":
            e_g, e_c = _cubed_gap_oracle(mn, sigma, m)
            mom = gaussian.ce_moments(mn, m=m, sigma=sigma)
            lin_gap = abs(float(mom.mean[mid] - mom.mean_c[mid]))
            linear_rows.append((n, lin_gap))
            checks.append(Check(f"linear_gap_n{n}", lin_gap <= 1e-9, lin_gap,
                                "linear observable gap <= 1e-9"))
        else:
            ch = TransferChain(mn, sigma)
            f = LocalFunction.centered_cube(mid, m)
            e_g = ch.gce_expectation(f)
            e_c = ch.ce_expectation(m, f)
        gap = abs(e_g - e_c)
        rows.append((n, e_g, e_c, gap))
        gaps.append(gap)
    write_csv(outdir / "gaps.csv", ["n", "e_gce", "e_ce", "gap"], rows)
    if linear_rows:
        write_csv(outdir / "linear_gaps.csv", ["n", "gap"], linear_rows)
    checks.append(Check("gaps_decreasing", _floor_decreasing(gaps, floor),
                        ",".join(f"{g:.3e}" for g in gaps),
                        "strictly decreasing across the n sweep"))
    slope = _loglog_slope(opts.n_list, gaps, floor)
    if slope is None:
        checks.append(Check("loglog_slope", True, "below floor",
                            f"slope <= {bands['slope_max']:g} (converged)"))
    else:
        checks.append(Check("loglog_slope", slope <= bands["slope_max"], slope,
                            f"slope <= {bands['slope_max']:g}"))
    return checks


def cmd_correlation_equivalence(cfg, opts, outdir):
    model = model_from_dict(cfg)
    checks = []
    bands = opts.bands
    floor = bands["epsilon_floor"]
    dist = int(bands["fixed_distance"])
    lo, hi = bands["ce_plateau_ratio_band"]
    mcmc = opts.engine == "mcmc"
    p_band = bands["gce_plateau_band_mcmc"] if mcmc else bands["gce_plateau_band"]
    fit_rows = []
    gap_rows = []
    gaps = []
    gap_ses = []
    prev_p = None
    for idx, n in enumerate(opts.n_list):
        if n < 2 * dist:
            raise ConfigError(f"window n={n} too small for fixed distance {dist}")
        mn = resize(model, n)
        sigma, m = _sigma_and_mean(mn, opts.engine, opts.seed, opts.sweeps, opts.burn_in)
        anchor = (n - dist) // 2
        if opts.engine == "oracle":
            mom = gaussian.ce_moments(mn, m=m, sigma=sigma)
            gcurve = curve_from_matrix(mom.cov, 1)
            ccurve = curve_from_matrix(mom.cov_c, 1)
            cov_g = float(mom.cov[anchor, anchor + dist])
            cov_c = float(mom.cov_c[anchor, anchor + dist])
            se_comb = DETERMINISTIC_SE
        elif opts.engine == "transfer":
            gcurve, ccurve = _transfer_curves(mn, sigma, m, 1, n // 2)
            ch = TransferChain(mn, sigma)
            f = LocalFunction.spin(anchor)
            g = LocalFunction.spin(anchor + dist)
            cov_g = ch.gce_covariance(f, g)
            cov_c = ch.ce_covariance(m, f, g)
            se_comb = DETERMINISTIC_SE
        else:
            gcfg = ChainConfig(seed=opts.seed, sweeps=opts.sweeps,
                               burn_in=opts.burn_in, chain_id=2 * idx)
            ccfg = ChainConfig(seed=opts.seed, sweeps=opts.sweeps,
                               burn_in=opts.burn_in, chain_id=2 * idx + 1)
            gb = run_gce_chain(mn, sigma, gcfg)
            cb = run_ce_chain(mn, m, ccfg)
            gcurve = covariance_curve(gb, anchor)
            ccurve = covariance_curve(cb, anchor)
            at = int(gcurve.distances.searchsorted(dist))
            cov_g, se_g = float(gcurve.cov[at]), float(gcurve.se[at])
            cov_c, se_c = float(ccurve.cov[at]), float(ccurve.se[at])
            se_comb = math.hypot(se_g, se_c)
        for tag, curve in (("gce", gcurve), ("ce", ccurve)):
            write_csv(outdir / f"curve_{tag}_n{n}.csv", ["d", "cov", "se", "n"],
                      curve.rows())
        gfit = fit_decay(gcurve)
        cfit = fit_decay(ccurve)
        fit_rows.append((n, "gce") + gfit.row())
        fit_rows.append((n, "ce") + cfit.row())
        gap = abs(cov_c - cov_g)
        gap_rows.append((n, cov_g, cov_c, gap, se_comb))
        gaps.append(gap)
        gap_ses.append(se_comb)
        checks.append(Check(
            f"gce_plateau_n{n}",
            gfit.ok and abs(gfit.plateau) <= p_band,
            gfit.plateau if gfit.ok else "no-fit",
            f"|p| <= {p_band:g}",
        ))
        if prev_p is not None and cfit.ok and cfit.plateau != 0.0:
            ratio = prev_p / cfit.plateau
            checks.append(Check(f"ce_plateau_ratio_n{n}", lo <= ratio <= hi,
                                ratio, f"ratio in [{lo:g}, {hi:g}]"))
        prev_p = cfit.plateau if cfit.ok else None
    write_csv(outdir / "fits.csv",
              ["n", "ensemble", "A", "c", "p", "resid", "window_lo", "window_hi"], fit_rows)
    write_csv(outdir / "gaps.csv", ["n", "cov_gce", "cov_ce", "gap", "se"], gap_rows)
    if mcmc:
        ok = True
        for k in range(1, len(gaps)):
            if gaps[k] - gaps[k - 1] > 3.0 * math.hypot(gap_ses[k], gap_ses[k - 1]):
                ok = False
        expected = "gap non-increasing within 3 SE"
    else:
        ok = _floor_decreasing(gaps, floor)
        expected = "fixed-distance gap strictly decreasing"
    checks.append(Check("gap_decreasing", ok,
                        ",".join(f"{g:.3e}" for g in gaps), expected))
    return checks


def cmd_free_energy(cfg, opts, outdir):
    model = model_from_dict(cfg)
    checks = []
    bands = opts.bands
    lo, hi = bands["gap_ratio_band"]
    floor = bands["epsilon_floor"]
    h = 1e-3
    rows = []
    reports = []
    for n in opts.n_list:
        mn = resize(model, n)
        sigma, m = _sigma_and_mean(mn, opts.engine, opts.seed, opts.sweeps, opts.burn_in)
        if opts.engine == "oracle":
            a_g, a_c = [], []
            for s in (sigma - h, sigma, sigma + h):
                a_g.append(gaussian.free_energy_gce(mn, s))
                a_c.append(gaussian.free_energy_ce(mn, s))
            rep = estimators.FreeEnergyReport(
                a_g[1], a_c[1],
                (a_g[2] - a_g[0]) / (2 * h), (a_c[2] - a_c[0]) / (2 * h),
                (a_g[2] - 2 * a_g[1] + a_g[0]) / h**2,
                (a_c[2] - 2 * a_c[1] + a_c[0]) / h**2,
            )
        else:
            rep = TransferChain(mn, sigma).free_energy_report(h=h)
        rows.append((n,) + rep.row())
        reports.append((n, rep))
        checks.append(Check(f"convex_n{n}", rep.d2_gce > 0, rep.d2_gce,
                            "d2 A_gce / d sigma2 > 0"))
    write_csv(outdir / "report.csv",
              ["n", "a_gce", "a_ce", "d1_gce", "d1_ce", "d2_gce", "d2_ce",
               "gap", "d1_gap", "d2_gap"], rows)
    for (n0, r0), (n1, r1) in zip(reports, reports[1:]):
        if n1 == 2 * n0 and r1.gap > floor:
            ratio = r0.gap / r1.gap
            checks.append(Check(f"gap_ratio_{n0}_to_{n1}", lo <= ratio <= hi,
                                ratio, f"ratio in [{lo:g}, {hi:g}]"))
    d1gaps = [r.d1_gap for _, r in reports]
    d2gaps = [r.d2_gap for _, r in reports]
    checks.append(Check("d1_gap_decreasing", _floor_decreasing(d1gaps, floor),
                        ",".join(f"{g:.3e}" for g in d1gaps), "decreasing or below floor"))
    checks.append(Check("d2_gap_decreasing", _floor_decreasing(d2gaps, floor),
                        ",".join(f"{g:.3e}" for g in d2gaps), "decreasing or below floor"))
    # convexity across the sigma grid at the largest window
    mn = resize(model, max(opts.n_list))
    conv_rows = []
    conv_ok = True
    for s in bands["sigma_grid"]:
        if opts.engine == "oracle":
            v = gaussian.total_variance_over_n(mn)
        else:
            v = TransferChain(mn, float(s)).total_variance_over_n()
        conv_rows.append((float(s), v))
        conv_ok = conv_ok and v > 0
    write_csv(outdir / "convexity.csv", ["sigma", "d2_a_gce"], conv_rows)
    checks.append(Check("convex_sigma_grid", conv_ok,
                        min(v for _, v in conv_rows), "variance positive on the grid"))
    return checks


def cmd_uniqueness(cfg, opts, outdir):
    model = model_from_dict(cfg)
    checks = []
    bands = opts.bands
    floor = bands["epsilon_floor"]
    if model.window.mean_spin is not None:
        m = float(model.window.mean_spin)
    else:
        raise ConfigError("uniqueness needs a canonical window (mean_spin)")
    radii = tuple(int(r) for r in opts.n_list)
    rows = []
    if opts.engine == "oracle":
        deltas = gaussian.boundary_sensitivity(model, m, radii)
        for r, dlt in zip(radii, deltas):
            rows.append((r, float(dlt), DETERMINISTIC_SE))
        curve = CorrelationCurve(np.array(radii, dtype=float), np.array(deltas),
                                 np.full(len(radii), DETERMINISTIC_SE),
                                 np.ones(len(radii), dtype=int))
        fit = fit_decay(curve, min_signal=min(4, len(radii)))
        write_csv(outdir / "fit.csv",
                  ["A", "c", "p", "resid", "window_lo", "window_hi"], [fit.row()])
        checks.append(Check("exponential_rate", fit.ok and fit.rate > 0,
                            fit.rate if fit.ok else "no-fit", "fitted rate > 0"))
        checks.append(Check("decreasing", _floor_decreasing(list(deltas), floor),
                            ",".join(f"{d:.3e}" for d in deltas),
                            "strictly decreasing in r"))
        # identical boundaries leave no trace
        bc = (2.0,) * model.interaction.rng
        n0 = 2 * radii[0] - 1
        mw1 = resize(model, n0, mean_spin=m, boundary_left=bc, boundary_right=bc)
        mw2 = resize(model, n0, mean_spin=m, boundary_left=bc, boundary_right=bc)
        same = float(np.abs(gaussian.ce_moments(mw1, m).mean_c
                            - gaussian.ce_moments(mw2, m).mean_c).max())
        checks.append(Check("identical_boundaries", same <= 1e-12, same,
                            "identical boundaries give zero difference"))
    else:
        deltas = []
        ses = []
        for idx, r in enumerate(radii):
            n = 2 * r - 1
            bc_hi = (2.0,) * model.interaction.rng
            bc_lo = (-2.0,) * model.interaction.rng
            ma = resize(model, n, mean_spin=m, boundary_left=bc_hi, boundary_right=bc_hi)
            mb = resize(model, n, mean_spin=m, boundary_left=bc_lo, boundary_right=bc_lo)
            ccfg = ChainConfig(seed=opts.seed, sweeps=opts.sweeps,
                               burn_in=opts.burn_in, chain_id=idx)
            ba, bb = two_boundary_ce_pair(ma, mb, m, ccfg)
            ea, sa, _ = mean_with_error(ba.site_series(r - 1))
            eb, sb, _ = mean_with_error(bb.site_series(r - 1))
            deltas.append(abs(ea - eb))
            ses.append(math.hypot(sa, sb))
            rows.append((r, deltas[-1], ses[-1]))
        drop = deltas[0] - deltas[-1]
        noise = 3.0 * math.hypot(ses[0], ses[-1])
        checks.append(Check("decrease_outside_noise", drop > noise, drop,
                            f"delta(r={radii[0]}) - delta(r={radii[-1]}) > {noise:.3e}"))
    write_csv(outdir / "uniqueness.csv", ["r", "delta", "se"], rows)
    return checks


def cmd_moment_variance_suite(cfg, opts, outdir):
    model = model_from_dict(cfg)
    checks = []
    bands = opts.bands
    vlo, vhi = bands["variance_band"]
    b2, b4, b6 = bands["moment_bands"]
    blk_band = bands["block4_band"]
    blk_ratio = bands["block_ratio_max"]
    var_rows, mom_rows, blk_rows = [], [], []
    var_ok = mom_ok = blk_ok = ratio_ok = True
    worst = {"var": None, "mom": None, "blk": None, "ratio": None}

    def bump(key, val):
        if worst[key] is None or abs(val) > abs(worst[key]):
            worst[key] = val

    for n in opts.n_list:
        mn = resize(model, n)
        for s in bands["sigma_grid"]:
            s = float(s)
            mid = n // 2
            if opts.engine == "oracle":
                mom = gaussian.gce_moments(mn, s)
                v = gaussian.total_variance_over_n(mn)
                vmid = float(mom.cov[mid, mid])
                k2, k4, k6 = (_gaussian_central_even(vmid, k) for k in (2, 4, 6))
            else:
                ch = TransferChain(mn, s)
                v = ch.total_variance_over_n()
                cm = ch.block_central_moments([mid], max_power=4)
                k2, k4 = float(cm[2]), float(cm[4])
                mu = ch.site_expectations()[mid]
                k6 = ch.gce_expectation(
                    LocalFunction.site(mid, lambda z, _mu=mu: (z - _mu) ** 6)
                )
            var_rows.append((n, s, v))
            var_ok = var_ok and vlo <= v <= vhi
            bump("var", v)
            mom_rows.append((n, s, k2, k4, k6))
            if not (k2 <= b2 and k4 <= b4 and k6 <= b6):
                mom_ok = False
            bump("mom", max(k2 / b2, k4 / b4, k6 / b6))
            prev_val = None
            for blk in (2, 4, 8, 16):
                if blk > n // 2:
                    break
                sites = range(mid - blk // 2, mid - blk // 2 + blk)
                if opts.engine == "oracle":
                    sub = np.ix_(list(sites), list(sites))
                    svar = float(mom.cov[sub].sum())
                    m4 = 3.0 * svar * svar
                else:
                    m4 = float(ch.block_central_moments(sites, max_power=4)[4])
                stat = m4 / blk**2
                ratio = float("nan") if prev_val is None else m4 / prev_val
                blk_rows.append((n, s, blk, stat, ratio))
                blk_ok = blk_ok and stat <= blk_band
                bump("blk", stat)
                if prev_val is not None:
                    ratio_ok = ratio_ok and (m4 / prev_val) <= blk_ratio
                    bump("ratio", m4 / prev_val)
                prev_val = m4
    write_csv(outdir / "variance_table.csv", ["n", "sigma", "value"], var_rows)
    write_csv(outdir / "moments_table.csv", ["n", "sigma", "k2", "k4", "k6"], mom_rows)
    write_csv(outdir / "block4_table.csv",
              ["n", "sigma", "block", "value", "ratio_prev"], blk_rows)
    checks.append(Check("variance_band", var_ok, worst["var"],
                        f"(1/n) var in [{vlo:g}, {vhi:g}]"))
    checks.append(Check("moment_bands", mom_ok, worst["mom"],
                        f"k2 <= {b2:g}, k4 <= {b4:g}, k6 <= {b6:g} (value = worst ratio)"))
    checks.append(Check("block4_band", blk_ok, worst["blk"],
                        f"E(sum)^4 / |A|^2 <= {blk_band:g}"))
    checks.append(Check("block4_doubling", ratio_ok,
                        worst["ratio"] if worst["ratio"] is not None else "n/a",
                        f"raw fourth moment grows at most {blk_ratio:g}x per block doubling"))
    return checks


DISPATCH = {
    "oracle-check": cmd_oracle_check,
    "equivalence-observables": cmd_equivalence_observables,
    "correlation-equivalence": cmd_correlation_equivalence,
    "free-energy": cmd_free_energy,
    "uniqueness": cmd_uniqueness,
    "moment-variance-suite": cmd_moment_variance_suite,
}


# ---- entry point ------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="canon-lattice",
        description="Verification experiments for 1-d continuous-spin lattices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="model TOML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=20260819)
        p.add_argument("--engine", choices=("oracle", "transfer", "mcmc"), default=None)
        p.add_argument("--n-list", default=None,
                       help="comma-separated window sizes (radii for uniqueness)")
        p.add_argument("--sweeps", type=int, default=20000)
        p.add_argument("--burn-in", type=int, default=1000)
    p = sub.add_parser("rerun")
    p.add_argument("--manifest", required=True, help="manifest.json of a previous run")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _run(command, cfg, opts, outdir, config_path):
    outdir.mkdir(parents=True, exist_ok=True)
    model = model_from_dict(cfg)
    manifest = {
        "command": command,
        "config": cfg,
        "config_path": str(config_path),
        "digest": model_digest(model),
        "engine": opts.engine,
        "seed": opts.seed,
        "n_list": list(opts.n_list),
        "sweeps": opts.sweeps,
        "burn_in": opts.burn_in,
        "version": __version__,
    }
    _write_json(outdir / "manifest.json", manifest)
    checks = DISPATCH[command](cfg, opts, outdir)
    exit_code = EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    summary = {
        "command": command,
        "engine": opts.engine,
        "status": "ok" if exit_code == EXIT_OK else "fail",
        "exit_code": exit_code,
        "checks": [
            {"name": c.name, "passed": c.passed,
             "value": c.value if isinstance(c.value, str) else float(c.value),
             "expected": c.expected}
            for c in checks
        ],
    }
    _write_json(outdir / "summary.json", summary)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        val = c.value if isinstance(c.value, str) else f"{float(c.value):.6g}"
        print(f"[{status}] {c.name}: {val} ({c.expected})")
    return exit_code


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command == "rerun":
            with open(args.manifest) as fh:
                manifest = json.load(fh)
            command = manifest["command"]
            cfg = manifest["config"]
            opts = Opts(
                engine=manifest["engine"],
                seed=int(manifest["seed"]),
                n_list=tuple(manifest["n_list"]),
                sweeps=int(manifest["sweeps"]),
                burn_in=int(manifest["burn_in"]),
                bands=_resolve_bands(cfg, command),
            )
            return _run(command, cfg, opts, Path(args.out), manifest["config_path"])
        cfg = _toml_load(args.config)
        model = model_from_dict(cfg)
        engine = _pick_engine(model, args.command, args.engine)
        if args.n_list:
            try:
                n_list = tuple(int(v) for v in args.n_list.split(","))
            except ValueError:
                raise ConfigError(f"invalid n list {args.n_list!r}") from None
            if not n_list or any(v < 1 for v in n_list):
                raise ConfigError(f"invalid n list {args.n_list!r}")
        else:
            n_list = DEFAULT_NS[args.command]
            if engine == "mcmc":
                n_list = DEFAULT_NS_MCMC.get(args.command, n_list)
        opts = Opts(
            engine=engine,
            seed=args.seed,
            n_list=n_list,
            sweeps=args.sweeps,
            burn_in=args.burn_in,
            bands=_resolve_bands(cfg, args.command),
        )
        return _run(args.command, cfg, opts, Path(args.out), args.config)
    except (ConfigError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        try:
            outdir = Path(args.out)
            outdir.mkdir(parents=True, exist_ok=True)
            _write_json(outdir / "summary.json", {
                "command": getattr(args, "command", "?"),
                "status": "error",
                "error": f"{type(exc).__name__}: {exc}",
                "exit_code": EXIT_CONFIG,
            })
        except OSError:
            pass
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

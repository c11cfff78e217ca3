"""Acceptance gate: the twelve verification criteria, one test and verdict line each.

Every test computes the target quantity through independent routes at the
stated tolerance and prints a single [PASS]/[FAIL] line with the measured
values, so `pytest -v` gives one verdict line per criterion.
"""

import json
import math
import shutil
import subprocess
import time

import numpy as np
import pytest

from canon_lattice import (
    ChainConfig,
    CorrelationCurve,
    LocalFunction,
    TransferChain,
    boundary_sensitivity,
    ce_moments,
    conditioned_moments_dense,
    curve_from_matrix,
    density_at_zero,
    fit_decay,
    free_energy_ce,
    free_energy_gce,
    gce_moments,
    loglinear_rate,
    mean_with_error,
    run_ce_chain,
    run_gce_chain,
    sigma_of_m,
    sigma_of_m_general,
    total_variance_over_n,
    two_boundary_ce_pair,
)
from canon_lattice.model import resize

from conftest import CONFIG_DIR, build_model, double_well, iid_model, reference_gaussian


def verdict(ok, name, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def gauss_r1(n=16):
    return build_model(kind="zero", n=n, band=(-0.3,), delta=0.4)


# --------------------------------------------------------------------------


def test_c01_rank_one_identity_against_dense_conditioning():
    """Conditioned covariance equals the rank-1-corrected free covariance at N=64."""
    model = reference_gaussian(64)
    m = 0.3
    sigma = sigma_of_m(model, m)
    free = gce_moments(model, sigma)
    s1 = free.cov @ np.ones(64)
    rank1 = free.cov - np.outer(s1, s1) / float(s1.sum())
    dense = conditioned_moments_dense(model, m, sigma=sigma)
    resid = float(np.abs(dense.cov_c - rank1).max())
    verdict(resid <= 1e-10, "c01_rank_one_identity", f"max residual {resid:.3e} (<= 1e-10)")


def test_c02_symmetric_exchangeable_pair_covariance():
    """Uncoupled 4-site window conditioned on its mean: cov(1,2) = -1/4 = -var/(N-1)."""
    mom = ce_moments(iid_model(4), m=0.7)
    cov12 = float(mom.cov_c[1, 2])
    var1 = float(mom.cov_c[1, 1])
    err_const = abs(cov12 + 0.25)
    err_var = abs(cov12 + var1 / 3.0)
    verdict(
        err_const <= 1e-12 and err_var <= 1e-12,
        "c02_symmetric_identity",
        f"cov(1,2) = {cov12:.15f}, |+0.25| = {err_const:.2e}, |+var/3| = {err_var:.2e} (<= 1e-12)",
    )


def test_c03_grand_canonical_covariance_decays_exponentially():
    """Log-linear fit of |cov| vs distance at N=128: rate >= 0.1, residual <= 1% of signal."""
    model = reference_gaussian(128)
    mom = gce_moments(model, sigma_of_m(model, 0.3))
    curve = curve_from_matrix(mom.cov, anchor=1)
    dmax = float(curve.distances[np.abs(curve.cov) > 1e-13].max())
    rate, resid = loglinear_rate(curve, window=(1.0, dmax))
    verdict(
        rate >= 0.1 and resid <= 1e-2,
        "c03_gce_exponential_decay",
        f"rate {rate:.4f} (>= 0.1), residual/signal {resid:.2e} (<= 1e-2), window d <= {dmax:.0f}",
    )


def test_c04_canonical_plateau_scales_as_inverse_volume():
    """|cov_ce| at distance N/2 halves when N doubles from 64 to 128."""
    plateaus = {}
    for n in (64, 128):
        mom = ce_moments(reference_gaussian(n), m=0.3)
        plateaus[n] = abs(float(mom.cov_c[n // 4, n // 4 + n // 2]))
    ratio = plateaus[64] / plateaus[128]
    verdict(
        1.8 <= ratio <= 2.2,
        "c04_ce_volume_correction",
        f"plateau(64)/plateau(128) = {ratio:.5f} (in [1.8, 2.2])",
    )


def test_c05_fourier_route_reproduces_gaussian_closed_forms():
    """Transfer-engine g(0) and canonical free energy match the oracle at N=16."""
    model = gauss_r1(16)
    m = 0.3
    sigma = sigma_of_m(model, m)
    chain = TransferChain(model, sigma)
    g0_err = abs(chain.density_at_zero(m) - density_at_zero(model))
    ace_err = abs(chain.free_energy_ce(m) - free_energy_ce(model, sigma))
    gap = chain.free_energy_ce(m) - chain.free_energy_gce()
    cramer_err = abs(gap - math.log(chain.density_at_zero(m)) / 16.0)
    ok = g0_err <= 1e-6 and ace_err <= 1e-6 and cramer_err <= 1e-6
    verdict(
        ok,
        "c05_cramer_identity",
        f"|g0 - oracle| = {g0_err:.2e}, |A_ce - oracle| = {ace_err:.2e}, "
        f"|gap - ln g0 / N| = {cramer_err:.2e} (all <= 1e-6)",
    )


def _dw_reports():
    reports = []
    for n in (8, 16, 32):
        model = double_well(n)
        sigma = sigma_of_m_general(model, 0.3, engine="transfer")
        reports.append((n, TransferChain(model, sigma)))
    return reports


def test_c06_free_energy_gap_halves_with_volume_on_double_well():
    """Gap ratios across doublings in [1.6, 2.4]; derivative gaps strictly decreasing."""
    rows = [(n, ch.free_energy_report()) for n, ch in _dw_reports()]
    gaps = [r.gap for _, r in rows]
    d1 = [r.d1_gap for _, r in rows]
    d2 = [r.d2_gap for _, r in rows]
    r01, r12 = gaps[0] / gaps[1], gaps[1] / gaps[2]
    ok = (
        1.6 <= r01 <= 2.4
        and 1.6 <= r12 <= 2.4
        and d1[0] > d1[1] > d1[2]
        and d2[0] > d2[1] > d2[2]
    )
    verdict(
        ok,
        "c06_free_energy_equivalence_trend",
        f"gap ratios {r01:.5f}, {r12:.5f} (in [1.6, 2.4]); "
        f"d1 gaps {d1[0]:.3e} > {d1[1]:.3e} > {d1[2]:.3e}; "
        f"d2 gaps {d2[0]:.3e} > {d2[1]:.3e} > {d2[2]:.3e}",
    )


def test_c07_cubed_observable_gap_shrinks_on_double_well():
    """|E_gce[f] - E_ce[f]| for the cubed midpoint spin decreases, slope <= -0.4."""
    m = 0.3
    gaps, ns = [], []
    for n, chain in _dw_reports():
        f = LocalFunction.centered_cube(n // 2, m)
        gaps.append(abs(chain.gce_expectation(f) - chain.ce_expectation(m, f)))
        ns.append(n)
    slope = float(np.polyfit(np.log(ns), np.log(gaps), 1)[0])
    ok = gaps[0] > gaps[1] > gaps[2] and slope <= -0.4
    verdict(
        ok,
        "c07_observable_equivalence",
        f"gaps {gaps[0]:.4e} > {gaps[1]:.4e} > {gaps[2]:.4e}, log-log slope {slope:.4f} (<= -0.4)",
    )


def test_c08_field_derivatives_match_their_statistical_meanings():
    """dA/dsigma = mean spin (1e-5), d2A/dsigma2 = var(sum)/N (1e-4), tilt residual 1e-5."""
    model = double_well(16)
    sigma = sigma_of_m_general(model, 0.3, engine="transfer")
    chain = TransferChain(model, sigma)
    rep = chain.free_energy_report()
    d1_err = abs(rep.d1_gce - chain.mean_spin())
    d2_err = abs(rep.d2_gce - chain.total_variance_over_n())
    tilt1 = chain.modified_tilt_check(LocalFunction.spin(4), order=1)
    tilt2 = chain.modified_tilt_check(LocalFunction.spin(4), LocalFunction.spin(11), order=2)
    ok = d1_err <= 1e-5 and d2_err <= 1e-4 and tilt1 <= 1e-5 and tilt2 <= 1e-5
    verdict(
        ok,
        "c08_derivative_identities",
        f"|d1 - mean| = {d1_err:.2e} (<= 1e-5), |d2 - var/N| = {d2_err:.2e} (<= 1e-4), "
        f"tilt residuals {tilt1:.2e}, {tilt2:.2e} (<= 1e-5)",
    )


def test_c09_mcmc_matches_oracle_moments_with_exact_constraint():
    """20 tracked moments within 3 SE (>= 18), exact mean pin, under the time cap."""
    t0 = time.monotonic()
    model = reference_gaussian(32)
    m = 0.3
    sigma = sigma_of_m(model, m)
    free = gce_moments(model, sigma)
    cond = ce_moments(model, m=m, sigma=sigma)
    cfg = ChainConfig(seed=20260819, sweeps=20_000, burn_in=1_000)
    gce_batch = run_gce_chain(model, sigma, cfg)
    ce_batch = run_ce_chain(model, m, ChainConfig(seed=20260820, sweeps=20_000, burn_in=1_000))

    stats = []  # (label, series, truth)
    gs = gce_batch.samples
    for i in (0, 8, 16, 24, 31):
        stats.append((f"gce mean x{i}", gs[:, i], free.mean[i]))
    stats.append(("gce var x16", (gs[:, 16] - free.mean[16]) ** 2, free.cov[16, 16]))
    for j in (17, 18):
        stats.append(
            (
                f"gce cov(16,{j})",
                (gs[:, 16] - free.mean[16]) * (gs[:, j] - free.mean[j]),
                free.cov[16, j],
            )
        )
    stats.append(("gce mean spin", gs.mean(axis=1), m))
    total_dev = gs.sum(axis=1) - free.mean.sum()
    stats.append(("gce var(sum)/N", total_dev**2 / 32.0, total_variance_over_n(model)))

    cs = ce_batch.samples
    for i in (0, 8, 16, 31):
        stats.append((f"ce mean x{i}", cs[:, i], cond.mean_c[i]))
    stats.append(("ce var x16", (cs[:, 16] - cond.mean_c[16]) ** 2, cond.cov_c[16, 16]))
    stats.append(("ce var x0", (cs[:, 0] - cond.mean_c[0]) ** 2, cond.cov_c[0, 0]))
    for i, j in ((16, 17), (16, 18), (0, 1), (8, 24)):
        stats.append(
            (
                f"ce cov({i},{j})",
                (cs[:, i] - cond.mean_c[i]) * (cs[:, j] - cond.mean_c[j]),
                cond.cov_c[i, j],
            )
        )

    assert len(stats) == 20
    hits, misses = 0, []
    for label, series, truth in stats:
        est, se, _ = mean_with_error(np.asarray(series))
        z = abs(est - float(truth)) / se if se > 0 else 0.0
        if z <= 3.0:
            hits += 1
        else:
            misses.append(f"{label} (z = {z:.2f})")
    drift = float(np.abs(cs.mean(axis=1) - m).max())
    elapsed = time.monotonic() - t0
    ok = hits >= 18 and drift <= 1e-9 and elapsed <= 300.0
    verdict(
        ok,
        "c09_mcmc_exactness",
        f"{hits}/20 moments within 3 SE (>= 18)"
        + (f", misses: {', '.join(misses)}" if misses else "")
        + f"; constraint drift {drift:.2e} (<= 1e-9); {elapsed:.1f} s (<= 300)",
    )


def test_c10_variance_and_moment_bounds_hold_across_sizes_and_fields():
    """var(sum)/N in [0.1, 10]; central 4th <= 10; block 4th / |A|^2 <= 50."""
    worst = {"v_lo": np.inf, "v_hi": 0.0, "k4": 0.0, "blk": 0.0}

    for n in (8, 16, 32, 64, 128):
        model = reference_gaussian(n)
        v = total_variance_over_n(model)  # field-independent in the Gaussian case
        worst["v_lo"], worst["v_hi"] = min(worst["v_lo"], v), max(worst["v_hi"], v)
        cov = gce_moments(model, 0.0).cov
        c = n // 2
        worst["k4"] = max(worst["k4"], 3.0 * cov[c, c] ** 2)
        for size in (4, 8):
            if size > n:
                continue
            blk = list(range(c - size // 2, c + size // 2))
            var_a = float(cov[np.ix_(blk, blk)].sum())
            worst["blk"] = max(worst["blk"], 3.0 * var_a**2 / size**2)

    for n in (8, 16, 32):
        for s in (-2.0, -1.0, 0.0, 1.0, 2.0):
            chain = TransferChain(double_well(n), sigma=s)
            v = chain.total_variance_over_n()
            worst["v_lo"], worst["v_hi"] = min(worst["v_lo"], v), max(worst["v_hi"], v)
            c = n // 2
            k4 = float(chain.block_central_moments([c], 4)[4])
            worst["k4"] = max(worst["k4"], k4)
            blk = list(range(c - 2, c + 2))
            m4 = float(chain.block_central_moments(blk, 4)[4])
            worst["blk"] = max(worst["blk"], m4 / 16.0)

    ok = 0.1 <= worst["v_lo"] and worst["v_hi"] <= 10.0 and worst["k4"] <= 10.0 and worst["blk"] <= 50.0
    verdict(
        ok,
        "c10_moment_variance_bands",
        f"var/N in [{worst['v_lo']:.4f}, {worst['v_hi']:.4f}] (in [0.1, 10]); "
        f"max central 4th {worst['k4']:.4f} (<= 10); max block 4th/|A|^2 {worst['blk']:.4f} (<= 50)",
    )


def test_c11_boundary_influence_fades_with_window_radius():
    """Oracle curve strictly decreasing with a positive rate; sampled drop beats noise."""
    model = reference_gaussian(16)
    radii = (4, 8, 16, 32)
    deltas = boundary_sensitivity(model, 0.3, radii)
    curve = CorrelationCurve(
        np.asarray(radii, dtype=float),
        deltas,
        np.full(len(radii), 1e-14),
        np.ones(len(radii), dtype=int),
    )
    fit = fit_decay(curve, min_signal=4)
    oracle_ok = bool(np.all(np.diff(deltas) < 0) and fit.ok and fit.rate > 0)

    m = 0.3
    drops = {}
    ses = {}
    for r in (4, 16):
        n = 2 * r - 1
        base = double_well(n)
        plus = resize(base, n, mean_spin=m, boundary_left=(2.0,), boundary_right=(2.0,))
        minus = resize(base, n, mean_spin=m, boundary_left=(-2.0,), boundary_right=(-2.0,))
        cfg = ChainConfig(seed=20260800 + r, sweeps=12_000, burn_in=800)
        bp, bm = two_boundary_ce_pair(plus, minus, m, cfg)
        ep, sp, _ = mean_with_error(bp.site_series(r - 1))
        em, sm, _ = mean_with_error(bm.site_series(r - 1))
        drops[r] = abs(ep - em)
        ses[r] = math.hypot(sp, sm)
    drop = drops[4] - drops[16]
    noise = 3.0 * math.hypot(ses[4], ses[16])
    mcmc_ok = drop > noise
    verdict(
        oracle_ok and mcmc_ok,
        "c11_uniqueness_mechanism",
        f"oracle deltas {np.array2string(deltas, precision=4)} strictly decreasing, "
        f"rate {fit.rate:.4f} (> 0); sampled drop {drop:.4f} > 3-SE noise {noise:.4f}",
    )


def test_c12_rerun_from_manifest_is_byte_identical(tmp_path):
    """Both a deterministic and a sampled experiment replay to identical CSV bytes."""
    cli = shutil.which("canon-lattice")
    if cli is None:
        pytest.skip("console script not installed")

    plans = [
        (
            "free-energy",
            ["--config", str(CONFIG_DIR / "double_well.toml"), "--n-list", "8,16"],
        ),
        (
            "uniqueness",
            ["--config", str(CONFIG_DIR / "double_well.toml"), "--engine", "mcmc"],
        ),
    ]
    compared = []
    for command, args in plans:
        first = tmp_path / f"{command}-a"
        again = tmp_path / f"{command}-b"
        r1 = subprocess.run(
            [cli, command, *args, "--out", str(first)], capture_output=True, text=True, timeout=600
        )
        assert r1.returncode == 0, r1.stdout + r1.stderr
        r2 = subprocess.run(
            [cli, "rerun", "--manifest", str(first / "manifest.json"), "--out", str(again)],
            capture_output=True,
            text=True,
            timeout=600,
        )
        assert r2.returncode == r1.returncode, r2.stdout + r2.stderr
        for path in sorted(first.glob("*.csv")):
            same = path.read_bytes() == (again / path.name).read_bytes()
            compared.append((f"{command}/{path.name}", same))
    ok = bool(compared) and all(same for _, same in compared)
    verdict(
        ok,
        "c12_manifest_reproducibility",
        f"{sum(s for _, s in compared)}/{len(compared)} CSVs byte-identical: "
        + ", ".join(name for name, _ in compared),
    )

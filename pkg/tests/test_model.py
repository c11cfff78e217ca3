"""Model layer: potentials, interaction validation, energy, conditionals, config IO."""

import dataclasses
import math

import numpy as np
import pytest

from canon_lattice import (
    ConfigError,
    Interaction,
    LatticeModel,
    Potential,
    SpinConfig,
    Window,
    load_model,
    model_from_dict,
    resize,
)
from canon_lattice.samplers import model_digest

from conftest import CONFIG_DIR, build_model, double_well, reference_gaussian


# ---------------------------------------------------------------- potentials


def test_zero_potential_vanishes_identically():
    pot = Potential(kind="zero")
    z = np.linspace(-5, 5, 11)
    assert np.all(pot.value(z) == 0.0)
    assert np.all(pot.derivative(z) == 0.0)
    assert pot.sup_norms() == (0.0, 0.0, 0.0)
    assert pot.minimum() == 0.0
    assert pot.is_zero


def test_cosine_potential_values_and_bounds():
    pot = Potential(kind="cosine", beta=1.5, omega=2.0)
    z = np.linspace(-3, 3, 7)
    assert np.allclose(pot.value(z), 1.5 * np.cos(2.0 * z), rtol=0, atol=1e-15)
    assert np.allclose(pot.derivative(z), -3.0 * np.sin(2.0 * z), rtol=0, atol=1e-15)
    sup, dsup, ddsup = pot.sup_norms()
    assert sup == 1.5 and dsup == 3.0 and ddsup == 6.0
    assert pot.minimum() == -1.5
    assert not pot.is_zero


def test_gaussian_bump_potential_is_negative_well():
    pot = Potential(kind="gaussian_bump", beta=2.0, width=0.5)
    z = np.linspace(-2, 2, 9)
    expect = -2.0 * np.exp(-(z**2) / (2 * 0.25))
    assert np.allclose(pot.value(z), expect, rtol=0, atol=1e-15)
    assert pot.sup_norms()[0] == 2.0
    assert pot.minimum() == -2.0
    # derivative peaks at |z| = width with magnitude beta/width * exp(-1/2)
    assert np.isclose(pot.sup_norms()[1], 2.0 / 0.5 * math.exp(-0.5), rtol=1e-12)


def test_unknown_potential_kind_rejected():
    with pytest.raises(ConfigError):
        Potential(kind="quartic")


# ---------------------------------------------------------------- interaction


def test_diagonal_dominance_accepts_slack_and_rejects_breach():
    Interaction(rng=2, band=(-0.15, -0.1), delta=0.5)  # 2*0.25 + 0.5 = 1.0, allowed
    with pytest.raises(ConfigError):
        Interaction(rng=2, band=(-0.2, -0.2), delta=0.25)  # 0.8 + 0.25 > 1
    with pytest.raises(ConfigError):
        Interaction(rng=1, band=(-0.3,), delta=0.0)  # margin must be positive


def test_band_length_must_match_range():
    with pytest.raises(ConfigError):
        Interaction(rng=2, band=(-0.1,), delta=0.5)


def test_coupling_lookup_by_distance():
    inter = Interaction(rng=2, band=(-0.15, -0.1), delta=0.5)
    assert inter.coupling(1) == -0.15
    assert inter.coupling(2) == -0.1
    assert inter.coupling(3) == 0.0
    assert inter.coupling(17) == 0.0


# ---------------------------------------------------------------- window


def test_window_rejects_both_ensemble_tags():
    with pytest.raises(ConfigError):
        Window(n=4, sigma=0.1, mean_spin=0.3)


def test_window_field_length_checked():
    with pytest.raises(ConfigError):
        Window(n=4, field=(1.0, 2.0))


# ---------------------------------------------------------------- energy


def _random_config(model, rng):
    return SpinConfig(spins=tuple(rng.normal(size=model.n)))


def test_energy_locality_distance_bound():
    """Perturbing one spin changes the energy only through spins within range R."""
    model = reference_gaussian(12)
    rng = np.random.default_rng(7)
    x = rng.normal(size=12)
    i, z = 6, 1.7
    x_pert = x.copy()
    x_pert[i] += z

    def delta(base):
        pert = base.copy()
        pert[i] += z
        return model.energy(SpinConfig(tuple(pert))) - model.energy(SpinConfig(tuple(base)))

    d0 = delta(x)
    # changing spins beyond distance R = 2 from site i leaves the delta unchanged
    far = x.copy()
    far[0] += 3.0
    far[1] -= 2.0
    far[9] += 5.0
    far[11] -= 1.0
    assert abs(delta(far) - d0) <= 1e-10 * max(1.0, abs(d0))
    # changing a neighbor within range does move it
    near = x.copy()
    near[i + 1] += 1.0
    assert abs(delta(near) - d0) > 1e-3


def test_gradient_matches_finite_differences():
    model = double_well(10)
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(10):
        x = rng.normal(size=10)
        grad = model.grad_energy(SpinConfig(tuple(x)))
        for i in (0, 4, 9):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (model.energy(SpinConfig(tuple(xp))) - model.energy(SpinConfig(tuple(xm)))) / (
                2 * h
            )
            assert abs(grad[i] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_boundary_entries_beyond_range_are_inert():
    """Extra boundary spins beyond distance R leave the energy bit-identical."""
    rng = np.random.default_rng(11)
    x = tuple(rng.normal(size=8))
    base = double_well(8, boundary_left=(0.7,), boundary_right=(-0.4,))
    padded = double_well(8, boundary_left=(0.7, 55.0, -3.0), boundary_right=(-0.4, 99.0))
    assert base.energy(SpinConfig(x)) == padded.energy(SpinConfig(x))
    assert np.array_equal(base.effective_field(), padded.effective_field())


def test_boundary_fold_in_uses_half_cross_term():
    """A boundary spin at distance 1 shifts the effective field by c1*y/2."""
    y = 2.0
    plain = double_well(6)
    with_bc = double_well(6, boundary_left=(y,))
    shift = with_bc.effective_field() - plain.effective_field()
    expect = np.zeros(6)
    expect[0] = 0.5 * (-0.3) * y
    assert np.allclose(shift, expect, rtol=0, atol=1e-15)


# ---------------------------------------------------------------- conditional


def test_site_conditional_center_matches_energy_quadratic():
    """For the zero potential the conditional is N(b_i, 1) with b_i read off the energy."""
    model = reference_gaussian(9)
    rng = np.random.default_rng(5)
    x = rng.normal(size=9)
    sigma = 0.4
    for i in (0, 4, 8):

        def phi(t):
            xt = x.copy()
            xt[i] = t
            return model.energy(SpinConfig(tuple(xt))) - sigma * t

        b, envelope = model.site_conditional(i, SpinConfig(tuple(x)), sigma)
        assert abs(b - (phi(-1.0) - phi(1.0)) / 2.0) <= 1e-10
        assert envelope == 1.0  # exp(0) for the zero potential


def test_site_conditional_envelope_bounds_acceptance():
    model = double_well(6)
    _, envelope = model.site_conditional(2, SpinConfig((0.0,) * 6), 0.0)
    assert np.isclose(envelope, np.exp(1.0), rtol=1e-12)
    with pytest.raises(IndexError):
        model.site_conditional(6, SpinConfig((0.0,) * 6), 0.0)


# ---------------------------------------------------------------- config IO


def test_load_model_from_shipped_config():
    model = load_model(CONFIG_DIR / "double_well.toml")
    assert model.n == 16
    assert model.potential.kind == "gaussian_bump"
    assert model.interaction.band == (-0.3,)
    assert model.window.mean_spin == 0.3


def test_model_from_dict_rejects_unknown_section_keys():
    with pytest.raises(ConfigError):
        model_from_dict(
            {
                "potential": {"kind": "zero", "bogus": 1},
                "interaction": {"range": 1, "band": [0.0], "delta": 0.9},
                "window": {"n": 4},
            }
        )
    with pytest.raises(ConfigError):
        model_from_dict(
            {
                "interaction": {"range": 1, "band": [0.0], "delta": 0.9, "extra": 2},
                "window": {"n": 4},
            }
        )


def test_resize_preserves_everything_but_the_window():
    model = double_well(16)
    grown = resize(model, 32, mean_spin=0.1, boundary_left=(2.0,), boundary_right=(2.0,))
    assert grown.n == 32
    assert grown.potential == model.potential
    assert grown.interaction == model.interaction
    assert grown.window.mean_spin == 0.1
    assert grown.window.boundary_left == (2.0,)


def test_model_digest_tracks_parameters():
    a = double_well(16)
    b = double_well(16)
    c = build_model(kind="gaussian_bump", n=16, band=(-0.3,), delta=0.4, beta=1.1, width=1.0)
    assert model_digest(a) == model_digest(b)
    assert model_digest(a) != model_digest(c)
    assert len(model_digest(a)) == 12


def test_model_is_frozen():
    model = double_well(4)
    with pytest.raises(dataclasses.FrozenInstanceError):
        model.potential = Potential(kind="zero")

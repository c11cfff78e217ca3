"""Shared model builders for the test suite."""

from pathlib import Path

import pytest

from canon_lattice import model_from_dict

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "canon_lattice" / "configs"


def build_model(
    kind="zero",
    n=16,
    band=(-0.15, -0.1),
    delta=0.5,
    beta=1.0,
    omega=1.0,
    width=1.0,
    mean_spin=0.3,
    sigma=None,
    field=(),
    boundary_left=(),
    boundary_right=(),
):
    """Assemble a LatticeModel from keyword arguments via the config loader."""
    pot = {"kind": kind}
    if kind == "cosine":
        pot.update(beta=beta, omega=omega)
    elif kind == "gaussian_bump":
        pot.update(beta=beta, width=width)
    win = {"n": n}
    if sigma is not None:
        win["sigma"] = sigma
    elif mean_spin is not None:
        win["mean_spin"] = mean_spin
    if field:
        win["field"] = list(field)
    if boundary_left:
        win["boundary_left"] = list(boundary_left)
    if boundary_right:
        win["boundary_right"] = list(boundary_right)
    return model_from_dict(
        {
            "potential": pot,
            "interaction": {"range": len(band), "band": list(band), "delta": delta},
            "window": win,
        }
    )


def reference_gaussian(n=64, **kw):
    """Range-2 reference band with the zero potential (oracle-solvable)."""
    return build_model(kind="zero", n=n, band=(-0.15, -0.1), delta=0.5, **kw)


def reference_cosine(n=64, **kw):
    """Range-2 reference band with the cosine bounded perturbation."""
    return build_model(kind="cosine", n=n, band=(-0.15, -0.1), delta=0.5, beta=1.0, omega=1.0, **kw)


def double_well(n=16, **kw):
    """Nearest-neighbor Gaussian-bump model (transfer-engine reference)."""
    return build_model(
        kind="gaussian_bump", n=n, band=(-0.3,), delta=0.4, beta=1.0, width=1.0, **kw
    )


def iid_model(n=4, **kw):
    """Uncoupled window: unit-diagonal interaction with an all-zero band."""
    return build_model(kind="zero", n=n, band=(0.0,), delta=0.9, **kw)


@pytest.fixture(scope="session")
def gauss64():
    return reference_gaussian(64)


@pytest.fixture(scope="session")
def dw16():
    return double_well(16)

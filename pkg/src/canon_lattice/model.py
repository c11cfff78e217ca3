"""Lattice model definition: single-site potential, coupling band, window.

The energy of a window configuration x_1..x_N with boundary values folded in is

    H(x) = sum_i [ psi(x_i) + (s_i + 0.5 * sum_{j outside} M_ij x_j) x_i ]
           + 0.5 * sum_{i != j inside} M_ij x_i x_j

with psi(z) = z^2/2 + psi_b(z) and a symmetric banded coupling M (unit
diagonal, translation invariant band c_1..c_R off the diagonal).  Boundary
spins act on the window only through a shift of the external field, carrying
the 0.5 factor on the cross terms verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigError",
    "Potential",
    "Interaction",
    "Window",
    "LatticeModel",
    "SpinConfig",
    "load_model",
    "model_from_dict",
    "resize",
]

MEAN_CONSTRAINT_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


@dataclass(frozen=True)
class Potential:
    """Bounded smooth perturbation psi_b of the quadratic single-site term.

    Parameters
    ----------
    kind : {"zero", "cosine", "gaussian_bump"}
        zero: psi_b = 0; cosine: psi_b(z) = beta*cos(omega*z);
        gaussian_bump: psi_b(z) = -beta*exp(-z^2/(2 w^2)), a dip in the
        potential and hence a Gaussian bump in the single-site density.
    beta : float
        Amplitude, >= 0.
    omega : float
        Frequency of the cosine, > 0.
    width : float
        Width w of the bump, > 0.
    """

    kind: str = "zero"
    beta: float = 0.0
    omega: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "cosine", "gaussian_bump"):
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if self.beta < 0:
            raise ConfigError("potential amplitude beta must be >= 0")
        if self.kind == "cosine" and self.omega <= 0:
            raise ConfigError("cosine frequency omega must be > 0")
        if self.kind == "gaussian_bump" and self.width <= 0:
            raise ConfigError("bump width must be > 0")

    def value(self, z):
        """psi_b(z), vectorized."""
        z = np.asarray(z, dtype=float)
        if self.kind == "zero" or self.beta == 0.0:
            return np.zeros_like(z)
        if self.kind == "cosine":
            return self.beta * np.cos(self.omega * z)
        return -self.beta * np.exp(-z * z / (2.0 * self.width**2))

    def derivative(self, z):
        """psi_b'(z), vectorized."""
        z = np.asarray(z, dtype=float)
        if self.kind == "zero" or self.beta == 0.0:
            return np.zeros_like(z)
        if self.kind == "cosine":
            return -self.beta * self.omega * np.sin(self.omega * z)
        w2 = self.width**2
        return self.beta * (z / w2) * np.exp(-z * z / (2.0 * w2))

    def sup_norms(self):
        """Closed-form upper bounds (|psi_b|, |psi_b'|, |psi_b''|) sup norms."""
        if self.kind == "zero" or self.beta == 0.0:
            return (0.0, 0.0, 0.0)
        if self.kind == "cosine":
            return (self.beta, self.beta * self.omega, self.beta * self.omega**2)
        w = self.width
        return (self.beta, self.beta / (w * np.exp(0.5)), self.beta / w**2)

    def minimum(self):
        """min_z psi_b(z), exact for all three families."""
        if self.kind == "zero" or self.beta == 0.0:
            return 0.0
        return -self.beta  # cosine at cos = -1, bump at z = 0

    @property
    def is_zero(self):
        return self.kind == "zero" or self.beta == 0.0


@dataclass(frozen=True)
class Interaction:
    """Translation-invariant symmetric coupling band M_{ij} = c_{|i-j|}.

    The diagonal is 1 and the band must leave a strict dominance margin:
    2*sum|c_k| + delta <= 1.  That margin makes the quadratic part of the
    energy uniformly convex, so every conditional update below is proper.
    """

    rng: int
    band: tuple
    delta: float

    def __post_init__(self):
        if self.rng < 1 or self.rng != int(self.rng):
            raise ConfigError("interaction range must be a positive integer")
        band = tuple(float(c) for c in self.band)
        object.__setattr__(self, "band", band)
        if len(band) != self.rng:
            raise ConfigError(f"band needs {self.rng} coefficients, got {len(band)}")
        if self.delta <= 0:
            raise ConfigError("dominance margin delta must be > 0")
        if 2.0 * sum(abs(c) for c in band) + self.delta > 1.0 + 1e-15:
            total = 2.0 * sum(abs(c) for c in band) + self.delta
            raise ConfigError(
                f"diagonal dominance violated: 2*sum|c_k| + delta = {total:.6g} > 1"
            )

    def coupling(self, dist):
        """M_{ij} for |i-j| = dist (0 for dist = 0 off-diagonal convention)."""
        if 1 <= dist <= self.rng:
            return self.band[dist - 1]
        return 0.0


@dataclass(frozen=True)
class Window:
    """Finite window 1..n with external field, boundary values, and ensemble tag.

    boundary_left[k] is the spin at site -k (k = 0 is the site adjacent to 1),
    boundary_right[k] the spin at site n+1+k.  Entries beyond distance R from
    the window never enter the energy; missing entries count as 0.
    Exactly one of sigma (grand canonical tilt) or mean_spin (canonical
    constraint) may be set; either may also be left to the caller.
    """

    n: int
    field: tuple = ()
    boundary_left: tuple = ()
    boundary_right: tuple = ()
    sigma: float | None = None
    mean_spin: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("window size n must be >= 1")
        fld = tuple(float(s) for s in self.field)
        if not fld:
            fld = (0.0,) * self.n
        if len(fld) != self.n:
            raise ConfigError(f"field needs {self.n} entries, got {len(fld)}")
        object.__setattr__(self, "field", fld)
        object.__setattr__(
            self, "boundary_left", tuple(float(v) for v in self.boundary_left)
        )
        object.__setattr__(
            self, "boundary_right", tuple(float(v) for v in self.boundary_right)
        )
        if self.sigma is not None and self.mean_spin is not None:
            raise ConfigError("set sigma or mean_spin, not both")


@dataclass(frozen=True)
class SpinConfig:
    """One window configuration, optionally tagged with a mean-spin constraint."""

    spins: np.ndarray
    constrained: bool = False
    mean_spin: float = 0.0

    def __post_init__(self):
        spins = np.asarray(self.spins, dtype=float)
        object.__setattr__(self, "spins", spins)
        if self.constrained:
            drift = abs(spins.mean() - self.mean_spin)
            if drift > MEAN_CONSTRAINT_TOL:
                raise ValueError(
                    f"constrained configuration violates mean spin: drift {drift:.3e}"
                )

    def __len__(self):
        return len(self.spins)


@dataclass(frozen=True)
class LatticeModel:
    """Potential + interaction + window, with the energy and its local pieces."""

    potential: Potential
    interaction: Interaction
    window: Window
    _stilde: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_stilde", self._effective_field())

    @property
    def n(self):
        return self.window.n

    @property
    def rng(self):
        return self.interaction.rng

    def _effective_field(self):
        """Field with boundary cross terms folded in (0.5 factor verbatim)."""
        n, R = self.window.n, self.interaction.rng
        s = np.array(self.window.field, dtype=float)
        left, right = self.window.boundary_left, self.window.boundary_right
        for i in range(n):  # site i+1 in 1-based terms
            for k in range(1, R + 1):
                c = self.interaction.band[k - 1]
                jl = i - k  # 0-based; boundary when < 0
                if jl < 0 and -jl - 1 < len(left):
                    s[i] += 0.5 * c * left[-jl - 1]
                jr = i + k
                if jr >= n and jr - n < len(right):
                    s[i] += 0.5 * c * right[jr - n]
        return s

    def effective_field(self):
        """Per-site field s~_i = s_i + 0.5*sum_{j outside, |j-i|<=R} M_ij x_j."""
        return self._stilde.copy()

    def energy(self, config):
        """Window energy H(x) including folded boundary terms."""
        x = config.spins if isinstance(config, SpinConfig) else np.asarray(config, float)
        if len(x) != self.n:
            raise ValueError(f"configuration has {len(x)} spins, window has {self.n}")
        psi = 0.5 * x @ x + self.potential.value(x).sum()
        e = psi + self._stilde @ x
        for k, c in enumerate(self.interaction.band, start=1):
            if k < self.n and c != 0.0:
                e += c * (x[:-k] @ x[k:])
        return float(e)

    def grad_energy(self, config):
        """Gradient of the energy: psi'(x_i) + s~_i + sum_j M_ij x_j."""
        x = config.spins if isinstance(config, SpinConfig) else np.asarray(config, float)
        if len(x) != self.n:
            raise ValueError(f"configuration has {len(x)} spins, window has {self.n}")
        g = x + self.potential.derivative(x) + self._stilde
        for k, c in enumerate(self.interaction.band, start=1):
            if k < self.n and c != 0.0:
                g[:-k] += c * x[k:]
                g[k:] += c * x[:-k]
        return g

    def site_conditional(self, i, config, sigma):
        """Single-site conditional parameters given the rest of the window.

        Returns (b_i, envelope) where the conditional density of x_i is
        proportional to exp(-(x_i - b_i)^2/2 - psi_b(x_i)) and envelope
        = exp(|psi_b|_sup) bounds the rejection-sampling ratio.
        """
        if not 0 <= i < self.n:
            raise IndexError(f"site {i} outside window of size {self.n}")
        x = config.spins if isinstance(config, SpinConfig) else np.asarray(config, float)
        acc = 0.0
        for k, c in enumerate(self.interaction.band, start=1):
            if c == 0.0:
                continue
            if i - k >= 0:
                acc += c * x[i - k]
            if i + k < self.n:
                acc += c * x[i + k]
        b = sigma - self._stilde[i] - acc
        return float(b), float(np.exp(self.potential.sup_norms()[0]))


def _toml_load(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def model_from_dict(cfg):
    """Build a LatticeModel from a parsed config mapping."""
    try:
        pot_cfg = dict(cfg.get("potential", {"kind": "zero"}))
        int_cfg = dict(cfg["interaction"])
        win_cfg = dict(cfg["window"])
    except KeyError as exc:
        raise ConfigError(f"missing config section {exc}") from None
    potential = Potential(
        kind=pot_cfg.pop("kind", "zero"),
        beta=pot_cfg.pop("beta", 0.0),
        omega=pot_cfg.pop("omega", 1.0),
        width=pot_cfg.pop("width", 1.0),
    )
    if pot_cfg:
        raise ConfigError(f"unknown potential keys {sorted(pot_cfg)}")
    interaction = Interaction(
        rng=int_cfg.pop("range"),
        band=tuple(int_cfg.pop("band")),
        delta=int_cfg.pop("delta"),
    )
    if int_cfg:
        raise ConfigError(f"unknown interaction keys {sorted(int_cfg)}")
    n = win_cfg.pop("n")
    fld = win_cfg.pop("field", [])
    if np.isscalar(fld):
        fld = [float(fld)] * n
    window = Window(
        n=n,
        field=tuple(fld),
        boundary_left=tuple(win_cfg.pop("boundary_left", [])),
        boundary_right=tuple(win_cfg.pop("boundary_right", [])),
        sigma=win_cfg.pop("sigma", None),
        mean_spin=win_cfg.pop("mean_spin", None),
    )
    if win_cfg:
        raise ConfigError(f"unknown window keys {sorted(win_cfg)}")
    return LatticeModel(potential, interaction, window)


def load_model(path):
    """Load a LatticeModel from a TOML file."""
    return model_from_dict(_toml_load(path))


def resize(model, n, mean_spin=None, sigma=None, boundary_left=None, boundary_right=None):
    """Same potential, interaction, and ensemble tag on a window of size n.

    The external field is rebuilt as zeros unless the original field was
    constant, in which case the constant is kept.
    """
    w = model.window
    fld = ()
    if w.field and len(set(w.field)) == 1:
        fld = (w.field[0],) * n
    return LatticeModel(
        model.potential,
        model.interaction,
        Window(
            n=n,
            field=fld,
            boundary_left=w.boundary_left if boundary_left is None else tuple(boundary_left),
            boundary_right=w.boundary_right if boundary_right is None else tuple(boundary_right),
            sigma=w.sigma if sigma is None else sigma,
            mean_spin=w.mean_spin if mean_spin is None else mean_spin,
        ),
    )

"""Markov chain samplers for both ensembles.

Grand canonical: a random-scan heat-bath sweep.  Each site update draws from
the exact single-site conditional — a unit-variance Gaussian centered at the
local field, corrected for the bounded potential part by envelope rejection —
so there is no step-size tuning and no detailed-balance approximation.

Canonical: a Kawasaki pair-exchange sweep.  A move shifts mass t between two
sites, x_i -> x_i + t and x_j -> x_j - t, which preserves the mean spin
exactly; t is drawn from the exact Gaussian part of its one-dimensional
conditional and the bounded part is again handled by envelope rejection.
The running mean is re-pinned once per sweep to keep floating-point drift
below the constraint tolerance.

Both rejection loops use the tightest constant envelope exp(-min psi_b) per
bounded factor, so the expected number of draws per update is at most
exp(2 |psi_b|_sup) for the heat bath and exp(4 |psi_b|_sup) for the pair move.

All chains are reproducible: the random stream is fully determined by
(seed, chain_id) through numpy's SeedSequence spawning.  The inner loops run
on plain Python floats with block-buffered draws for speed; the consumption
order of the underlying bit stream is fixed, so results are exactly
repeatable run to run.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .model import MEAN_CONSTRAINT_TOL

__all__ = [
    "ChainConfig",
    "SampleBatch",
    "run_gce_chain",
    "run_ce_chain",
    "two_boundary_ce_pair",
    "model_digest",
]


@dataclass(frozen=True)
class ChainConfig:
    """How long to run and how to seed one chain.

    sweeps counts retained samples; the chain runs burn_in + sweeps * thinning
    full sweeps in total.
    """

    seed: int
    sweeps: int
    burn_in: int = 0
    thinning: int = 1
    chain_id: int = 0

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")

    def rng(self, spawn=None):
        key = (self.chain_id,) if spawn is None else (self.chain_id, spawn)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


def model_digest(model):
    """Short stable digest of every parameter that defines the model."""
    w = model.window
    parts = (
        model.potential.kind, model.potential.beta, model.potential.omega,
        model.potential.width, model.interaction.rng, model.interaction.band,
        model.interaction.delta, w.n, w.field, w.boundary_left, w.boundary_right,
        w.sigma, w.mean_spin,
    )
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SampleBatch:
    """Retained samples of one chain with its provenance and diagnostics.

    samples has one retained sweep per row.  For canonical batches every row
    satisfies the mean-spin constraint to MEAN_CONSTRAINT_TOL, enforced at
    construction.
    """

    samples: np.ndarray
    kind: str
    seed: int
    chain_id: int
    sweeps: int
    burn_in: int
    thinning: int
    interaction_range: int
    digest: str
    sigma: float | None = None
    mean_spin: float | None = None
    acceptance: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if self.kind not in ("gce", "ce"):
            raise ValueError(f"unknown batch kind {self.kind!r}")
        if samples.ndim != 2:
            raise ValueError("samples must be a (retained, n) matrix")
        if self.kind == "ce":
            if self.mean_spin is None:
                raise ValueError("canonical batches need a mean_spin")
            drift = np.abs(samples.mean(axis=1) - self.mean_spin).max()
            if drift > MEAN_CONSTRAINT_TOL:
                raise ValueError(
                    f"canonical constraint violated: worst drift {drift:.3e}"
                )

    @property
    def retained(self):
        return self.samples.shape[0]

    @property
    def n(self):
        return self.samples.shape[1]

    def site_series(self, i):
        return self.samples[:, i]

    def save_csv(self, path):
        """Write the batch with '#'-prefixed provenance headers."""
        meta = [
            f"# kind={self.kind}",
            f"# digest={self.digest}",
            f"# seed={self.seed}",
            f"# chain_id={self.chain_id}",
            f"# sweeps={self.sweeps}",
            f"# burn_in={self.burn_in}",
            f"# thinning={self.thinning}",
            f"# interaction_range={self.interaction_range}",
            f"# sigma={'' if self.sigma is None else repr(self.sigma)}",
            f"# mean_spin={'' if self.mean_spin is None else repr(self.mean_spin)}",
            f"# acceptance_rate={self.acceptance.get('rate', '')}",
        ]
        with open(path, "w") as fh:
            fh.write("\n".join(meta) + "\n")
            for row in self.samples:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load_csv(cls, path):
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                else:
                    rows.append([float(v) for v in line.split(",")])
        opt = lambda v: None if v == "" else float(v)
        acc = {}
        if meta.get("acceptance_rate"):
            acc["rate"] = float(meta["acceptance_rate"])
        return cls(
            samples=np.array(rows),
            kind=meta["kind"],
            seed=int(meta["seed"]),
            chain_id=int(meta["chain_id"]),
            sweeps=int(meta["sweeps"]),
            burn_in=int(meta["burn_in"]),
            thinning=int(meta["thinning"]),
            interaction_range=int(meta["interaction_range"]),
            digest=meta["digest"],
            sigma=opt(meta.get("sigma", "")),
            mean_spin=opt(meta.get("mean_spin", "")),
            acceptance=acc,
        )


class _Stream:
    """Block-buffered scalar draws from one generator.

    Refills consume the bit stream in fixed-size blocks, so the sequence of
    values is a deterministic function of the generator state alone.
    """

    def __init__(self, rng, block=8192):
        self._rng = rng
        self._block = block
        self._norm = rng.standard_normal(block).tolist()
        self._ni = 0
        self._unif = rng.random(block).tolist()
        self._ui = 0

    def normal(self):
        i = self._ni
        if i == self._block:
            self._norm = self._rng.standard_normal(self._block).tolist()
            i = 0
        self._ni = i + 1
        return self._norm[i]

    def uniform(self):
        i = self._ui
        if i == self._block:
            self._unif = self._rng.random(self._block).tolist()
            i = 0
        self._ui = i + 1
        return self._unif[i]


def _scalar_psi(potential):
    """Plain-float psi_b evaluator for the hot loops (None when zero)."""
    if potential.is_zero:
        return None
    beta = potential.beta
    if potential.kind == "cosine":
        omega = potential.omega
        cos = math.cos
        return lambda z: beta * cos(omega * z)
    w2 = 2.0 * potential.width**2
    exp = math.exp
    return lambda z: -beta * exp(-z * z / w2)


def _band_pairs(model):
    return tuple(
        (k, c) for k, c in enumerate(model.interaction.band, start=1) if c != 0.0
    )


def _neighbor_sum(x, i, pairs, n):
    acc = 0.0
    for k, c in pairs:
        j = i - k
        if j >= 0:
            acc += c * x[j]
        j = i + k
        if j < n:
            acc += c * x[j]
    return acc


def run_gce_chain(model, sigma, config):
    """Heat-bath chain for the grand canonical ensemble at field sigma."""
    n = model.n
    rng = config.rng()
    st = _Stream(rng)
    stilde = model.effective_field().tolist()
    pairs = _band_pairs(model)
    psi = _scalar_psi(model.potential)
    psi_min = model.potential.minimum()
    exp = math.exp
    sigma = float(sigma)
    x = [0.0] * n
    total_sweeps = config.burn_in + config.sweeps * config.thinning
    out = np.empty((config.sweeps, n))
    kept = 0
    proposals = 0
    accepted = 0
    for sweep in range(total_sweeps):
        for i in rng.permutation(n).tolist():
            b = sigma - stilde[i] - _neighbor_sum(x, i, pairs, n)
            if psi is None:
                x[i] = b + st.normal()
                proposals += 1
                accepted += 1
                continue
            while True:
                z = b + st.normal()
                proposals += 1
                if st.uniform() < exp(psi_min - psi(z)):
                    accepted += 1
                    x[i] = z
                    break
        k = sweep - config.burn_in
        if k >= 0 and (k + 1) % config.thinning == 0:
            out[kept] = x
            kept += 1
    return SampleBatch(
        samples=out,
        kind="gce",
        seed=config.seed,
        chain_id=config.chain_id,
        sweeps=config.sweeps,
        burn_in=config.burn_in,
        thinning=config.thinning,
        interaction_range=model.interaction.rng,
        digest=model_digest(model),
        sigma=sigma,
        acceptance={
            "proposals": proposals,
            "accepted": accepted,
            "rate": accepted / max(proposals, 1),
        },
    )


def run_ce_chain(model, m, config, rng=None):
    """Kawasaki pair-exchange chain for the canonical ensemble at mean spin m.

    One sweep makes n pair moves.  Every retained configuration satisfies
    mean(x) = m to within the constraint tolerance.
    """
    n = model.n
    if n < 2:
        raise ValueError("canonical sampler needs at least two sites")
    if rng is None:
        rng = config.rng()
    st = _Stream(rng)
    stilde = model.effective_field().tolist()
    pairs = _band_pairs(model)
    psi = _scalar_psi(model.potential)
    psi_min2 = 2.0 * model.potential.minimum()
    exp = math.exp
    # per-distance Gaussian parameters of the pair move: curvature 1 - M_ij
    R = model.interaction.rng
    qs = [0.0] * (n + 1)
    sds = [0.0] * (n + 1)
    for dist in range(1, n + 1):
        c = model.interaction.coupling(dist)
        qs[dist] = 1.0 - c
        sds[dist] = math.sqrt(1.0 / (2.0 * (1.0 - c)))
    m = float(m)
    x = [m] * n
    total_sweeps = config.burn_in + config.sweeps * config.thinning
    out = np.empty((config.sweeps, n))
    kept = 0
    proposals = 0
    accepted = 0
    for sweep in range(total_sweeps):
        ii = rng.integers(0, n, size=n).tolist()
        jj = rng.integers(0, n - 1, size=n).tolist()
        for i, j in zip(ii, jj):
            if j >= i:
                j += 1
            a = x[i]
            b = x[j]
            dist = abs(i - j)
            q = qs[dist]
            ell = (
                (a - b)
                + (stilde[i] - stilde[j])
                + _neighbor_sum(x, i, pairs, n)
                - _neighbor_sum(x, j, pairs, n)
            )
            mu_t = -ell / (2.0 * q)
            sd_t = sds[dist]
            if psi is None:
                t = mu_t + sd_t * st.normal()
                proposals += 1
                accepted += 1
                x[i] = a + t
                x[j] = b - t
                continue
            while True:
                t = mu_t + sd_t * st.normal()
                proposals += 1
                if st.uniform() < exp(psi_min2 - psi(a + t) - psi(b - t)):
                    accepted += 1
                    x[i] = a + t
                    x[j] = b - t
                    break
        shift = sum(x) / n - m
        if shift != 0.0:
            x = [v - shift for v in x]
        k = sweep - config.burn_in
        if k >= 0 and (k + 1) % config.thinning == 0:
            out[kept] = x
            kept += 1
    return SampleBatch(
        samples=out,
        kind="ce",
        seed=config.seed,
        chain_id=config.chain_id,
        sweeps=config.sweeps,
        burn_in=config.burn_in,
        thinning=config.thinning,
        interaction_range=model.interaction.rng,
        digest=model_digest(model),
        mean_spin=m,
        acceptance={
            "proposals": proposals,
            "accepted": accepted,
            "rate": accepted / max(proposals, 1),
        },
    )


def two_boundary_ce_pair(model_a, model_b, m, config):
    """Canonical chains for two models that differ only in boundary values.

    Uses two independent substreams of the same seed so the pair is
    reproducible as a unit; anything but the boundaries differing is a
    configuration error.
    """
    same = (
        model_a.potential == model_b.potential
        and model_a.interaction == model_b.interaction
        and model_a.window.n == model_b.window.n
        and model_a.window.field == model_b.window.field
    )
    if not same:
        raise ValueError("models must differ only in their boundary values")
    batch_a = run_ce_chain(model_a, m, config, rng=config.rng(spawn=0))
    batch_b = run_ce_chain(model_b, m, config, rng=config.rng(spawn=1))
    return batch_a, batch_b

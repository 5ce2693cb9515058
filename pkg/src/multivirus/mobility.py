"""Time-varying contact graphs from agents drifting inside a square.

Agents move with piecewise-constant drift and reflect specularly off the box
walls. Infection rates follow a truncated Gaussian of pairwise distance::

    beta_ij(t) = beta * exp(-|z_i - z_j|^2)   if |z_i - z_j| < r_hat, else 0
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import PreconditionError


def _box(center, side):
    center = np.asarray(center, dtype=float)
    return center - side / 2.0, center + side / 2.0


def advance_positions(positions, drifts, dt, center=(0.0, 0.0), side=1.0):
    """Move every agent by ``drift * dt``, reflecting off the walls.

    An overshoot past a wall is mirrored back inside and that drift component
    flips sign. Returns new ``(positions, drifts)``; inputs are not modified.
    """
    if dt < 0:
        raise PreconditionError("dt must be non-negative")
    lo, hi = _box(center, side)
    pos = np.array(positions, dtype=float)
    drift = np.array(drifts, dtype=float)
    kernels.advance_positions(pos, drift, lo, hi, float(dt))
    return pos, drift


def proximity_kernel(positions, r_hat, zero_diagonal=False):
    pos = np.ascontiguousarray(positions, dtype=float)
    out = np.empty((pos.shape[0], pos.shape[0]))
    return kernels.proximity(pos, float(r_hat), bool(zero_diagonal), out)


def beta_matrix(positions, beta_base, r_hat, zero_diagonal=False):
    """Infection matrix of one virus with base rate ``beta_base``.

    The cutoff is strict: a pair exactly ``r_hat`` apart does not interact.
    The diagonal follows the same formula (distance 0 gives ``beta_base``)
    unless ``zero_diagonal`` is set.
    """
    if beta_base < 0:
        raise PreconditionError("beta_base must be non-negative")
    return beta_base * proximity_kernel(positions, r_hat, zero_diagonal)


def perturbation_factor(shape, magnitude, seed):
    """Entrywise multipliers ``1 + xi`` with ``xi ~ U[-magnitude, magnitude]``."""
    if not 0.0 <= magnitude <= 1.0:
        raise PreconditionError(f"perturbation magnitude must lie in [0, 1], got {magnitude}")
    rng = np.random.default_rng(seed)
    return 1.0 + rng.uniform(-magnitude, magnitude, size=shape)


def perturb_beta(beta, magnitude, seed):
    """``beta + Delta`` with ``Delta_ij ~ U[-magnitude * beta_ij, magnitude * beta_ij]``.

    Hence ``|Delta_ij| <= beta_ij`` and the result stays non-negative.
    """
    beta = np.asarray(beta, dtype=float)
    return beta * perturbation_factor(beta.shape, magnitude, seed)


@dataclass(frozen=True)
class BetaPerturbation:
    """Bounded perturbation redrawn every ``interval`` time units (held in between)."""

    magnitude: float
    interval: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.magnitude <= 1.0:
            raise PreconditionError("perturbation magnitude must lie in [0, 1]")
        if not self.interval > 0:
            raise PreconditionError("perturbation interval must be positive")

    def factors(self, count, shape):
        """The first ``count`` factor arrays, deterministic in ``seed``."""
        seeds = np.random.SeedSequence(self.seed).spawn(count)
        return [perturbation_factor(shape, self.magnitude, s) for s in seeds]


@dataclass(frozen=True, eq=False)
class MobilityConfig:
    z0: np.ndarray
    phi0: np.ndarray
    z_c: np.ndarray
    gamma_side: float
    r_hat: float
    beta_base: Sequence[float]
    seed: Optional[int] = None
    zero_diagonal: bool = False

    def __post_init__(self):
        z0 = np.array(self.z0, dtype=float)
        phi0 = np.array(self.phi0, dtype=float)
        z_c = np.array(self.z_c, dtype=float)
        beta_base = tuple(float(b) for b in np.atleast_1d(self.beta_base))
        if z0.ndim != 2 or z0.shape[1] != 2 or phi0.shape != z0.shape:
            raise PreconditionError("z0 and phi0 must both be (n, 2) arrays")
        if z_c.shape != (2,):
            raise PreconditionError("z_c must be a 2-vector")
        if not self.gamma_side > 0:
            raise PreconditionError("gamma_side must be positive")
        if not self.r_hat > 0:
            raise PreconditionError("r_hat must be positive")
        if not beta_base or min(beta_base) < 0:
            raise PreconditionError("beta_base must be non-negative")
        lo, hi = _box(z_c, self.gamma_side)
        if np.any(z0 < lo) or np.any(z0 > hi):
            raise PreconditionError("initial positions must lie inside the box")
        for name, val in (("z0", z0), ("phi0", phi0), ("z_c", z_c)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "beta_base", beta_base)

    @property
    def n(self) -> int:
        return self.z0.shape[0]

    @property
    def m(self) -> int:
        return len(self.beta_base)

    @property
    def box(self):
        return _box(self.z_c, self.gamma_side)

    @classmethod
    def random(
        cls,
        n,
        beta_base,
        gamma_side,
        z_c=(0.0, 0.0),
        r_hat=10.0,
        speed=(0.5, 1.5),
        seed=0,
        zero_diagonal=False,
    ):
        """Positions uniform in the box, drift speed uniform in ``speed`` with a uniform heading."""
        rng = np.random.default_rng(seed)
        lo, hi = _box(z_c, gamma_side)
        z0 = rng.uniform(lo, hi, size=(n, 2))
        v = rng.uniform(speed[0], speed[1], size=n)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        phi0 = np.column_stack([v * np.cos(theta), v * np.sin(theta)])
        return cls(z0, phi0, z_c, gamma_side, r_hat, beta_base, seed, zero_diagonal)

    def __eq__(self, other):
        if not isinstance(other, MobilityConfig):
            return NotImplemented
        return (
            np.array_equal(self.z0, other.z0)
            and np.array_equal(self.phi0, other.phi0)
            and np.array_equal(self.z_c, other.z_c)
            and self.gamma_side == other.gamma_side
            and self.r_hat == other.r_hat
            and self.beta_base == other.beta_base
            and self.seed == other.seed
            and self.zero_diagonal == other.zero_diagonal
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MobilityModel:
    """Deterministic beta(t) source built from a :class:`MobilityConfig`."""

    config: MobilityConfig
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lo, hi = self.config.box
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    @property
    def n(self):
        return self.config.n

    @property
    def m(self):
        return self.config.m

    def positions_at(self, t):
        """Exact positions and drifts at time ``t`` (a single reflected move from t = 0)."""
        return advance_positions(
            self.config.z0, self.config.phi0, t, self.config.z_c, self.config.gamma_side
        )

    def betas_from_positions(self, positions):
        kern = proximity_kernel(positions, self.config.r_hat, self.config.zero_diagonal)
        return np.array(self.config.beta_base)[:, None, None] * kern[None]

    def beta_at(self, t):
        pos, _ = self.positions_at(t)
        return self.betas_from_positions(pos)

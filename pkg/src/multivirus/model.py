"""Domain types and the right-hand side of the competing m-virus SIS model.

For virus ``k`` and agent ``i``::

    dp[k, i]/dt = (1 - sum_l p[l, i]) * sum_j beta[k, i, j] p[k, j] - delta[k, i] p[k, i]
"""
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, PreconditionError

#: slack allowed when validating membership of the invariant set
MEMBERSHIP_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VirusSpec:
    """One virus: infection matrix ``beta`` (n x n) and healing rates ``delta`` (n,).

    ``beta[i, j] > 0`` means agent ``j`` can infect agent ``i``.
    """

    beta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        beta = _frozen(self.beta)
        delta = _frozen(self.delta)
        if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
            raise DimensionError(f"beta must be square, got shape {beta.shape}")
        if delta.shape != (beta.shape[0],):
            raise DimensionError(
                f"delta must have shape ({beta.shape[0]},), got {delta.shape}"
            )
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise PreconditionError("beta entries must be finite and non-negative")
        if not np.all(np.isfinite(delta)) or np.any(delta < 0):
            raise PreconditionError("delta entries must be finite and non-negative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def homogeneous(cls, adjacency, beta: float, delta: float) -> "VirusSpec":
        """``beta * A`` with a uniform healing rate."""
        adjacency = np.asarray(adjacency, dtype=float)
        return cls(beta * adjacency, np.full(adjacency.shape[0], float(delta)))

    def linearization(self) -> np.ndarray:
        """``B - D``, the Jacobian at the disease-free state (always Metzler)."""
        return self.beta - np.diag(self.delta)

    def __eq__(self, other):
        if not isinstance(other, VirusSpec):
            return NotImplemented
        return np.array_equal(self.beta, other.beta) and np.array_equal(
            self.delta, other.delta
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """``m`` viruses on ``n`` agents.

    ``time_variation`` is either ``None`` (static beta), a
    :class:`multivirus.mobility.MobilityModel`, or any callable mapping time
    to an ``(m, n, n)`` beta array.
    """

    viruses: Sequence[VirusSpec]
    time_variation: Optional[Any] = None
    betas: np.ndarray = field(init=False, repr=False)
    deltas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        viruses = tuple(self.viruses)
        if not viruses:
            raise DimensionError("a system needs at least one virus")
        n = viruses[0].n
        for k, v in enumerate(viruses):
            if v.n != n:
                raise DimensionError(f"virus {k} has dimension {v.n}, expected {n}")
        object.__setattr__(self, "viruses", viruses)
        object.__setattr__(self, "betas", _frozen([v.beta for v in viruses]))
        object.__setattr__(self, "deltas", _frozen([v.delta for v in viruses]))

    @property
    def m(self) -> int:
        return len(self.viruses)

    @property
    def n(self) -> int:
        return self.viruses[0].n

    @classmethod
    def from_arrays(cls, betas, deltas, time_variation=None) -> "SystemSpec":
        betas = np.asarray(betas, dtype=float)
        deltas = np.asarray(deltas, dtype=float)
        if betas.ndim != 3 or deltas.ndim != 2 or len(betas) != len(deltas):
            raise DimensionError(
                f"expected (m, n, n) betas and (m, n) deltas, got {betas.shape} and {deltas.shape}"
            )
        return cls([VirusSpec(b, d) for b, d in zip(betas, deltas)], time_variation)

    def beta_at(self, t: float) -> np.ndarray:
        """The ``(m, n, n)`` infection matrices in force at time ``t``."""
        tv = self.time_variation
        if tv is None:
            return self.betas
        if hasattr(tv, "beta_at"):
            return np.asarray(tv.beta_at(t), dtype=float)
        return np.asarray(tv(t), dtype=float)

    def __eq__(self, other):
        if not isinstance(other, SystemSpec):
            return NotImplemented
        return self.viruses == other.viruses and self.time_variation is other.time_variation

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InfectionState:
    """Infection fractions ``p`` (m x n) at time ``t``, inside the invariant set."""

    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        p = _frozen(np.atleast_2d(self.p))
        if not np.all(np.isfinite(p)):
            raise PreconditionError("state contains non-finite values")
        if p.min() < -MEMBERSHIP_TOL or p.max() > 1 + MEMBERSHIP_TOL:
            raise PreconditionError("state entries must lie in [0, 1]")
        worst = p.sum(axis=0).max()
        if worst > 1 + MEMBERSHIP_TOL:
            raise PreconditionError(
                f"infection fractions at an agent sum to {worst:.6g} > 1"
            )
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))

    @property
    def m(self) -> int:
        return self.p.shape[0]

    @property
    def n(self) -> int:
        return self.p.shape[1]

    @classmethod
    def healthy(cls, m: int, n: int, t: float = 0.0) -> "InfectionState":
        return cls(np.zeros((m, n)), t)

    @classmethod
    def random(cls, m: int, n: int, rng, max_total: float = 1.0, t: float = 0.0):
        """Uniform draw from the invariant set, scaled so column sums stay below ``max_total``.

        Each agent's ``(p^1, ..., p^m, healthy)`` is Dirichlet(1, ..., 1).
        """
        rng = np.random.default_rng(rng)
        mix = rng.dirichlet(np.ones(m + 1), size=n).T[:m]
        return cls(mix * max_total, t)

    def __eq__(self, other):
        if not isinstance(other, InfectionState):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.p, other.p)

    __hash__ = None


def check_dimensions(p: np.ndarray, betas: np.ndarray, deltas: np.ndarray):
    m, n = p.shape
    if betas.shape != (m, n, n) or deltas.shape != (m, n):
        raise DimensionError(
            f"state is {m}x{n} but spec has betas {betas.shape} and deltas {deltas.shape}"
        )


def derivative(state, spec: SystemSpec, beta_now=None, healing=None) -> np.ndarray:
    """Rate of change of every ``p[k, i]``.

    ``beta_now`` overrides the spec's infection matrices (time-varying case);
    ``healing`` overrides ``spec.deltas`` (used when a control boost is active).
    Pure: neither argument is modified.
    """
    p = state.p if isinstance(state, InfectionState) else np.asarray(state, dtype=float)
    p = np.atleast_2d(p)
    betas = spec.betas if beta_now is None else np.asarray(beta_now, dtype=float)
    deltas = spec.deltas if healing is None else np.asarray(healing, dtype=float)
    check_dimensions(p, betas, deltas)
    out = np.empty(p.shape)
    kernels.rhs(np.ascontiguousarray(p), np.ascontiguousarray(betas), np.ascontiguousarray(deltas), out)
    return out

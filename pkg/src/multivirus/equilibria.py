"""Threshold classification, single-virus endemic states, parallel coexistence.

The classification uses the spectral abscissa ``s(B^k - D^k)`` of each
virus: all viruses die out iff every abscissa is non-positive, and exactly
one supercritical virus wins alone. Anything else is reported as
indeterminate and left to simulation.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import kernels
from .errors import (
    ConvergenceError,
    NoEpidemicEquilibriumError,
    PreconditionError,
    ReducibleMatrixError,
)
from .model import SystemSpec, derivative
from .spectral import is_strongly_connected, spectral_abscissa

ALL_ERADICATED = "AllEradicated"
SINGLE_SURVIVOR = "SingleSurvivor"
INDETERMINATE = "Indeterminate"

DFE = "DFE"
SINGLE_VIRUS_NDFE = "SingleVirusNDFE"
COEXISTING = "Coexisting"


@dataclass(frozen=True)
class VirusThreshold:
    k: int
    s_value: float
    above_threshold: bool


@dataclass(frozen=True)
class ThresholdClassification:
    viruses: List[VirusThreshold]
    predicted_outcome: str
    survivor: Optional[int] = None

    @property
    def s_values(self) -> np.ndarray:
        return np.array([v.s_value for v in self.viruses])


def classify(spec: SystemSpec) -> ThresholdClassification:
    """Apply the eradication / single-survivor dichotomy to a static system.

    Raises :class:`ReducibleMatrixError` naming the first virus whose spread
    graph is not strongly connected.
    """
    records = []
    for k, v in enumerate(spec.viruses):
        if not is_strongly_connected(v.beta):
            raise ReducibleMatrixError(k)
        s = spectral_abscissa(v.linearization()).value
        records.append(VirusThreshold(k, s, s > 0))
    above = [r.k for r in records if r.above_threshold]
    if not above:
        return ThresholdClassification(records, ALL_ERADICATED)
    if len(above) == 1:
        return ThresholdClassification(records, SINGLE_SURVIVOR, above[0])
    return ThresholdClassification(records, INDETERMINATE)


def parallel_hypotheses(spec: SystemSpec, rtol: float = 1e-12) -> bool:
    """Whether the spec satisfies the parallel-coexistence conditions.

    Every virus must spread over the same strongly connected 0/1 graph ``A``
    with homogeneous rates ``B^k = beta^k A`` and ``delta^k_i = delta^k``, the
    ratios ``delta^k / beta^k`` must agree, and ``s(A)`` must exceed them.
    """
    if spec.time_variation is not None:
        return False
    adj = (spec.betas[0] > 0).astype(float)
    if not is_strongly_connected(adj):
        return False
    ratios = []
    for v in spec.viruses:
        rate = v.beta.max()
        if rate <= 0 or not np.allclose(v.beta, rate * adj, rtol=rtol, atol=0.0):
            return False
        if not np.allclose(v.delta, v.delta[0], rtol=rtol, atol=0.0):
            return False
        ratios.append(v.delta[0] / rate)
    ratios = np.array(ratios)
    if not np.allclose(ratios, ratios[0], rtol=1e-9, atol=0.0):
        return False
    return bool(spectral_abscissa(adj).value > ratios[0])


@dataclass(frozen=True)
class EquilibriumPoint:
    p_tilde: np.ndarray
    residual: float
    kind: str
    virus: Optional[int] = None
    iterations: int = 0


def solve_single_virus_ndfe(
    beta, delta, tol: float = 1e-12, max_iter: int = 1_000_000, residual_tol: float = 1e-10
) -> EquilibriumPoint:
    """Endemic equilibrium of one virus on its own: ``(I - P) B p = D p`` with ``p >> 0``.

    Fixed-point iteration ``p_i <- (Bp)_i / (delta_i + (Bp)_i)`` from ``p = 1/2``;
    the map is monotone and its positive fixed point is unique when ``B`` is
    irreducible and ``s(B - D) > 0``. ``p_tilde`` has shape ``(1, n)``.
    """
    beta = np.ascontiguousarray(beta, dtype=float)
    delta = np.ascontiguousarray(delta, dtype=float)
    if beta.ndim != 2 or beta.shape[0] != beta.shape[1] or delta.shape != beta.shape[:1]:
        raise PreconditionError("beta must be n x n and delta length n")
    if np.any(beta < 0) or np.any(delta < 0):
        raise PreconditionError("beta and delta must be non-negative")
    if not is_strongly_connected(beta):
        raise ReducibleMatrixError(0)
    s = spectral_abscissa(beta - np.diag(delta)).value
    if s <= 0:
        raise NoEpidemicEquilibriumError(
            f"s(B - D) = {s:.6g} <= 0: the disease-free state is the only equilibrium"
        )
    n = beta.shape[0]
    p = np.full(n, 0.5)
    total = 0
    step_tol = tol
    while True:
        p, it, last = kernels.ndfe_iterate(beta, delta, p, step_tol, max_iter - total)
        total += it
        residual = float(np.abs((1.0 - p) * (beta @ p) - delta * p).max())
        if last < step_tol and residual < residual_tol:
            break
        # large rates amplify the step into the residual; tighten and continue
        step_tol *= 1e-2
        if total >= max_iter or last >= tol or step_tol < 1e-18:
            raise ConvergenceError(
                f"fixed point iteration stalled after {total} iterations "
                f"(step {last:.3g}, residual {residual:.3g})",
                last=p,
            )
    return EquilibriumPoint(p[None, :], residual, SINGLE_VIRUS_NDFE, 0, total)


def ndfe_for_virus(spec: SystemSpec, k: int, **kwargs) -> EquilibriumPoint:
    """The equilibrium where virus ``k`` sits at its endemic state and all others vanish."""
    v = spec.viruses[k]
    single = solve_single_virus_ndfe(v.beta, v.delta, **kwargs)
    p = np.zeros((spec.m, spec.n))
    p[k] = single.p_tilde[0]
    residual = float(np.abs(derivative(p, spec)).max())
    return EquilibriumPoint(p, residual, SINGLE_VIRUS_NDFE, k, single.iterations)


@dataclass(frozen=True)
class ParallelEquilibrium:
    """``p^k = ratios[k] * base`` with ``ratios[0] = 1``."""

    ratios: np.ndarray
    base: np.ndarray
    max_deviation: float

    @property
    def alpha(self) -> np.ndarray:
        """``alpha[i, k]`` with ``p^i = alpha[i, k] p^k``."""
        return self.ratios[:, None] / self.ratios[None, :]


def parallel_structure(p, tol: float = 1e-5, guard: float = 1e-12) -> Optional[ParallelEquilibrium]:
    """Test whether every row of ``p`` (m x n) is a positive multiple of the first.

    ``ratios[k]`` is the mean over agents of ``p[k, i] / p[0, i]``. Returns
    ``None`` when any ``p[0, i]`` is below ``guard``, when some ratio is not
    positive, or when a per-agent ratio deviates from its mean by ``tol`` or
    more (relative).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    first = p[0]
    if np.any(first < guard):
        return None
    per_agent = p / first
    ratios = per_agent.mean(axis=1)
    if np.any(ratios <= 0):
        return None
    deviation = float((np.abs(per_agent - ratios[:, None]) / ratios[:, None]).max())
    if deviation >= tol:
        return None
    return ParallelEquilibrium(ratios=ratios, base=first.copy(), max_deviation=deviation)


def tail_variation(traj, tail_window: float) -> float:
    tail = traj.states[traj.times >= traj.times[-1] - tail_window]
    return float(np.abs(tail - traj.states[-1]).max())


def detect_parallel_equilibrium(
    traj, tail_window: float, tol: float = 1e-5, converged_tol: float = 1e-8
) -> Optional[ParallelEquilibrium]:
    """Parallel coexistence in the converged tail of a trajectory, if present."""
    variation = tail_variation(traj, tail_window)
    if variation >= converged_tol:
        raise PreconditionError(
            f"trajectory tail varies by {variation:.3g} over the last {tail_window}; not converged"
        )
    return parallel_structure(traj.states[-1], tol=tol)

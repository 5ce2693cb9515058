"""Antidote allocation: a healing-rate boost ``u >= 0`` with ``sum(u) <= c`` per virus.

Both allocation problems reduce to a one-dimensional search over the level
``eta`` bounding every row excess ``r_i - u_i``: for a fixed level the cheapest
feasible boost is ``u_i = max(0, r_i - eta)``, and the budget is met exactly
when ``eta`` is at or above the water-filling level.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import PreconditionError

log = logging.getLogger(__name__)

SOLVERS = ("p1", "alg1")
SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class ControlConfig:
    """Budget and reweighting parameters; ``budget`` is a scalar or one value per virus.

    ``interval`` is the recompute period of the closed-loop policy (``None``
    means a single allocation at t = 0).
    """

    budget: Union[float, Sequence[float]]
    kappa: float = 0.05
    weight_eps: float = 1e-4
    stop_eps: float = 1e-8
    max_reweight_iters: int = 50
    solver: str = "p1"
    interval: Optional[float] = None

    def __post_init__(self):
        budgets = np.atleast_1d(np.asarray(self.budget, dtype=float))
        if np.any(budgets < 0) or not np.all(np.isfinite(budgets)):
            raise PreconditionError("budget must be finite and non-negative")
        if self.kappa < 0:
            raise PreconditionError("kappa must be non-negative")
        if not self.weight_eps > 0 or not self.stop_eps > 0:
            raise PreconditionError("weight_eps and stop_eps must be positive")
        if self.max_reweight_iters < 1:
            raise PreconditionError("max_reweight_iters must be at least 1")
        if self.solver not in SOLVERS:
            raise PreconditionError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.interval is not None and not self.interval > 0:
            raise PreconditionError("control interval must be positive")

    def budget_for(self, k: int, m: int) -> float:
        budgets = np.atleast_1d(np.asarray(self.budget, dtype=float))
        if budgets.size == 1:
            return float(budgets[0])
        if budgets.size != m:
            raise PreconditionError(f"got {budgets.size} budgets for {m} viruses")
        return float(budgets[k])


@dataclass(frozen=True)
class Allocation:
    u: np.ndarray
    eta: float
    objective: float
    iterations: int = 0
    weights: Optional[np.ndarray] = None
    history: List[float] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.u > SUPPORT_TOL)

    @property
    def support_size(self) -> int:
        return int(self.support.size)

    @property
    def monotone(self) -> bool:
        """Whether the recorded iterate objectives never increased (1e-12 slack)."""
        h = np.asarray(self.history)
        return bool(np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))) if h.size > 1 else True


def gershgorin_excess(beta_now, delta) -> np.ndarray:
    """Row infection pressure minus healing, ``r_i = sum_j beta_ij - delta_i``."""
    beta_now = np.asarray(beta_now, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if beta_now.ndim != 2 or beta_now.shape[0] != beta_now.shape[1] or delta.shape != beta_now.shape[:1]:
        raise PreconditionError(
            f"beta must be n x n and delta length n, got {beta_now.shape} and {delta.shape}"
        )
    return beta_now.sum(axis=1) - delta


def _check_r_c(r, c):
    r = np.asarray(r, dtype=float).ravel()
    if r.size == 0 or not np.all(np.isfinite(r)):
        raise PreconditionError("r must be a non-empty finite vector")
    if not (np.isfinite(c) and c >= 0):
        raise PreconditionError("budget must be finite and non-negative")
    return r, float(c)


def water_level(r, c) -> float:
    """The level ``eta`` with ``sum_i max(0, r_i - eta) = c`` (``max(r)`` when ``c = 0``)."""
    r, c = _check_r_c(r, c)
    if c == 0:
        return float(r.max())
    desc = np.sort(r)[::-1]
    sums = np.cumsum(desc)
    n = desc.size
    for k in range(1, n + 1):
        level = (sums[k - 1] - c) / k
        if k == n or level >= desc[k]:
            return float(level)
    raise AssertionError("unreachable")


def _boost(r, eta, c):
    u = np.maximum(0.0, r - eta)
    total = u.sum()
    if total > c:
        u *= c / total
    return u


def solve_problem1(r, c) -> Allocation:
    """Minimize ``max_i(r_i - u_i)`` over ``u >= 0``, ``sum(u) <= c`` by water-filling."""
    r, c = _check_r_c(r, c)
    u = _boost(r, water_level(r, c), c)
    eta = float(np.max(r - u))
    return Allocation(u=u, eta=eta, objective=eta)


def _weighted_cost(r, eta, w):
    return float(np.sum(w * np.maximum(0.0, r - eta)))


def solve_problem2(r, c, w, kappa) -> Allocation:
    """Minimize ``eta + kappa * sum_i w_i u_i`` under the Problem 1 constraints.

    ``f(eta) = eta + kappa * sum_i w_i max(0, r_i - eta)`` is convex and
    piecewise linear on ``[eta_wf, max r]``, so its minimum sits at one of the
    endpoints or at a breakpoint ``r_i`` in between. Ties go to the lower level.
    """
    r, c = _check_r_c(r, c)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != r.shape:
        raise PreconditionError(f"weights have shape {w.shape}, expected {r.shape}")
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise PreconditionError("weights must be positive and finite")
    if kappa < 0:
        raise PreconditionError("kappa must be non-negative")
    lo = water_level(r, c)
    hi = float(r.max())
    candidates = np.unique(np.concatenate([[lo, hi], r[(r > lo) & (r < hi)]]))
    values = candidates + kappa * np.array([_weighted_cost(r, e, w) for e in candidates])
    best = values.min()
    tie = 1e-14 * max(1.0, abs(best))
    eta_star = candidates[np.flatnonzero(values <= best + tie)[0]]
    if eta_star == lo:
        u = solve_problem1(r, c).u
    else:
        u = _boost(r, eta_star, c)
    eta = float(np.max(r - u))
    return Allocation(
        u=u, eta=eta, objective=eta + kappa * float(np.sum(w * u)), weights=w
    )


def algorithm1(r, c, kappa, config: Optional[ControlConfig] = None) -> Allocation:
    """Reweighted l1 loop for the sparsity-promoting allocation.

    Starts from uniform weights ``1/n``; each round solves Problem 2 with the
    current weights and resets ``w_i = 1 / (|u_i| + weight_eps)``. Stops when
    successive allocations differ by at most ``stop_eps`` in the 2-norm or
    after ``max_reweight_iters`` rounds. ``history`` records each round's
    objective under the weights it was solved with and ``iterates`` each
    round's allocation.
    """
    cfg = config or ControlConfig(budget=c, kappa=kappa)
    r, c = _check_r_c(r, c)
    n = r.size
    w = np.full(n, 1.0 / n)
    prev = None
    history = []
    iterates = []
    alloc = None
    it = 0
    for it in range(1, cfg.max_reweight_iters + 1):
        alloc = solve_problem2(r, c, w, kappa)
        history.append(alloc.objective)
        iterates.append(alloc.u)
        used = w
        w = 1.0 / (np.abs(alloc.u) + cfg.weight_eps)
        if prev is not None and np.linalg.norm(alloc.u - prev) <= cfg.stop_eps:
            break
        prev = alloc.u
    result = Allocation(
        u=alloc.u,
        eta=alloc.eta,
        objective=alloc.objective,
        iterations=it,
        weights=used,
        history=history,
        iterates=iterates,
    )
    if not result.monotone:
        log.info("reweighted iterate objectives increased at some round: %s", history)
    return result


def l0_objective(r, u, kappa) -> float:
    """``max_i(r_i - u_i) + kappa * |supp(u)|``, the cardinality-penalized level."""
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(np.max(r - u) + kappa * np.count_nonzero(u > SUPPORT_TOL))


def allocate(r, c, config: ControlConfig) -> Allocation:
    if config.solver == "p1":
        return solve_problem1(r, c)
    return algorithm1(r, c, config.kappa, config)


@dataclass
class ControlEvent:
    t: float
    allocations: List[Allocation]

    @property
    def u(self) -> np.ndarray:
        return np.array([a.u for a in self.allocations])


class ControlPolicy:
    """Piecewise-constant antidote schedule recomputed every ``config.interval``.

    Each virus is allocated independently from the current infection matrices.
    The event log is per run; :meth:`reset` clears it.
    """

    def __init__(self, config: ControlConfig):
        self.config = config
        self.events: List[ControlEvent] = []

    @property
    def interval(self) -> Optional[float]:
        return self.config.interval

    def reset(self):
        self.events = []

    def allocate(self, t, beta_now, deltas) -> np.ndarray:
        beta_now = np.asarray(beta_now, dtype=float)
        deltas = np.asarray(deltas, dtype=float)
        m = beta_now.shape[0]
        allocs = [
            allocate(gershgorin_excess(beta_now[k], deltas[k]), self.config.budget_for(k, m), self.config)
            for k in range(m)
        ]
        event = ControlEvent(float(t), allocs)
        self.events.append(event)
        return event.u


def control_policy(spec, beta_now, config: ControlConfig) -> np.ndarray:
    """One-shot per-virus boost ``u`` (m x n) for the given infection matrices."""
    return ControlPolicy(config).allocate(0.0, beta_now, spec.deltas)

"""Fixed-step explicit integration that keeps states inside the invariant set.

After every step each ``p[k, i]`` is clamped to [0, 1] and any agent whose
total exceeds 1 is rescaled onto the simplex face. The exact flow never leaves
the set, so the size of these repairs measures round-off and step-size error;
repairs larger than ``clamp_tol`` raise :class:`StepSizeWarning`.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import kernels
from .errors import IntegrationBlowupError, PreconditionError, StepSizeWarning
from .mobility import BetaPerturbation, MobilityModel
from .model import InfectionState, SystemSpec, check_dimensions
from .spectral import spectral_abscissa

METHODS = {"rk4": kernels.RK4, "euler": kernels.EULER}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    t_end: float = 100.0
    method: str = "rk4"
    clamp_tol: float = 1e-9
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise PreconditionError("dt must be positive")
        if not self.t_end >= 0:
            raise PreconditionError("t_end must be non-negative")
        if self.method not in METHODS:
            raise PreconditionError(f"method must be one of {sorted(METHODS)}")
        if not self.clamp_tol >= 0:
            raise PreconditionError("clamp_tol must be non-negative")
        if int(self.record_every) < 1:
            raise PreconditionError("record_every must be a positive integer")

    @property
    def nsteps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9)) if self.t_end > 0 else 0

    def step_time(self, s: int) -> float:
        return min(s * self.dt, self.t_end) if s < self.nsteps else float(self.t_end)


@dataclass
class Trajectory:
    """Recorded states ``states[j]`` (m x n) at ``times[j]``.

    ``diagnostics`` may hold ``"max_violation"`` (largest pre-repair drift),
    ``"s"`` (T x m abscissas of ``B(t) - D``), ``"s_controlled"``,
    ``"u"`` (T x m x n held boosts), ``"positions"`` (T x n x 2) and
    ``"control_events"``.
    """

    times: np.ndarray
    states: np.ndarray
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def m(self):
        return self.states.shape[1]

    @property
    def n(self):
        return self.states.shape[2]

    def state(self, j: int) -> InfectionState:
        return InfectionState(self.states[j], self.times[j])

    @property
    def final(self) -> InfectionState:
        return self.state(-1)

    def totals(self) -> np.ndarray:
        """Per-virus total infection ``sum_i p[k, i]`` at each sample (T x m)."""
        return self.states.sum(axis=2)


def _stage_betas(spec, t, dt, beta_now):
    if beta_now is None:
        if spec.time_variation is None:
            b = spec.betas
            return b, b, b
        return spec.beta_at(t), spec.beta_at(t + 0.5 * dt), spec.beta_at(t + dt)
    if isinstance(beta_now, (tuple, list)) and len(beta_now) == 3:
        return tuple(np.asarray(b, dtype=float) for b in beta_now)
    b = np.asarray(beta_now, dtype=float)
    return b, b, b


def _advance(p, b0, bh, b1, deltas, dt, method):
    out = np.empty_like(p)
    if method == kernels.RK4:
        scratch = [np.empty_like(p) for _ in range(5)]
        kernels.rk4_step(p, b0, bh, b1, deltas, dt, out, *scratch)
    else:
        kernels.euler_step(p, b0, deltas, dt, out, np.empty_like(p))
    return out


def step(
    state: InfectionState,
    spec: SystemSpec,
    dt: float,
    beta_now=None,
    method: str = "rk4",
    clamp_tol: float = 1e-9,
    healing=None,
) -> InfectionState:
    """One explicit step followed by the invariant-set repair.

    ``beta_now`` is one ``(m, n, n)`` array held over the step or a triple of
    arrays at ``t``, ``t + dt/2`` and ``t + dt``. When omitted, the spec's
    time variation (if any) is sampled at those stage times.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    p = np.ascontiguousarray(state.p, dtype=float)
    b0, bh, b1 = (np.ascontiguousarray(b) for b in _stage_betas(spec, state.t, dt, beta_now))
    deltas = np.ascontiguousarray(spec.deltas if healing is None else healing, dtype=float)
    check_dimensions(p, b0, deltas)
    out = _advance(p, b0, bh, b1, deltas, dt, METHODS[method])
    viol = kernels.repair(out)
    if not np.isfinite(viol):
        raise IntegrationBlowupError(state.t + dt, dt)
    if viol > clamp_tol:
        warnings.warn(
            f"state repair of {viol:.3g} exceeds clamp_tol={clamp_tol:.3g} at t={state.t + dt:.6g}; "
            "reduce dt",
            StepSizeWarning,
            stacklevel=2,
        )
    return InfectionState(out, state.t + dt)


def _record_steps(nsteps, every):
    steps = list(range(0, nsteps + 1, every))
    if steps[-1] != nsteps:
        steps.append(nsteps)
    return np.array(steps, dtype=np.int64)


def _chunk_starts(cfg, control, perturbation):
    """Step indices at which the control or the perturbation is refreshed."""
    starts = {0}
    for period in (
        control.interval if control is not None else None,
        perturbation.interval if perturbation is not None else None,
    ):
        if period is None:
            continue
        every = max(1, int(round(period / cfg.dt)))
        starts.update(range(0, cfg.nsteps, every))
    return sorted(s for s in starts if s < max(cfg.nsteps, 1))


def simulate(
    spec: SystemSpec,
    initial: InfectionState,
    config: IntegratorConfig,
    control=None,
    perturbation: Optional[BetaPerturbation] = None,
    spectral_trace: bool = False,
) -> Trajectory:
    """Integrate from ``initial`` to ``config.t_end`` and record every ``record_every`` steps.

    ``spec.time_variation`` refreshes beta at each RK4 stage time. ``control``
    (a :class:`multivirus.control.ControlPolicy`) adds its boost to the
    healing rates, recomputed every ``control.interval`` from the current
    beta and held constant in between. ``perturbation`` multiplies beta by a
    bounded random factor redrawn every ``perturbation.interval``.
    """
    if not isinstance(initial, InfectionState):
        initial = InfectionState(initial)
    p0 = np.ascontiguousarray(initial.p, dtype=float)
    check_dimensions(p0, spec.betas, spec.deltas)
    if abs(initial.t) > 0:
        raise PreconditionError("simulations start at t = 0")
    m, n = p0.shape
    cfg = config
    method = METHODS[cfg.method]
    nsteps = cfg.nsteps
    rec_steps = _record_steps(nsteps, int(cfg.record_every))
    starts = _chunk_starts(cfg, control, perturbation)
    factors = (
        perturbation.factors(len(starts), (m, n, n)) if perturbation is not None else None
    )
    if control is not None:
        control.reset()

    tv = spec.time_variation
    mobility = tv if isinstance(tv, MobilityModel) else None
    if mobility is not None:
        lo, hi = mobility.config.box
        pos, drift = (np.array(a, dtype=float) for a in (mobility.config.z0, mobility.config.phi0))
        beta_base = np.array(mobility.config.beta_base, dtype=float)
        if beta_base.size != m or mobility.n != n:
            raise PreconditionError("mobility model dimensions do not match the system")

    states = [p0[None].copy()]
    positions = [pos[None].copy()] if mobility is not None else None
    held_u = [np.zeros((1, m, n))]
    held_factor_idx = [np.zeros(1, dtype=np.int64)]
    max_viol = 0.0
    p = p0.copy()

    for ci, s0 in enumerate(starts):
        s1 = starts[ci + 1] if ci + 1 < len(starts) else nsteps
        if s1 <= s0:
            continue
        t0 = s0 * cfg.dt
        factor = factors[ci] if factors is not None else np.ones((m, n, n))
        deltas = np.array(spec.deltas)
        u = np.zeros((m, n))
        if control is not None:
            if mobility is not None:
                beta_now = mobility.betas_from_positions(pos)
            else:
                beta_now = spec.beta_at(t0)
            u = control.allocate(t0, beta_now * factor, spec.deltas)
            deltas = deltas + u
        if ci == 0:
            held_u[0][0] = u
        count = s1 - s0
        wanted = rec_steps[(rec_steps > s0) & (rec_steps <= s1)] - s0
        # the chunk end is always computed so the next chunk can resume from it
        local = np.union1d(wanted, [count]).astype(np.int64)
        keep = np.isin(local, wanted)
        dt_last = cfg.t_end - (s1 - 1) * cfg.dt if s1 == nsteps else cfg.dt
        if mobility is not None:
            recs, pos_recs, pos, drift, viol, status, fail = kernels.integrate_mobility(
                p, pos, drift, lo, hi, beta_base, np.ascontiguousarray(factor),
                float(mobility.config.r_hat), bool(mobility.config.zero_diagonal),
                deltas, cfg.dt, dt_last, count, method, local,
            )
            positions.append(pos_recs[keep])
        elif tv is None:
            recs, viol, status, fail = kernels.integrate_static(
                p, np.ascontiguousarray(spec.betas * factor), deltas,
                cfg.dt, dt_last, count, method, local,
            )
        else:
            recs, viol, status, fail = _integrate_callable(
                spec, p, factor, deltas, t0, cfg.dt, dt_last, count, method, local
            )
        max_viol = max(max_viol, float(viol))
        if status != kernels.OK:
            raise IntegrationBlowupError((s0 + fail) * cfg.dt, cfg.dt)
        p = np.ascontiguousarray(recs[-1])
        recs = recs[keep]
        if len(recs):
            states.append(recs)
            held_u.append(np.broadcast_to(u, (len(recs), m, n)))
            held_factor_idx.append(np.full(len(recs), ci, dtype=np.int64))

    times = np.array([cfg.step_time(s) for s in rec_steps])
    traj = Trajectory(times=times, states=np.concatenate(states), diagnostics={})
    diag = traj.diagnostics
    diag["max_violation"] = max_viol
    if positions is not None:
        diag["positions"] = np.concatenate(positions)
    if control is not None:
        diag["u"] = np.concatenate(held_u)
        diag["control_events"] = list(control.events)
    if max_viol > cfg.clamp_tol:
        warnings.warn(
            f"largest state repair {max_viol:.3g} exceeds clamp_tol={cfg.clamp_tol:.3g}; reduce dt",
            StepSizeWarning,
            stacklevel=2,
        )
    if spectral_trace:
        fidx = np.concatenate(held_factor_idx)
        _attach_spectral_trace(traj, spec, mobility, factors, fidx)
    return traj


def _integrate_callable(spec, p0, factor, deltas, t0, dt, dt_last, count, method, local):
    records = np.empty((len(local), *p0.shape))
    p = p0.copy()
    max_viol = 0.0
    r = 0
    t = t0
    for s in range(1, count + 1):
        h = dt_last if s == count else dt
        b0, bh, b1 = (np.ascontiguousarray(spec.beta_at(x) * factor) for x in (t, t + 0.5 * h, t + h))
        p = _advance(p, b0, bh, b1, deltas, h, method)
        viol = kernels.repair(p)
        if not np.isfinite(viol):
            return records[:r], max_viol, kernels.BLOWUP, s
        max_viol = max(max_viol, viol)
        t = t0 + s * dt
        if r < len(local) and local[r] == s:
            records[r] = p
            r += 1
    return records, max_viol, kernels.OK, -1


def beta_samples(traj: Trajectory, spec: SystemSpec, factors=None, factor_idx=None):
    """Infection matrices in force at every recorded time (T x m x n x n)."""
    if "positions" in traj.diagnostics:
        model = spec.time_variation
        out = np.array([model.betas_from_positions(z) for z in traj.diagnostics["positions"]])
    elif spec.time_variation is None:
        out = np.broadcast_to(spec.betas, (len(traj), *spec.betas.shape)).copy()
    else:
        out = np.array([spec.beta_at(t) for t in traj.times])
    if factors is not None:
        out = out * np.array(factors)[factor_idx]
    return out


def _attach_spectral_trace(traj, spec, mobility, factors, factor_idx):
    betas = beta_samples(traj, spec, factors, factor_idx)
    eye_d = [np.diag(d) for d in spec.deltas]
    static = spec.time_variation is None and factors is None
    s = np.empty((len(traj), spec.m))
    for j in range(len(traj)):
        if static and j > 0:
            s[j] = s[0]
            continue
        for k in range(spec.m):
            s[j, k] = spectral_abscissa(betas[j, k] - eye_d[k]).value
    traj.diagnostics["s"] = s
    if "u" in traj.diagnostics:
        u = traj.diagnostics["u"]
        sc = np.empty_like(s)
        for j in range(len(traj)):
            for k in range(spec.m):
                sc[j, k] = spectral_abscissa(betas[j, k] - np.diag(spec.deltas[k] + u[j, k])).value
        traj.diagnostics["s_controlled"] = sc

"""Scenario pipeline: build, classify, simulate, analyze, export.

Every output is a pure function of the scenario and seed. Floats are written
with ``repr`` precision and the numba and numpy kernels perform the same
arithmetic, so repeated runs give byte-identical files.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import kernels
from .equilibria import (
    SINGLE_SURVIVOR,
    detect_parallel_equilibrium,
    classify,
    ndfe_for_virus,
    parallel_hypotheses,
    parallel_structure,
    tail_variation,
)
from .errors import MultivirusError, PreconditionError, ReducibleMatrixError
from .integrator import Trajectory, simulate
from .model import SystemSpec
from .scenario import BuiltScenario, Scenario, build
from .spectral import average_abscissa_monitor

log = logging.getLogger(__name__)

DEFAULT_D0 = 1.0
DEFAULT_R0 = 5.0
VARIANTS = ("none", "p1", "alg1")


def _f(x) -> str:
    """Shortest round-tripping decimal form of a float."""
    x = float(x)
    if x == 0.0:
        return "0.0"
    return repr(x)


def plot_columns(state, d0: float = DEFAULT_D0, r0: float = DEFAULT_R0, color: bool = True):
    """Per-agent plot colour and marker diameter for an ``m x n`` state.

    Virus 1 is red, virus 2 blue and virus 3 green; an agent's colour is the
    mix weighted by ``p^k_i / sum_k p^k_i`` and black when it is healthy.
    Returns ``(rgb, diameter)`` with ``rgb`` of shape ``(n, 3)`` (``None``
    when ``color`` is off) and ``diameter = d0 + r0 * sum_k p^k_i``.
    """
    p = np.atleast_2d(np.asarray(state.p if hasattr(state, "p") else state, dtype=float))
    total = p.sum(axis=0)
    diameter = d0 + r0 * total
    if not color:
        return None, diameter
    if p.shape[0] != 3:
        raise PreconditionError(
            f"colour mapping needs exactly 3 viruses, got {p.shape[0]}; use color=False"
        )
    safe = np.where(total > 0, total, 1.0)
    share = np.where(total > 0, p / safe, 0.0)
    rgb = np.column_stack([share[0], share[2], share[1]])
    return rgb, diameter


@dataclass
class RunResult:
    built: BuiltScenario
    trajectories: Dict[str, Trajectory]
    summary: Dict
    files: List[Path] = field(default_factory=list)


def _classification(built: BuiltScenario):
    basis = "static" if built.spec.time_variation is None else "t0_snapshot"
    spec = built.spec
    if basis == "t0_snapshot":
        spec = SystemSpec.from_arrays(spec.betas, spec.deltas)
    try:
        cls = classify(spec)
    except ReducibleMatrixError as exc:
        return None, {"basis": basis, "error": str(exc), "virus": exc.virus + 1}
    doc = {
        "basis": basis,
        "outcome": cls.predicted_outcome,
        "survivor": None if cls.survivor is None else cls.survivor + 1,
        "viruses": [
            {"virus": v.k + 1, "s": v.s_value, "above_threshold": v.above_threshold}
            for v in cls.viruses
        ],
        "parallel_hypotheses": parallel_hypotheses(built.spec),
    }
    return cls, doc


def classify_scenario(scenario: Scenario, seed: Optional[int] = None) -> Dict:
    built = build(scenario, seed)
    _, doc = _classification(built)
    return {"scenario": scenario.name, "seed": built.seed, "n": scenario.n, "m": scenario.m,
            "classification": doc}


def _variants(built: BuiltScenario):
    ctrl = built.scenario.control
    if ctrl is None:
        return ["none"]
    if ctrl.get("compare", False):
        return list(VARIANTS)
    return [ctrl.get("solver", "p1")]


def _run_summary(traj: Trajectory, policy) -> Dict:
    final = traj.states[-1]
    doc = {
        "final_total": [float(x) for x in final.sum(axis=1)],
        "final_max": [float(x) for x in final.max(axis=1)],
        "max_violation": float(traj.diagnostics["max_violation"]),
    }
    s = traj.diagnostics.get("s")
    if s is not None:
        doc["final_s"] = [float(x) for x in s[-1]]
    sc = traj.diagnostics.get("s_controlled")
    if sc is not None:
        doc["final_s_controlled"] = [float(x) for x in sc[-1]]
    if policy is not None and policy.events:
        events = policy.events
        doc["allocation_events"] = len(events)
        # the first and last allocations; the full schedule is in the u columns
        shown = events[:1] + events[1:][-1:]
        doc["allocations"] = [
            {
                "t": ev.t,
                "viruses": [
                    {
                        "virus": k + 1,
                        "u": [float(x) for x in a.u],
                        "eta": a.eta,
                        "objective": a.objective,
                        "support_size": a.support_size,
                        "iterations": a.iterations,
                    }
                    for k, a in enumerate(ev.allocations)
                ],
            }
            for ev in shown
        ]
        doc["mean_support_size"] = [
            float(np.mean([ev.allocations[k].support_size for ev in events]))
            for k in range(len(events[0].allocations))
        ]
    return doc


def _post_control_lambda(traj: Trajectory) -> List[float]:
    key = "s_controlled" if "s_controlled" in traj.diagnostics else "s"
    return [float(x) for x in traj.diagnostics[key][-1]]


def _ndfe_check(built, cls, traj):
    if cls is None or cls.predicted_outcome != SINGLE_SURVIVOR or built.spec.time_variation is not None:
        return None
    k = cls.survivor
    try:
        eq = ndfe_for_virus(built.spec, k)
    except MultivirusError as exc:
        return {"virus": k + 1, "error": str(exc)}
    final = traj.states[-1]
    others = np.delete(final, k, axis=0)
    return {
        "virus": k + 1,
        "max_abs_error": float(np.abs(final[k] - eq.p_tilde[k]).max()),
        "others_max": float(others.max()) if others.size else 0.0,
        "equilibrium": [float(x) for x in eq.p_tilde[k]],
        "residual": eq.residual,
    }


def _parallel_check(built, traj):
    analysis = built.scenario.analysis
    if "tail_window" not in analysis:
        return None
    window = float(analysis["tail_window"])
    tol = float(analysis.get("parallel_tol", 1e-5))
    try:
        par = detect_parallel_equilibrium(traj, window, tol=tol)
    except PreconditionError:
        return {"status": "not_converged", "tail_variation": tail_variation(traj, window)}
    if par is None:
        # report the ratios anyway so near-misses are visible
        loose = parallel_structure(traj.states[-1], tol=math.inf)
        out = {"status": "not_parallel"}
        if loose is not None:
            out["max_deviation"] = loose.max_deviation
        return out
    return {
        "status": "parallel",
        "ratios": [float(x) for x in par.ratios],
        "max_deviation": par.max_deviation,
        "tail_variation": tail_variation(traj, window),
    }


def _average_check(built, traj):
    analysis = built.scenario.analysis
    if "average_window" not in analysis or "s" not in traj.diagnostics:
        return None
    window = float(analysis["average_window"])
    threshold = analysis.get("average_threshold")
    s = traj.diagnostics["s"]
    out = {"window": window, "threshold": threshold, "viruses": []}
    for k in range(s.shape[1]):
        rep = average_abscissa_monitor(traj.times, s[:, k], window, threshold)
        entry = {"virus": k + 1, "max_average": rep.max_average}
        if threshold is not None:
            entry["below_threshold"] = rep.below_threshold
        out["viruses"].append(entry)
    return out


def _comparison(trajs: Dict[str, Trajectory]) -> Dict:
    totals = {v: [float(x) for x in trajs[v].states[-1].sum(axis=1)] for v in VARIANTS}
    lam = {v: _post_control_lambda(trajs[v]) for v in VARIANTS}
    none, p1, alg = (np.array(totals[v]) for v in VARIANTS)
    return {
        "final_total": totals,
        "post_control_lambda": lam,
        "reduction": {
            v: [float(1.0 - a / b) if b > 0 else 0.0 for a, b in zip(totals[v], totals["none"])]
            for v in ("p1", "alg1")
        },
        "ordering_holds": bool(np.all(none > p1) and np.all(p1 > alg)),
        "lambda_ordering_holds": bool(
            np.all(np.array(lam["none"]) > np.array(lam["p1"]))
            and np.all(np.array(lam["p1"]) > np.array(lam["alg1"]))
        ),
    }


def execute(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    """Build, classify, simulate every control variant and analyze; nothing is written."""
    built = build(scenario, seed)
    cls, cls_doc = _classification(built)
    trajs = {}
    runs = {}
    for variant in _variants(built):
        policy = None if variant == "none" else built.policy(variant)
        log.info("simulating %s (variant %s, backend %s)", scenario.name, variant, kernels.BACKEND)
        traj = simulate(
            built.spec, built.initial, built.integrator,
            control=policy, perturbation=built.perturbation, spectral_trace=True,
        )
        trajs[variant] = traj
        runs[variant] = _run_summary(traj, policy)
    main = trajs[_variants(built)[0]] if len(trajs) == 1 else trajs["none"]
    summary = {
        "scenario": scenario.name,
        "seed": built.seed,
        "n": scenario.n,
        "m": scenario.m,
        "t_end": built.integrator.t_end,
        "dt": built.integrator.dt,
        "classification": cls_doc,
        "runs": runs,
    }
    ndfe = _ndfe_check(built, cls, main)
    if ndfe is not None:
        summary["ndfe"] = ndfe
    par = _parallel_check(built, main)
    if par is not None:
        summary["parallel"] = par
    avg = _average_check(built, main)
    if avg is not None:
        summary["average_abscissa"] = avg
    if set(VARIANTS) <= set(trajs):
        summary["control_comparison"] = _comparison(trajs)
    return RunResult(built, trajs, summary)


# ---------------------------------------------------------------------------
# export


def _write_rows(path: Path, header: List[str], rows: np.ndarray):
    lines = [",".join(header)]
    lines.extend(",".join(_f(x) for x in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def trajectory_table(traj: Trajectory):
    m, n = traj.m, traj.n
    header = ["t"] + [f"p{k + 1}_{i + 1}" for k in range(m) for i in range(n)]
    cols = [traj.times[:, None], traj.states.reshape(len(traj), m * n)]
    diag = traj.diagnostics
    if "s" in diag:
        header += [f"s{k + 1}" for k in range(m)]
        cols.append(diag["s"])
    if "u" in diag:
        header += [f"u{k + 1}_{i + 1}" for k in range(m) for i in range(n)]
        cols.append(diag["u"].reshape(len(traj), m * n))
    if "positions" in diag:
        header += [f"{ax}_{i + 1}" for i in range(n) for ax in ("x", "y")]
        cols.append(diag["positions"].reshape(len(traj), 2 * n))
    return header, np.hstack(cols)


def spectral_table(traj: Trajectory):
    m = traj.m
    header = ["t"] + [f"s{k + 1}" for k in range(m)]
    cols = [traj.times[:, None], traj.diagnostics["s"]]
    if "s_controlled" in traj.diagnostics:
        header += [f"sc{k + 1}" for k in range(m)]
        cols.append(traj.diagnostics["s_controlled"])
    return header, np.hstack(cols)


def plot_table(traj: Trajectory, d0=DEFAULT_D0, r0=DEFAULT_R0):
    n = traj.n
    color = traj.m == 3
    header = ["t"]
    if "positions" in traj.diagnostics:
        header += [f"{ax}_{i + 1}" for i in range(n) for ax in ("x", "y")]
    if color:
        header += [f"{c}_{i + 1}" for i in range(n) for c in ("r", "g", "b")]
    header += [f"diameter_{i + 1}" for i in range(n)]
    rows = []
    for j in range(len(traj)):
        rgb, diam = plot_columns(traj.states[j], d0, r0, color=color)
        row = [[traj.times[j]]]
        if "positions" in traj.diagnostics:
            row.append(traj.diagnostics["positions"][j].ravel())
        if color:
            row.append(rgb.ravel())
        row.append(diam)
        rows.append(np.concatenate(row))
    return header, np.array(rows)


def export(result: RunResult, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = result.built.scenario
    outputs = set(scenario.outputs)
    plot = scenario.plot
    files = []
    single = len(result.trajectories) == 1
    for variant, traj in result.trajectories.items():
        suffix = "" if single else f"_{variant}"
        if "trajectory_csv" in outputs:
            path = out / f"trajectory{suffix}.csv"
            _write_rows(path, *trajectory_table(traj))
            files.append(path)
        if "spectral_trace_csv" in outputs:
            path = out / f"spectral_trace{suffix}.csv"
            _write_rows(path, *spectral_table(traj))
            files.append(path)
        if "plot_data_csv" in outputs:
            path = out / f"plot_data{suffix}.csv"
            _write_rows(path, *plot_table(traj, plot.get("d0", DEFAULT_D0), plot.get("r0", DEFAULT_R0)))
            files.append(path)
    if "summary_json" in outputs:
        path = out / "summary.json"
        path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
        files.append(path)
    result.files = files
    return files


def run(scenario: Scenario, out_dir=None, seed: Optional[int] = None) -> RunResult:
    result = execute(scenario, seed)
    if out_dir is not None:
        export(result, out_dir)
    return result

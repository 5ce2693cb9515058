"""Scenario files: parsing, validation, serialization and building.

A scenario is one JSON document. Infection matrices are given inline as
nested arrays or by a generator directive; randomness is drawn from the
scenario ``seed`` unless a directive pins its own. See README for the schema.
"""
import copy
import json
import json.decoder
import json.scanner
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .control import SOLVERS, ControlConfig, ControlPolicy
from .errors import MultivirusError, ScenarioError
from .integrator import METHODS, IntegratorConfig
from .mobility import BetaPerturbation, MobilityConfig, MobilityModel
from .model import InfectionState, SystemSpec, VirusSpec

OUTPUTS = ("trajectory_csv", "spectral_trace_csv", "summary_json", "plot_data_csv")
GRAPHS = ("complete", "ring", "random", "mobility")
BUNDLED_DIR = Path(__file__).parent / "scenarios"

# child indices of the scenario SeedSequence
_SEED_INITIAL, _SEED_MOBILITY, _SEED_PERTURB, _SEED_GRAPH0 = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# locating fields in the source text


class _LocatingDecoder(json.JSONDecoder):
    """JSON decoder that remembers where every object and array starts."""

    def __init__(self):
        super().__init__()
        self.offsets: Dict[int, int] = {}
        self._alive: List[Any] = []
        base_obj, base_arr = self.parse_object, self.parse_array

        def parse_object(s_and_end, *args):
            obj, end = base_obj(s_and_end, *args)
            self.offsets[id(obj)] = s_and_end[1] - 1
            self._alive.append(obj)
            return obj, end

        def parse_array(s_and_end, *args):
            arr, end = base_arr(s_and_end, *args)
            self.offsets[id(arr)] = s_and_end[1] - 1
            self._alive.append(arr)
            return arr, end

        self.parse_object = parse_object
        self.parse_array = parse_array
        self.scan_once = json.scanner.py_make_scanner(self)


class _Source:
    def __init__(self, text: str, doc, offsets):
        self.text = text
        self.doc = doc
        self.offsets = offsets

    def _line_at(self, offset):
        return self.text.count("\n", 0, offset) + 1

    def line_of(self, path: Tuple) -> Optional[int]:
        """Best-effort 1-based line of the value at ``path``."""
        node = self.doc
        offset = self.offsets.get(id(node), 0)
        for part in path:
            if isinstance(node, dict) and part in node:
                key_pos = self.text.find(json.dumps(part), offset)
                if key_pos >= 0:
                    offset = key_pos
                node = node[part]
            elif isinstance(node, list) and isinstance(part, int) and 0 <= part < len(node):
                node = node[part]
            else:
                break
            if isinstance(node, (dict, list)) and id(node) in self.offsets:
                offset = self.offsets[id(node)]
        return self._line_at(offset)


def _fmt_path(path):
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


class _Validator:
    def __init__(self, source: Optional[_Source]):
        self.source = source

    def fail(self, path, message):
        line = self.source.line_of(path) if self.source is not None else None
        raise ScenarioError(message, field=_fmt_path(path), line=line)

    def number(self, value, path, minimum=None, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {type(value).__name__}")
        if not np.isfinite(value):
            self.fail(path, "must be finite")
        if integer and int(value) != value:
            self.fail(path, "expected an integer")
        if positive and not value > 0:
            self.fail(path, f"must be positive, got {value}")
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
        return value

    def matrix(self, value, path, shape=None):
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, "expected a rectangular numeric array")
        if arr.ndim != 2:
            self.fail(path, f"expected a 2-D array, got {arr.ndim}-D")
        if shape is not None and arr.shape != shape:
            self.fail(path, f"expected shape {shape[0]}x{shape[1]}, got {arr.shape[0]}x{arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            self.fail(path, "entries must be finite")
        return arr

    def keys(self, obj, path, allowed, required=()):
        if not isinstance(obj, dict):
            self.fail(path, f"expected an object, got {type(obj).__name__}")
        for key in obj:
            if key not in allowed:
                self.fail(path + (key,), f"unknown field {key!r}")
        for key in required:
            if key not in obj:
                self.fail(path, f"missing required field {key!r}")


# ---------------------------------------------------------------------------
# the scenario document


@dataclass
class Scenario:
    """A validated scenario. Directive fields keep their JSON form, so
    ``parse(serialize(s)) == s``."""

    name: str
    n: int
    viruses: List[Dict[str, Any]]
    initial: Any
    integrator: Dict[str, Any]
    seed: int = 0
    description: str = ""
    mobility: Optional[Dict[str, Any]] = None
    perturbation: Optional[Dict[str, Any]] = None
    control: Optional[Dict[str, Any]] = None
    analysis: Dict[str, Any] = field(default_factory=dict)
    plot: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=lambda: list(OUTPUTS))

    @property
    def m(self) -> int:
        return len(self.viruses)

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            "name": self.name,
            "description": self.description,
            "seed": self.seed,
            "n": self.n,
            "viruses": copy.deepcopy(self.viruses),
            "initial": copy.deepcopy(self.initial),
            "integrator": dict(self.integrator),
            "analysis": dict(self.analysis),
            "plot": dict(self.plot),
            "outputs": list(self.outputs),
        }
        for key in ("mobility", "perturbation", "control"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = copy.deepcopy(value)
        return doc

    def with_solver(self, solver: str) -> "Scenario":
        """A copy whose control section uses ``solver`` and runs a single variant."""
        if self.control is None:
            raise ScenarioError("scenario has no control section", field="control")
        if solver not in SOLVERS:
            raise ScenarioError(f"solver must be one of {SOLVERS}", field="control.solver")
        other = copy.deepcopy(self)
        other.control["solver"] = solver
        other.control["compare"] = False
        return other


_TOP = {
    "name", "description", "seed", "n", "viruses", "initial", "integrator", "mobility",
    "perturbation", "control", "analysis", "plot", "outputs",
}
_VIRUS = {"beta", "delta"}
_DIRECTIVE = {"graph", "rate", "p", "seed", "weights", "self_loops", "directed"}
_INTEGRATOR = {"dt", "t_end", "method", "clamp_tol", "record_every"}
_MOBILITY = {"side", "center", "r_hat", "speed", "seed", "zero_diagonal", "z0", "phi0"}
_PERTURB = {"magnitude", "interval", "seed"}
_CONTROL = {
    "budget", "kappa", "weight_eps", "stop_eps", "max_reweight_iters", "solver", "interval",
    "compare",
}
_ANALYSIS = {"tail_window", "average_window", "average_threshold", "parallel_tol"}
_PLOT = {"d0", "r0"}


def _validate(doc, v: _Validator) -> Scenario:
    v.keys(doc, (), _TOP, required=("name", "n", "viruses", "initial", "integrator"))
    if not isinstance(doc["name"], str) or not doc["name"]:
        v.fail(("name",), "expected a non-empty string")
    n = int(v.number(doc["n"], ("n",), integer=True, minimum=1))
    seed = int(v.number(doc.get("seed", 0), ("seed",), integer=True, minimum=0))
    viruses = doc["viruses"]
    if not isinstance(viruses, list) or not viruses:
        v.fail(("viruses",), "expected a non-empty list of viruses")
    m = len(viruses)
    uses_mobility = False
    for k, entry in enumerate(viruses):
        path = ("viruses", k)
        v.keys(entry, path, _VIRUS, required=("beta", "delta"))
        beta = entry["beta"]
        if isinstance(beta, dict):
            v.keys(beta, path + ("beta",), _DIRECTIVE, required=("graph",))
            graph = beta["graph"]
            if graph not in GRAPHS:
                v.fail(path + ("beta", "graph"), f"unknown graph {graph!r}; expected one of {GRAPHS}")
            if graph == "mobility":
                uses_mobility = True
                v.number(beta.get("rate", 1.0), path + ("beta", "rate"), minimum=0)
                extra = set(beta) - {"graph", "rate"}
                if extra:
                    v.fail(path + ("beta", sorted(extra)[0]), "not allowed for mobility-generated beta")
            else:
                v.number(beta.get("rate", 1.0), path + ("beta", "rate"), minimum=0)
                if "p" in beta:
                    p = v.number(beta["p"], path + ("beta", "p"), minimum=0)
                    if p > 1:
                        v.fail(path + ("beta", "p"), "edge probability must be <= 1")
                if "seed" in beta:
                    v.number(beta["seed"], path + ("beta", "seed"), integer=True, minimum=0)
                if "weights" in beta:
                    w = beta["weights"]
                    if not (isinstance(w, list) and len(w) == 2):
                        v.fail(path + ("beta", "weights"), "expected [low, high]")
                    lo = v.number(w[0], path + ("beta", "weights", 0), minimum=0)
                    hi = v.number(w[1], path + ("beta", "weights", 1), minimum=0)
                    if hi < lo:
                        v.fail(path + ("beta", "weights"), "high must be >= low")
        else:
            arr = v.matrix(beta, path + ("beta",), shape=(n, n))
            if np.any(arr < 0):
                v.fail(path + ("beta",), "infection rates must be non-negative")
        delta = entry["delta"]
        if isinstance(delta, list):
            if len(delta) != n:
                v.fail(path + ("delta",), f"expected {n} healing rates, got {len(delta)}")
            for i, d in enumerate(delta):
                v.number(d, path + ("delta", i), minimum=0)
        else:
            v.number(delta, path + ("delta",), minimum=0)

    mobility = doc.get("mobility")
    if uses_mobility and mobility is None:
        v.fail(("mobility",), "mobility-generated beta requires a mobility section")
    if mobility is not None:
        if not uses_mobility:
            v.fail(("mobility",), "mobility section given but no virus uses graph 'mobility'")
        if any(not isinstance(e["beta"], dict) or e["beta"].get("graph") != "mobility" for e in viruses):
            v.fail(("viruses",), "either every virus uses mobility-generated beta or none does")
        v.keys(mobility, ("mobility",), _MOBILITY, required=("side",))
        v.number(mobility["side"], ("mobility", "side"), positive=True)
        v.number(mobility.get("r_hat", 10.0), ("mobility", "r_hat"), positive=True)
        center = mobility.get("center", [0.0, 0.0])
        if not (isinstance(center, list) and len(center) == 2):
            v.fail(("mobility", "center"), "expected [x, y]")
        speed = mobility.get("speed", [0.5, 1.5])
        if not (isinstance(speed, list) and len(speed) == 2) or speed[0] > speed[1] or speed[0] < 0:
            v.fail(("mobility", "speed"), "expected [low, high] with 0 <= low <= high")
        for key in ("z0", "phi0"):
            if key in mobility:
                v.matrix(mobility[key], ("mobility", key), shape=(n, 2))
        if "seed" in mobility:
            v.number(mobility["seed"], ("mobility", "seed"), integer=True, minimum=0)

    pert = doc.get("perturbation")
    if pert is not None:
        v.keys(pert, ("perturbation",), _PERTURB, required=("magnitude", "interval"))
        mag = v.number(pert["magnitude"], ("perturbation", "magnitude"), minimum=0)
        if mag > 1:
            v.fail(("perturbation", "magnitude"), "must lie in [0, 1]")
        v.number(pert["interval"], ("perturbation", "interval"), positive=True)

    init = doc["initial"]
    if isinstance(init, dict):
        v.keys(init, ("initial",), {"random", "uniform"})
        if len(init) != 1:
            v.fail(("initial",), "expected exactly one of 'random' or 'uniform'")
        if "uniform" in init:
            x = v.number(init["uniform"], ("initial", "uniform"), minimum=0)
            if x * m > 1:
                v.fail(("initial", "uniform"), f"{m} viruses at {x} exceed a total of 1")
        else:
            rnd = init["random"]
            v.keys(rnd, ("initial", "random"), {"max_total", "seed"})
            mt = v.number(rnd.get("max_total", 1.0), ("initial", "random", "max_total"), minimum=0)
            if mt > 1:
                v.fail(("initial", "random", "max_total"), "must be <= 1")
    else:
        arr = v.matrix(init, ("initial",))
        if arr.shape != (m, n):
            v.fail(("initial",), f"expected {m}x{n} (viruses x agents), got {arr.shape[0]}x{arr.shape[1]}")
        if arr.min() < 0 or arr.max() > 1 or arr.sum(axis=0).max() > 1:
            v.fail(("initial",), "initial state must have entries in [0, 1] and agent totals <= 1")

    integ = doc["integrator"]
    v.keys(integ, ("integrator",), _INTEGRATOR, required=("t_end",))
    v.number(integ.get("dt", 1e-3), ("integrator", "dt"), positive=True)
    v.number(integ["t_end"], ("integrator", "t_end"), minimum=0)
    if integ.get("method", "rk4") not in METHODS:
        v.fail(("integrator", "method"), f"expected one of {sorted(METHODS)}")
    v.number(integ.get("clamp_tol", 1e-9), ("integrator", "clamp_tol"), minimum=0)
    v.number(integ.get("record_every", 1), ("integrator", "record_every"), integer=True, minimum=1)

    ctrl = doc.get("control")
    if ctrl is not None:
        v.keys(ctrl, ("control",), _CONTROL, required=("budget",))
        budget = ctrl["budget"]
        if isinstance(budget, list):
            if len(budget) != m:
                v.fail(("control", "budget"), f"expected {m} budgets (one per virus), got {len(budget)}")
            for k, b in enumerate(budget):
                v.number(b, ("control", "budget", k), minimum=0)
        else:
            v.number(budget, ("control", "budget"), minimum=0)
        v.number(ctrl.get("kappa", 0.05), ("control", "kappa"), minimum=0)
        v.number(ctrl.get("weight_eps", 1e-4), ("control", "weight_eps"), positive=True)
        v.number(ctrl.get("stop_eps", 1e-8), ("control", "stop_eps"), positive=True)
        v.number(ctrl.get("max_reweight_iters", 50), ("control", "max_reweight_iters"), integer=True, minimum=1)
        if ctrl.get("solver", "p1") not in SOLVERS:
            v.fail(("control", "solver"), f"expected one of {SOLVERS}")
        if ctrl.get("interval") is not None:
            v.number(ctrl["interval"], ("control", "interval"), positive=True)
        if not isinstance(ctrl.get("compare", False), bool):
            v.fail(("control", "compare"), "expected true or false")

    analysis = doc.get("analysis", {})
    v.keys(analysis, ("analysis",), _ANALYSIS)
    for key in ("tail_window", "average_window", "parallel_tol"):
        if key in analysis:
            v.number(analysis[key], ("analysis", key), positive=True)
    if "average_threshold" in analysis:
        thr = v.number(analysis["average_threshold"], ("analysis", "average_threshold"))
        if thr >= 0:
            v.fail(("analysis", "average_threshold"), "must be negative")

    plot = doc.get("plot", {})
    v.keys(plot, ("plot",), _PLOT)
    for key in plot:
        v.number(plot[key], ("plot", key), minimum=0)

    outputs = doc.get("outputs", list(OUTPUTS))
    if not isinstance(outputs, list):
        v.fail(("outputs",), "expected a list")
    for i, o in enumerate(outputs):
        if o not in OUTPUTS:
            v.fail(("outputs", i), f"unknown output {o!r}; expected one of {OUTPUTS}")

    return Scenario(
        name=doc["name"],
        description=doc.get("description", ""),
        seed=seed,
        n=n,
        viruses=copy.deepcopy(viruses),
        initial=copy.deepcopy(init),
        integrator=dict(integ),
        mobility=copy.deepcopy(mobility),
        perturbation=copy.deepcopy(pert),
        control=copy.deepcopy(ctrl),
        analysis=dict(analysis),
        plot=dict(plot),
        outputs=list(outputs),
    )


def parse(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    decoder = _LocatingDecoder()
    try:
        doc = decoder.decode(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    return _validate(doc, _Validator(_Source(text, doc, decoder.offsets)))


def from_dict(doc: Dict[str, Any]) -> Scenario:
    return _validate(copy.deepcopy(doc), _Validator(None))


def serialize(scenario: Scenario) -> str:
    return json.dumps(scenario.to_dict(), indent=2) + "\n"


def bundled_scenarios() -> Dict[str, Path]:
    return {p.stem: p for p in sorted(BUNDLED_DIR.glob("*.json"))}


def resolve(path_or_name) -> Path:
    """A path on disk, or the name of a bundled scenario."""
    path = Path(path_or_name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if str(path_or_name) in bundled:
        return bundled[str(path_or_name)]
    raise ScenarioError(f"no such scenario file or bundled scenario: {path_or_name}")


def load(path_or_name) -> Scenario:
    return parse(resolve(path_or_name).read_text())


# ---------------------------------------------------------------------------
# building runtime objects


@dataclass
class BuiltScenario:
    scenario: Scenario
    seed: int
    spec: SystemSpec
    initial: InfectionState
    integrator: IntegratorConfig
    control: Optional[ControlConfig]
    perturbation: Optional[BetaPerturbation]
    mobility: Optional[MobilityModel]

    def policy(self, solver: Optional[str] = None) -> Optional[ControlPolicy]:
        if self.control is None:
            return None
        cfg = self.control
        if solver is not None and solver != cfg.solver:
            cfg = ControlConfig(**{**cfg.__dict__, "solver": solver})
        return ControlPolicy(cfg)


def _ring(n, directed):
    a = np.zeros((n, n))
    for i in range(n):
        a[(i + 1) % n, i] = 1.0
        if not directed:
            a[i, (i + 1) % n] = 1.0
    if n == 1:
        a[:] = 0.0
    return a


def _graph_matrix(directive, n, rng):
    kind = directive["graph"]
    rate = float(directive.get("rate", 1.0))
    directed = bool(directive.get("directed", False))
    if kind == "complete":
        a = np.ones((n, n))
        np.fill_diagonal(a, 0.0)
    elif kind == "ring":
        a = _ring(n, directed)
    else:
        p = float(directive.get("p", 0.3))
        mask = rng.random((n, n)) < p
        if not directed:
            mask = np.triu(mask, 1)
            mask = mask | mask.T
        # a ring backbone keeps random graphs strongly connected
        a = np.maximum(mask.astype(float), _ring(n, directed))
        np.fill_diagonal(a, 0.0)
    if directive.get("self_loops", False):
        np.fill_diagonal(a, 1.0)
    if "weights" in directive:
        lo, hi = directive["weights"]
        w = rng.uniform(lo, hi, size=(n, n))
        if not directed:
            w = np.triu(w) + np.triu(w, 1).T
        a = a * w
    return rate * a


def _seed_of(directive, fallback):
    if isinstance(directive, dict) and "seed" in directive:
        return np.random.SeedSequence(int(directive["seed"]))
    return fallback


def build(scenario: Scenario, seed: Optional[int] = None) -> BuiltScenario:
    """Turn a validated scenario into a system, initial state and configs."""
    seed = scenario.seed if seed is None else int(seed)
    n, m = scenario.n, scenario.m
    children = np.random.SeedSequence(seed).spawn(_SEED_GRAPH0 + m)
    try:
        mobility = None
        if scenario.mobility is not None:
            mob = scenario.mobility
            rates = [float(v["beta"].get("rate", 1.0)) for v in scenario.viruses]
            center = tuple(float(x) for x in mob.get("center", [0.0, 0.0]))
            side = float(mob["side"])
            r_hat = float(mob.get("r_hat", 10.0))
            zero_diag = bool(mob.get("zero_diagonal", False))
            rng = np.random.default_rng(_seed_of(mob, children[_SEED_MOBILITY]))
            cfg = MobilityConfig.random(
                n, rates, side, center, r_hat, tuple(mob.get("speed", [0.5, 1.5])), rng, zero_diag
            )
            if "z0" in mob or "phi0" in mob:
                cfg = MobilityConfig(
                    mob.get("z0", cfg.z0), mob.get("phi0", cfg.phi0), center, side, r_hat,
                    rates, None, zero_diag,
                )
            else:
                cfg = MobilityConfig(cfg.z0, cfg.phi0, center, side, r_hat, rates, seed, zero_diag)
            mobility = MobilityModel(cfg)
            betas0 = mobility.beta_at(0.0)
        else:
            betas0 = []
            for k, entry in enumerate(scenario.viruses):
                beta = entry["beta"]
                if isinstance(beta, dict):
                    rng = np.random.default_rng(_seed_of(beta, children[_SEED_GRAPH0 + k]))
                    betas0.append(_graph_matrix(beta, n, rng))
                else:
                    betas0.append(np.array(beta, dtype=float))
        viruses = []
        for k, entry in enumerate(scenario.viruses):
            delta = entry["delta"]
            delta = np.array(delta, dtype=float) if isinstance(delta, list) else np.full(n, float(delta))
            viruses.append(VirusSpec(betas0[k], delta))
        spec = SystemSpec(viruses, time_variation=mobility)

        init = scenario.initial
        if isinstance(init, dict) and "uniform" in init:
            initial = InfectionState(np.full((m, n), float(init["uniform"])))
        elif isinstance(init, dict):
            rnd = init["random"]
            rng = np.random.default_rng(_seed_of(rnd, children[_SEED_INITIAL]))
            initial = InfectionState.random(m, n, rng, float(rnd.get("max_total", 1.0)))
        else:
            initial = InfectionState(np.array(init, dtype=float))

        integ = scenario.integrator
        integrator = IntegratorConfig(
            dt=float(integ.get("dt", 1e-3)),
            t_end=float(integ["t_end"]),
            method=integ.get("method", "rk4"),
            clamp_tol=float(integ.get("clamp_tol", 1e-9)),
            record_every=int(integ.get("record_every", 1)),
        )

        control = None
        if scenario.control is not None:
            c = scenario.control
            control = ControlConfig(
                budget=c["budget"],
                kappa=float(c.get("kappa", 0.05)),
                weight_eps=float(c.get("weight_eps", 1e-4)),
                stop_eps=float(c.get("stop_eps", 1e-8)),
                max_reweight_iters=int(c.get("max_reweight_iters", 50)),
                solver=c.get("solver", "p1"),
                interval=c.get("interval"),
            )

        perturbation = None
        if scenario.perturbation is not None:
            pt = scenario.perturbation
            pseed = int(pt["seed"]) if "seed" in pt else int(children[_SEED_PERTURB].generate_state(1)[0])
            perturbation = BetaPerturbation(float(pt["magnitude"]), float(pt["interval"]), pseed)
    except ScenarioError:
        raise
    except MultivirusError as exc:
        raise ScenarioError(str(exc)) from exc
    return BuiltScenario(scenario, seed, spec, initial, integrator, control, perturbation, mobility)

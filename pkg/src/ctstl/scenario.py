"""Planning scenarios: the data a run needs, and the YAML file format.

A scenario file looks like::

    name: example1
    system:
      A: [[0, 1], [0, 0]]
      B: [[0], [1]]
    x0: [1, -1]
    t_f: 2.0
    N: 10
    formula: "F[0.2,0.8](x1 <= -2) & F[1.0,1.4](x1 >= 2)"
    config:
      u_lower: [-50]
      u_upper: [50]
      always_mode: direct      # direct | ecbf | none
    cbf_predicates:
      - {predicate: "x2 >= -10", mode: direct}
      - {predicate: "x2 <= 10", mode: ecbf, poles: [-2]}

Matrices are row-major nested lists.
"""
import hashlib
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import LinearSystem
from .errors import ScenarioError
from .stl import Predicate, parse

ALWAYS_MODES = ("direct", "ecbf", "none")
SAFETY_MODES = ("direct", "zcbf", "ecbf")


@dataclass(frozen=True)
class EncodingConfig:
    big_M: float = 1e4
    eps_strict: float = 1e-6
    u_lower: tuple = None
    u_upper: tuple = None
    ecbf_poles: tuple = None
    always_mode: str = "direct"
    sign_binaries: bool = True
    tighten_big_m: bool = True
    beta_mode: str = "free-variable"
    objective_weighting: str = "interval"

    def __post_init__(self):
        if not self.big_M > 0:
            raise ScenarioError("big_M must be positive")
        if self.always_mode not in ALWAYS_MODES:
            raise ScenarioError(f"always_mode must be one of {ALWAYS_MODES}")
        if self.ecbf_poles is not None:
            poles = tuple(float(p) for p in self.ecbf_poles)
            if any(p >= 0 for p in poles):
                raise ScenarioError("ECBF poles must be negative reals")
            object.__setattr__(self, "ecbf_poles", poles)
        for name in ("u_lower", "u_upper"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in np.atleast_1d(v)))
        if self.u_lower is not None and self.u_upper is not None:
            if len(self.u_lower) != len(self.u_upper):
                raise ScenarioError("u_lower and u_upper lengths differ")
            if any(lo > hi for lo, hi in zip(self.u_lower, self.u_upper)):
                raise ScenarioError("u_lower must not exceed u_upper")

    def input_bounds(self, m):
        lo = np.full(m, -np.inf) if self.u_lower is None else np.asarray(self.u_lower, dtype=float)
        hi = np.full(m, np.inf) if self.u_upper is None else np.asarray(self.u_upper, dtype=float)
        if lo.shape != (m,) or hi.shape != (m,):
            raise ScenarioError(f"input bounds must have length {m}")
        return lo, hi

    def poles_for(self, r):
        if self.ecbf_poles is None:
            return tuple(-2.0 - i for i in range(r))
        if len(self.ecbf_poles) != r:
            raise ScenarioError(f"need {r} ECBF poles for relative degree {r}, got {len(self.ecbf_poles)}")
        return self.ecbf_poles


@dataclass(frozen=True)
class SafetySpec:
    """A predicate enforced between every pair of nodes, not only at them."""

    predicate: Predicate
    mode: str = "direct"
    poles: tuple = None
    alpha: float = 1.0
    text: str = ""

    def __post_init__(self):
        if self.mode not in SAFETY_MODES:
            raise ScenarioError(f"safety mode must be one of {SAFETY_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class Scenario:
    system: LinearSystem
    x0: tuple
    formula: str
    t_f: float
    N: int
    config: EncodingConfig = field(default_factory=EncodingConfig)
    cbf_predicates: tuple = ()
    name: str = "scenario"

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        if len(x0) != self.system.n:
            raise ScenarioError(f"x0 has length {len(x0)}, expected {self.system.n}")
        if not all(np.isfinite(x0)):
            raise ScenarioError("x0 must be finite")
        if int(self.N) < 1:
            raise ScenarioError("N must be at least 1")
        if not self.t_f > 0:
            raise ScenarioError("t_f must be positive")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "t_f", float(self.t_f))
        self.formula_ast()

    def formula_ast(self):
        return parse(self.formula or "true", self.system.n)

    def with_config(self, **changes):
        return replace(self, config=replace(self.config, **changes))


def _matrix(value, what):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what} is not a numeric matrix") from exc
    return arr


def scenario_from_dict(data):
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    try:
        sysd = data["system"]
        system = LinearSystem(_matrix(sysd["A"], "A"), _matrix(sysd["B"], "B"),
                              None if sysd.get("C") is None else _matrix(sysd["C"], "C"))
        known = {f.name for f in fields(EncodingConfig)}
        cfg_raw = dict(data.get("config") or {})
        unknown = set(cfg_raw) - known
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        for key in ("big_M", "eps_strict"):
            if key in cfg_raw:
                cfg_raw[key] = float(cfg_raw[key])
        config = EncodingConfig(**cfg_raw)
        safety = []
        for item in data.get("cbf_predicates") or ():
            text = item["predicate"]
            pred = parse(text, system.n)
            if not isinstance(pred, Predicate):
                raise ScenarioError(f"cbf predicate {text!r} is not a single predicate")
            poles = item.get("poles")
            safety.append(SafetySpec(pred, item.get("mode", "direct"),
                                     None if poles is None else tuple(float(p) for p in poles),
                                     float(item.get("alpha", 1.0)), text))
        return Scenario(system, data["x0"], data.get("formula", "true"), data["t_f"], data["N"],
                        config, tuple(safety), data.get("name", "scenario"))
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing field {exc.args[0]!r}") from exc


def load_scenario(source):
    """Load a scenario from a path or a bundled scenario name."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    else:
        text = bundled_text(str(source))
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse scenario: {exc}") from exc
    return scenario_from_dict(data)


def bundled_names():
    files = resources.files("ctstl") / "scenarios"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def bundled_text(name):
    files = resources.files("ctstl") / "scenarios"
    target = files / f"{name}.yaml"
    if not target.is_file():
        raise ScenarioError(f"no scenario file or bundled example named {name!r}; "
                            f"bundled: {', '.join(bundled_names())}")
    return target.read_text()


def bundled_checksum(name):
    return hashlib.sha256(bundled_text(name).encode()).hexdigest()

"""Run configuration, report serialization and CSV writers.

Configs are YAML (JSON is accepted too, being a subset). Every section is
validated by a strict schema: unknown keys are errors, and errors name the
offending key path together with its line in the source file.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import IO, Any, Dict, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import ConfigError, ModelSpec, ObliviousStrategy, PopulationState, TruncatedStateSpace
from .dp import DpSolveOptions
from .equilibrium import SeSolveOptions, SolveReport
from .invariant import DriftReport, InvariantOptions
from .models import build_model, param_names

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Strict):
    family: str
    params: Dict[str, Any] = Field(default_factory=dict)


class SolverSection(_Strict):
    damping: float = Field(0.5, gt=0, le=1)
    adaptive_damping: bool = True
    min_damping: float = Field(1e-3, gt=0, le=1)
    fp_tol: float = Field(1e-8, gt=0)
    max_outer_iters: int = Field(1000, ge=1)
    dp_tol: float = Field(1e-11, gt=0)
    dp_max_iters: int = Field(20_000, ge=1)
    refine: bool = True
    refine_method: Literal["slope", "golden"] = "slope"
    policy_sweeps: int = Field(20, ge=0)
    invariant_method: Literal["power", "direct"] = "power"
    invariant_tol: float = Field(1e-12, gt=0)
    warm_start: bool = True
    smoothing: Literal["auto", "off", "always"] = "auto"
    logit_temperature: float = Field(1e-2, gt=0)
    boundary_width: int = Field(10, ge=1)

    def options(self) -> SeSolveOptions:
        return SeSolveOptions(
            damping=self.damping,
            adaptive_damping=self.adaptive_damping,
            min_damping=min(self.min_damping, self.damping),
            fp_tol=self.fp_tol,
            max_outer_iters=self.max_outer_iters,
            dp=DpSolveOptions(
                tol=self.dp_tol,
                max_iters=self.dp_max_iters,
                refine=self.refine,
                refine_method=self.refine_method,
                policy_sweeps=self.policy_sweeps,
            ),
            inv=InvariantOptions(method=self.invariant_method, tol=self.invariant_tol),
            warm_start=self.warm_start,
            smoothing=self.smoothing,
            logit_temperature=self.logit_temperature,
            boundary_width=self.boundary_width,
        )


class SimulationSection(_Strict):
    m: List[int] = Field(default_factory=lambda: [100])
    T: int = Field(10, ge=1)
    seed: int = Field(0, ge=0, lt=2**63)
    replications: int = Field(20, ge=1)
    tagged: int = Field(0, ge=0)
    equilibrium: Optional[str] = None
    deviation: bool = False
    perturbation: float = Field(0.1, gt=0, le=1)

    @field_validator("m")
    @classmethod
    def _players(cls, v):
        if not v:
            raise ValueError("at least one population size is required")
        bad = [m for m in v if m < 2]
        if bad:
            raise ValueError(f"population sizes must be at least 2, got {bad}")
        return v


class SweepSection(_Strict):
    parameter: str
    values: List[Union[int, float, str, bool]] = Field(default_factory=list)


class OutputSection(_Strict):
    directory: str = "out"
    json_indent: int = Field(2, ge=0)
    include_value: bool = True


class RunConfig(_Strict):
    model: ModelSection
    solver: SolverSection = Field(default_factory=SolverSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    sweep: Optional[SweepSection] = None
    output: OutputSection = Field(default_factory=OutputSection)

    def build_model(self, **overrides) -> ModelSpec:
        return build_model(self.model.family, {**self.model.params, **overrides})


def _line_of(text: str, loc) -> Optional[int]:
    """1-based line of the YAML node at key path ``loc``, or of its deepest existing parent."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [(k, v) for k, v in node.value if k.value == str(key)]
            if not match:
                break
            k, node = match[0]
            line = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _where(source: str, text: str, loc) -> str:
    path = ".".join(str(k) for k in loc) or "<root>"
    line = _line_of(text, loc) if text else None
    return f"{source}:{line}: {path}" if line else f"{source}: {path}"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and fully validate a config, including the model parameters."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = [f"{_where(source, text, e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("; ".join(msgs)) from None
    try:
        cfg.build_model()
    except (ConfigError, TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(source, text, ('model', 'params'))}: {exc}") from None
    if cfg.sweep is not None:
        names = param_names(cfg.model.family)
        if cfg.sweep.parameter not in names:
            raise ConfigError(
                f"{_where(source, text, ('sweep', 'parameter'))}: "
                f"{cfg.sweep.parameter!r} is not a parameter of {cfg.model.family}"
            )
    for m in cfg.simulation.m:
        if cfg.simulation.tagged >= m:
            raise ConfigError(f"{_where(source, text, ('simulation', 'tagged'))}: tagged player must be below m={m}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# -- reports -------------------------------------------------------------


def _num(x):
    """JSON-safe float: non-finite values become strings so output stays strict JSON."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _unnum(x):
    return float(x) if isinstance(x, str) else x


def _nums(a):
    return [_num(v) for v in np.asarray(a, dtype=float).ravel()]


def population_to_dict(f: PopulationState) -> dict:
    return {
        "dim": f.space.dim,
        "x_max": f.space.x_max,
        "p": f.p,
        "actions": None if f.actions is None else list(f.actions),
        "mass": _nums(f.mass),
    }


def population_from_dict(d: dict) -> PopulationState:
    space = TruncatedStateSpace(int(d["dim"]), int(d["x_max"]))
    actions = d.get("actions")
    mass = np.asarray(d["mass"], dtype=float)
    if actions is not None:
        mass = mass.reshape(space.size, len(actions))
    return PopulationState(space, mass, p=int(d["p"]), actions=None if actions is None else tuple(actions))


def strategy_to_dict(mu: ObliviousStrategy) -> dict:
    return {
        "kind": mu.kind,
        "support": None if mu.support is None else list(mu.support),
        "table": np.asarray(mu.table).tolist(),
    }


def strategy_from_dict(d: dict) -> ObliviousStrategy:
    if d["kind"] == "pure":
        return ObliviousStrategy.pure(d["table"])
    return ObliviousStrategy.mixed(np.asarray(d["table"], dtype=float), d["support"])


def report_to_dict(report: SolveReport, model: Optional[ModelSpec] = None, include_value: bool = True) -> dict:
    """JSON-ready view of a solve; deterministic key order, no timestamps."""
    out = {"schema_version": SCHEMA_VERSION}
    if model is not None:
        out["family"] = model.family
        out["params"] = json.loads(json.dumps(dict(model.params), default=list))
    out.update(
        {
            "converged": report.converged,
            "iterations": report.iterations,
            "fp_gap": _num(report.fp_gap),
            "bellman_residual": _num(report.bellman_residual),
            "invariance_residual": _num(report.invariance_residual),
            "boundary_mass": _num(report.boundary_mass),
            "tail_moment": _num(report.tail_moment),
            "tail_eta": report.tail_eta,
            "mean_state": _num(report.mean_state),
            "smoothing_used": report.smoothing_used,
            "polished": report.polished,
            "drift": {
                "k_bar": report.drift.k_bar,
                "worst_beyond": None if report.drift.worst_beyond is None else _num(report.drift.worst_beyond),
                "values": np.asarray(report.drift.drift).tolist(),
            },
            "trace": _nums(report.trace),
            "boundary_trace": _nums(report.boundary_trace),
            "moment_trace": _nums(report.moment_trace),
            "strategy": strategy_to_dict(report.strategy),
            "population": population_to_dict(report.population),
            "f0": population_to_dict(report.f0),
            "value": _nums(report.value) if include_value and report.value is not None else None,
        }
    )
    return out


def report_from_dict(d: dict) -> SolveReport:
    drift = d["drift"]
    worst = drift["worst_beyond"]
    return SolveReport(
        strategy=strategy_from_dict(d["strategy"]),
        population=population_from_dict(d["population"]),
        bellman_residual=_unnum(d["bellman_residual"]),
        invariance_residual=_unnum(d["invariance_residual"]),
        fp_gap=_unnum(d["fp_gap"]),
        boundary_mass=_unnum(d["boundary_mass"]),
        tail_moment=_unnum(d["tail_moment"]),
        tail_eta=int(d["tail_eta"]),
        drift=DriftReport(np.asarray(drift["values"], dtype=float), drift["k_bar"], None if worst is None else _unnum(worst)),
        trace=[_unnum(v) for v in d["trace"]],
        boundary_trace=[_unnum(v) for v in d["boundary_trace"]],
        moment_trace=[_unnum(v) for v in d["moment_trace"]],
        converged=bool(d["converged"]),
        iterations=int(d["iterations"]),
        f0=population_from_dict(d["f0"]),
        smoothing_used=bool(d["smoothing_used"]),
        polished=bool(d.get("polished", False)),
        value=None if d.get("value") is None else np.asarray([_unnum(v) for v in d["value"]]),
    )


def dumps(obj, indent: int = 2) -> str:
    return json.dumps(obj, indent=indent or None, allow_nan=False) + "\n"


def write_json(path, obj, indent: int = 2) -> None:
    Path(path).write_text(dumps(obj, indent))


def read_report(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read equilibrium artifact {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"equilibrium artifact {path} is not valid JSON: {exc}") from None


# -- CSV -----------------------------------------------------------------


def _writer(fh: IO[str]):
    return csv.writer(fh, lineterminator="\n")


def equilibrium_columns(f: PopulationState) -> List[str]:
    cols = ["state_index"] + [f"x{i + 1}" for i in range(f.space.dim)]
    if f.actions is not None:
        cols.append("action")
    return cols + ["mass"]


def write_equilibrium_csv(fh: IO[str], f: PopulationState) -> None:
    """One row per state (or state-action pair) in index order."""
    w = _writer(fh)
    w.writerow(equilibrium_columns(f))
    states = f.space.states
    for i, x in enumerate(states):
        coords = [int(c) for c in x]
        if f.actions is None:
            w.writerow([i, *coords, repr(float(f.mass[i]))])
        else:
            for j, s in enumerate(f.actions):
                w.writerow([i, *coords, repr(float(s)), repr(float(f.mass[i, j]))])


SWEEP_COLUMNS = (
    "parameter",
    "value",
    "converged",
    "iterations",
    "fp_gap",
    "bellman_residual",
    "invariance_residual",
    "boundary_mass",
    "tail_moment",
    "mean_state",
    "error",
)


def write_sweep_csv(fh: IO[str], rows: List[dict]) -> None:
    w = _writer(fh)
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow(["" if row.get(c) is None else row[c] for c in SWEEP_COLUMNS])

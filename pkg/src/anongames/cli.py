"""Command-line entry point: ``anongames {solve,verify,simulate,sweep}``.

Exit codes: 0 ok, 1 configuration error, 2 solver non-convergence,
3 condition-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import ConfigError, ModelContractError, NonConvergenceError
from .dp import policy_value
from .equilibrium import best_response, solve_se, verify_conditions
from .io import (
    RunConfig,
    SolverSection,
    SimulationSection,
    load_config,
    population_from_dict,
    read_report,
    report_to_dict,
    strategy_from_dict,
    write_equilibrium_csv,
    write_json,
    write_sweep_csv,
)
from .models import build_model
from .simulate import SimConfig, deviation_gap, perturbed_population, simulate_population

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2
EXIT_CONDITION = 3

DEVIATION_NOTE = (
    "gaps are estimated for best responses to a perturbed population only, played for T "
    "periods before reverting to the equilibrium strategy with its exact continuation value; "
    "they lower-bound the gain of the best unilateral deviation"
)

log = logging.getLogger("anongames")


def _out_dir(cfg: RunConfig, override: Optional[str]) -> Path:
    out = Path(override or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pool(threads: int, n_tasks: int):
    return ProcessPoolExecutor(max_workers=min(threads, n_tasks)) if threads > 1 and n_tasks > 1 else None


def _map(fn, tasks, threads):
    pool = _pool(threads, len(tasks))
    if pool is None:
        return [fn(t) for t in tasks]
    with pool:
        return list(pool.map(fn, tasks))


# -- solve ---------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    model = cfg.build_model()
    try:
        report = solve_se(model, opts=cfg.solver.options())
    except NonConvergenceError as exc:
        write_json(out / "solve_report.json", _failure(model, exc), cfg.output.json_indent)
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    write_json(out / "solve_report.json", report_to_dict(report, model, cfg.output.include_value), cfg.output.json_indent)
    with open(out / "equilibrium.csv", "w", newline="") as fh:
        write_equilibrium_csv(fh, report.population)
    log.info(
        "converged=%s iterations=%d fp_gap=%.3e boundary_mass=%.3e",
        report.converged, report.iterations, report.fp_gap, report.boundary_mass,
    )
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def _failure(model, exc: NonConvergenceError) -> dict:
    return {
        "family": model.family,
        "converged": False,
        "error": str(exc),
        "last_residual": float(exc.last_residual),
        "iterations": exc.iterations,
    }


# -- verify --------------------------------------------------------------


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    report = verify_conditions(cfg.build_model())
    write_json(out / "verify_report.json", report.to_dict(), cfg.output.json_indent)
    for c in report.conditions + ([report.drift_check] if report.drift_check else []):
        log.info("%-40s %s", c.name, "pass" if c.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CONDITION


# -- simulate ------------------------------------------------------------


def _simulate_one(task):
    family, params, artifact, sim, m = task
    sim = SimulationSection.model_validate(sim)
    model = build_model(family, params)
    mu = strategy_from_dict(artifact["strategy"])
    f = population_from_dict(artifact["population"])
    scfg = SimConfig(m=m, T=sim.T, seed=sim.seed, replications=sim.replications, tagged=sim.tagged)
    trace = simulate_population(model, mu, f, scfg)
    gap = None
    if sim.deviation:
        dev = best_response(model, perturbed_population(f, sim.perturbation))
        value = artifact.get("value")
        cont = np.asarray(value, dtype=float) if value is not None else policy_value(model, mu, f)
        gap = deviation_gap(model, mu, f, dev, scfg, continuation=cont).to_dict()
    return trace, gap


def _params_match(model, artifact) -> bool:
    ours = json.loads(json.dumps(dict(model.params), default=list))
    return artifact.get("family") == model.family and artifact.get("params") == ours


def cmd_simulate(cfg: RunConfig, out: Path, threads: int = 1, equilibrium: Optional[str] = None) -> int:
    path = equilibrium or cfg.simulation.equilibrium
    if path is None:
        raise ConfigError("simulate needs an equilibrium artifact: set simulation.equilibrium or pass --equilibrium")
    artifact = read_report(path)
    if "strategy" not in artifact or "population" not in artifact:
        raise ConfigError(f"{path} does not contain an equilibrium strategy and population")
    model = cfg.build_model()
    if not _params_match(model, artifact):
        raise ConfigError(f"{path} was solved for a different model or parameters than the config")

    sim = cfg.simulation
    tasks = [(cfg.model.family, dict(cfg.model.params), artifact, sim.model_dump(), m) for m in sim.m]
    results = _map(_simulate_one, tasks, threads)

    with open(out / "simulation.csv", "w", newline="") as fh:
        for k, (trace, _) in enumerate(results):
            trace.write_csv(fh, header=(k == 0))
    per_m = []
    for m, (trace, gap) in zip(sim.m, results):
        final = trace.distances[:, -1]
        per_m.append(
            {
                "m": m,
                "median_distance_T": float(np.median(final)),
                "mean_distance_T": float(final.mean()),
                "distance_quantiles_T": [float(q) for q in np.quantile(final, [0.1, 0.5, 0.9])],
                "deviation": gap,
            }
        )
    medians = [row["median_distance_T"] for row in per_m]
    summary = {
        "family": model.family,
        "T": sim.T,
        "seed": sim.seed,
        "replications": sim.replications,
        "tagged": sim.tagged,
        "per_m": per_m,
        "median_decreasing_in_m": bool(all(b < a for a, b in zip(medians, medians[1:]))),
        "deviation_note": DEVIATION_NOTE if sim.deviation else None,
    }
    write_json(out / "simulation_summary.json", summary, cfg.output.json_indent)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------


def _sweep_point(task):
    family, params, parameter, value, solver = task
    row = {"parameter": parameter, "value": value, "converged": False}
    try:
        model = build_model(family, {**params, parameter: value})
        report = solve_se(model, opts=SolverSection.model_validate(solver).options())
    except (ConfigError, NonConvergenceError, ModelContractError, ValueError, TypeError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(
        converged=report.converged,
        iterations=report.iterations,
        fp_gap=report.fp_gap,
        bellman_residual=report.bellman_residual,
        invariance_residual=report.invariance_residual,
        boundary_mass=report.boundary_mass,
        tail_moment=report.tail_moment,
        mean_state=report.mean_state,
    )
    return row


def cmd_sweep(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep needs a 'sweep' section with a parameter and values")
    solver = cfg.solver.model_dump()
    tasks = [
        (cfg.model.family, dict(cfg.model.params), cfg.sweep.parameter, v, solver) for v in cfg.sweep.values
    ]
    rows = _map(_sweep_point, tasks, threads)
    with open(out / "sweep.csv", "w", newline="") as fh:
        write_sweep_csv(fh, rows)
    return EXIT_OK


# -- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anongames", description="Stationary equilibria of large anonymous games.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "compute a stationary equilibrium",
        "verify": "check the model family's closed-form sufficient conditions",
        "simulate": "simulate finite populations playing a solved equilibrium",
        "sweep": "solve across a grid of one model parameter",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="master seed (overrides simulation.seed)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent tasks")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--equilibrium", help="solve_report.json to simulate (overrides simulation.equilibrium)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {args.threads}")
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
            cfg = cfg.model_copy(update={"simulation": cfg.simulation.model_copy(update={"seed": args.seed})})
        out = _out_dir(cfg, args.out)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.threads, args.equilibrium)
        return cmd_sweep(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""
Command line for hjvariance.

    python main.py <command> [--config FILE] [--out DIR] [--jobs N] [--set key=value ...]

Commands: sample-env, solve, influence, campaign, fpp, hash-check.
Exit status is 0 on success, 1 for invalid configuration and 2 for runtime
failures (including campaigns stopped by their budget). Every run writes
manifest.json into its output directory.
"""

import argparse
import itertools
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .config import CONFIG
from .env_lattice import Environment, sample_environment
from .exceptions import ConfigError, HJVarianceError
from .fpp_baseline import fpp_box, fpp_variance_curve, sample_edge_environment
from .hjb_solver import (
    backtrack_paths,
    hopf_lax_reference,
    resolve_stencil,
    solve_value,
    solver_box,
)
from .influence_lab import (
    build_shift_hash,
    check_shift_hash,
    classify_importance,
    survey_sites,
    tube_sites,
)
from .items import Manifest
from .pipelines import (
    PLOT_HEADER,
    SAMPLE_HEADER,
    ArtifactPipeline,
    plot_rows,
    sample_rows,
    survey_header,
    survey_rows,
)
from .runconfig import RunConfig, load_run_config
from .seeding import RNG_ALGORITHMS, RNG_ALGORITHM_ID, STREAM_FPP, STREAM_HASH_CHECK, derive_seed, make_generator
from .variance_suite import effective_hamiltonian, run_campaign

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2

COMMANDS = ("sample-env", "solve", "influence", "campaign", "fpp", "hash-check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjvariance", description="Random Hamilton-Jacobi variance laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="run configuration JSON (or a manifest to rerun)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--jobs", type=int, default=CONFIG["runtime"]["default_jobs"], help="worker processes")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (dotted path)")
    return parser


def setup_logging(directory: Path) -> None:
    """Console and per-run file logging from LOGGING_CONFIG."""
    log_config = CONFIG["logging"]
    handlers: List[logging.Handler] = []
    if log_config["file_handler"]:
        handlers.append(logging.FileHandler(directory / CONFIG["files"]["log_file"]))
    if log_config["console_handler"]:
        handlers.append(logging.StreamHandler(sys.stdout))
    logging.basicConfig(
        level=getattr(logging, log_config["level"].upper()),
        format=log_config["format"],
        handlers=handlers,
        force=True,
    )


def describe_validation_error(error: ValidationError) -> str:
    parts = []
    for entry in error.errors():
        key = ".".join(str(p) for p in entry["loc"]) or "config"
        parts.append(f"{key}: {entry['msg']}")
    return "; ".join(parts)


def versions() -> Dict[str, str]:
    found = {"hjvariance": __version__, "python": platform.python_version()}
    for package in ("numpy", "scipy", "pydantic"):
        try:
            found[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            found[package] = "unknown"
    return found


def _environment(config: RunConfig, q_max: int) -> Environment:
    env_cfg = config.environment
    box = solver_box(config.solver, q_max, env_cfg.margin)
    return sample_environment(box, env_cfg.alpha, env_cfg.levels, env_cfg.seed)


def _stencil(config: RunConfig) -> int:
    env_cfg = config.environment
    return resolve_stencil(config.solver, config.kinetic, config.payoff, env_cfg.b - env_cfg.a)


def command_sample_env(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    env = _environment(config, _stencil(config))
    pipeline.process_snapshot(CONFIG["files"]["snapshot"], env)
    summary = {
        "box": [list(axis) for axis in env.box],
        "alpha": env.alpha,
        "levels": [env.a, env.b],
        "seed": env.seed,
        "rng": RNG_ALGORITHMS[RNG_ALGORITHM_ID],
        "low_fraction": float(1.0 - env.high.mean()),
    }
    pipeline.process_json(CONFIG["files"]["environment_summary"], summary)
    return summary


def _reference(config: RunConfig) -> Optional[float]:
    env_cfg = config.environment
    if config.payoff.kind != "linear" or env_cfg.alpha not in (0.0, 1.0):
        return None
    level = env_cfg.a if env_cfg.alpha == 1.0 else env_cfg.b
    shift = config.payoff.value_at(config.solver.start)
    return hopf_lax_reference(config.kinetic, config.payoff.eta, level, config.solver.horizon) + shift


def command_solve(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    env = _environment(config, _stencil(config))
    table = solve_value(env, config.payoff, config.kinetic, config.solver)
    paths = backtrack_paths(table, env, 0.0)
    pipeline.process_value_table(CONFIG["files"]["value_header"], CONFIG["files"]["value_data"], table)
    pipeline.process_jsonl(CONFIG["files"]["paths"], paths)
    reference = _reference(config)
    print(f"u = {table.value!r}")
    print(f"reference = {reference!r}" if reference is not None else "reference = n/a")
    return {"u": table.value, "reference": reference}


def command_influence(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    env = _environment(config, _stencil(config))
    table = solve_value(env, config.payoff, config.kinetic, config.solver)
    survey = classify_importance(
        env,
        config.delta,
        config.payoff,
        config.kinetic,
        config.solver,
        path_limit=config.influence.path_limit,
        zeta=config.campaign.zeta,
        refine=config.influence.refine,
        table=table,
    )
    radius = config.influence.site_radius
    if radius is None:
        sites = tube_sites(env, backtrack_paths(table, env, 0.0), config.influence.tube_radius)
    else:
        center = [int(c // 1) for c in config.solver.start]
        offsets = itertools.product(range(-radius, radius + 1), repeat=env.dimension)
        sites = [s for s in (tuple(c + o for c, o in zip(center, off)) for off in offsets) if env.contains(s)]
    records = survey_sites(env, sites, config.payoff, config.kinetic, config.solver, table=table, survey=survey)
    pipeline.process_csv(
        CONFIG["files"]["survey"],
        survey_header(env.dimension),
        survey_rows(records, env.seed, survey.displacement_event),
    )
    pipeline.process_json(CONFIG["files"]["importance"], survey)
    return {"sites": len(records), "important": len(survey.important), "truncated": survey.partial}


def command_campaign(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    files = CONFIG["files"]
    result = run_campaign(config, jobs=jobs)
    pipeline.process_csv(files["samples"], SAMPLE_HEADER, sample_rows(result.rows))
    pipeline.process_json(
        files["curve"],
        {
            "curve": result.curve.model_dump(mode="json"),
            "trend": result.trend.model_dump(mode="json") if result.trend else None,
            "decomposition": [d.model_dump(mode="json") for d in result.decomposition],
            "shift_closeness": [c.model_dump(mode="json") for c in result.closeness],
            "bounded_trends": [b.model_dump(mode="json") for b in result.bounded],
            "partial": result.partial,
        },
    )
    pipeline.process_csv(files["plot"], PLOT_HEADER, plot_rows(result.curve))
    if result.shifted_curve is not None:
        pipeline.process_json(files["shifted_curve"], result.shifted_curve)
    if result.talagrand:
        pipeline.process_json(files["talagrand"], result.talagrand)
    if result.survey_stats:
        pipeline.process_json(files["influence_stats"], result.survey_stats)
    summary: Dict[str, Any] = {"partial": result.partial, "horizons": result.curve.horizons}
    if config.campaign.hamiltonian_etas and not result.partial:
        estimates = effective_hamiltonian(config, jobs=jobs)
        pipeline.process_json(files["hamiltonian"], estimates)
    return summary


def command_fpp(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    files = CONFIG["files"]
    cfg = config.fpp
    first = cfg.lengths[0]
    seed = derive_seed(cfg.base_seed, STREAM_FPP, first, 0)
    example = sample_edge_environment(fpp_box((0, 0), (first, 0), (cfg.a, cfg.b)), cfg.alpha, (cfg.a, cfg.b), seed)
    pipeline.process_edge_snapshot(files["edge_snapshot"], example)
    result = fpp_variance_curve(config, jobs=jobs)
    pipeline.process_csv(files["fpp_samples"], SAMPLE_HEADER, sample_rows(result.rows))
    pipeline.process_json(files["fpp_curve"], result.curve)
    if result.trend is not None:
        pipeline.process_json(files["fpp_trend"], result.trend)
    pipeline.process_csv(files["fpp_plot"], PLOT_HEADER, plot_rows(result.curve))
    return {"partial": result.partial, "lengths": result.curve.horizons}


def command_hash_check(config: RunConfig, pipeline: ArtifactPipeline, jobs: int) -> Dict[str, Any]:
    cfg = config.hash_check
    reports = []
    for m in cfg.sizes:
        generator = make_generator(derive_seed(cfg.seed, STREAM_HASH_CHECK, m, 0))
        report = check_shift_hash(build_shift_hash(m, cfg.alpha), cfg.random_flips, generator)
        reports.append(report)
        print(
            f"m={m}: max P={report.max_probability:.4f} (bound {report.bound:.4f}), "
            f"Lipschitz violations {report.lipschitz_violations}/{report.lipschitz_checked}"
        )
    pipeline.process_json(CONFIG["files"]["hash_check"], reports)
    return {"ok": all(r.within_bound and r.lipschitz_violations == 0 and r.range_ok for r in reports)}


HANDLERS: Dict[str, Callable[[RunConfig, ArtifactPipeline, int], Dict[str, Any]]] = {
    "sample-env": command_sample_env,
    "solve": command_solve,
    "influence": command_influence,
    "campaign": command_campaign,
    "fpp": command_fpp,
    "hash-check": command_hash_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        Exit status
    """
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    directory = args.out or Path(CONFIG["output"]["directory"])
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"Cannot create output directory {directory}: {e}", file=sys.stderr)
        return EXIT_INVALID
    setup_logging(directory)
    if args.jobs < 1:
        logger.error(f"--jobs must be at least 1, got {args.jobs}")
        print("Invalid option: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID

    # Step 1: Load and validate the configuration
    try:
        document = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
        config = load_run_config(document, args.overrides)
    except ValidationError as e:
        message = describe_validation_error(e)
        logger.error(f"Invalid configuration: {message}")
        print(f"Invalid configuration: {message}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as e:
        logger.error(f"Cannot read configuration: {e}")
        print(f"Cannot read configuration: {e}", file=sys.stderr)
        return EXIT_INVALID

    pipeline = ArtifactPipeline(directory)
    manifest = Manifest(
        command=args.command,
        status="running",
        config=config.model_dump(mode="json"),
        config_hash=config.digest(),
        overrides=list(args.overrides),
        versions=versions(),
        timings={},
    )

    # Step 2: Run the command
    status, code, error = "ok", EXIT_OK, None
    try:
        logger.info(f"Running '{args.command}' with config {manifest.config_hash[:12]}")
        summary = HANDLERS[args.command](config, pipeline, args.jobs)
        if summary.get("partial"):
            status, code = "partial", EXIT_FAILED
            logger.warning(f"'{args.command}' stopped early; results are partial")
    except ConfigError as e:
        status, code, error = "invalid", EXIT_INVALID, str(e)
        logger.error(f"Invalid configuration: {e}")
        print(f"Invalid configuration: {e}", file=sys.stderr)
    except HJVarianceError as e:
        status, code, error = "failed", EXIT_FAILED, str(e)
        logger.error(f"'{args.command}' failed: {e}")
    except Exception as e:
        status, code, error = "failed", EXIT_FAILED, f"{type(e).__name__}: {e}"
        logger.exception(f"Unexpected error in '{args.command}': {e}")

    # Step 3: Write the manifest
    manifest = manifest.model_copy(
        update={
            "status": status,
            "partial": status == "partial",
            "error": error,
            "timings": {"total_seconds": time.perf_counter() - started},
        }
    )
    pipeline.process_manifest(CONFIG["files"]["manifest"], manifest)
    logger.info(f"'{args.command}' finished with status {status}")
    return code

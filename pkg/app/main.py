"""
DWR Navier-Stokes Benchmark Solver - Command Line Entry Point

    python -m app.main --enrichment p --goal combined --max-dofs 60000 --out output
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.config import Settings, settings
from app.models.base import DomainSpec, EnrichmentKind, GoalKind
from app.schemas.records import LoopRecord, ReferenceValues
from app.schemas.run import NewtonControls, RunConfig
from app.services.adaptivity_service import AdaptivityService, StepState
from app.services.reference_service import ReferenceService
from app.services.report_service import ReportService
from app.services.vtk_service import VtkService
from app.utils.errors import AdaptiveRunError, ConfigError, SolverError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

# Command-line flag -> RunConfig field
OVERRIDES = {
    "enrichment": "enrichment",
    "goal": "goal",
    "theta": "marking_fraction",
    "max_dofs": "max_dofs",
    "max_steps": "max_steps",
    "stokes": "stokes_mode",
    "out": "output_dir",
    "emit_vtk": "emit_vtk",
    "emit_figures": "emit_figures",
    "reference_cache": "reference_cache",
    "reference": "compute_reference",
    "uniform": "uniform",
    "log_level": "log_level",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.main",
        description="Goal-oriented adaptive FEM for the stationary 2D-1 cylinder benchmark",
    )
    parser.add_argument("--config", type=Path, help="Key-value settings file (overrides .env)")
    parser.add_argument("--enrichment", choices=[e.value for e in EnrichmentKind])
    parser.add_argument("--goal", choices=[g.value for g in GoalKind])
    parser.add_argument("--theta", type=float, help="Bulk marking fraction in [0, 1]")
    parser.add_argument("--max-dofs", type=int)
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--stokes", action="store_true", default=None, help="Drop the convection term")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--emit-vtk", action="store_true", default=None)
    parser.add_argument("--emit-figures", action="store_true", default=None,
                        help="Also run the paired p/h/uniform series and write figure data")
    parser.add_argument("--reference-cache", type=Path)
    parser.add_argument("--reference", action="store_true", default=None,
                        help="Compute reference values on a cache miss (effectivities, saturation)")
    parser.add_argument("--uniform", action="store_true", default=None, help="Uniform refinement run")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def load_settings(config_file: Optional[Path]) -> Settings:
    if config_file is None:
        return settings
    if not Path(config_file).is_file():
        raise ConfigError(f"config file {config_file} not found")
    return Settings(_env_file=str(config_file))


def resolve_config(args: argparse.Namespace, base: Settings) -> RunConfig:
    """Settings first, command-line flags on top"""
    values = {
        "enrichment": base.ENRICHMENT,
        "goal": base.GOAL,
        "marking_fraction": base.MARKING_FRACTION,
        "max_dofs": base.MAX_DOFS,
        "max_steps": base.MAX_STEPS,
        "pre_refinements": base.PRE_REFINEMENTS,
        "stokes_mode": base.STOKES_MODE,
        "max_linear_dofs": base.MAX_LINEAR_DOFS,
        "output_dir": base.OUTPUT_DIR,
        "emit_vtk": base.EMIT_VTK,
        "emit_figures": base.EMIT_FIGURES,
        "reference_cache": base.REFERENCE_CACHE,
        "reference_refinements": base.REFERENCE_REFINEMENTS,
        "compute_reference": base.COMPUTE_REFERENCE,
        "log_level": base.LOG_LEVEL,
        "newton": NewtonControls(
            abs_tol=base.NEWTON_ABS_TOL,
            max_iter=base.NEWTON_MAX_ITER,
            max_halvings=base.NEWTON_MAX_HALVINGS,
            balance_fraction=base.BALANCE_FRACTION,
        ),
        "domain": DomainSpec(
            channel_length=base.CHANNEL_LENGTH,
            channel_height=base.CHANNEL_HEIGHT,
            cylinder_center=(base.CYLINDER_CENTER_X, base.CYLINDER_CENTER_Y),
            cylinder_radius=base.CYLINDER_RADIUS,
            viscosity=base.VISCOSITY,
            inflow_peak=base.INFLOW_PEAK,
        ),
    }
    for flag, field in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field] = value
    return RunConfig(**values)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def execute(config: RunConfig, enrichment: EnrichmentKind, uniform: bool, out_dir: Path,
            reference: Optional[ReferenceValues], emit_vtk: bool) -> List[LoopRecord]:
    """
    One adaptive or uniform run; records.csv is written even when a solver fails.

    Raises:
        AdaptiveRunError: after the partial records have been written
    """
    adaptive = config.adaptive().model_copy(update={"enrichment": enrichment})

    def write_step(state: StepState) -> None:
        VtkService.write_vtk(
            out_dir / f"step_{state.record.step}.vtk", state.mesh, state.u, state.z,
            state.record.estimator.indicators, title=f"step {state.record.step}",
        )

    on_step = write_step if emit_vtk else None
    runner = AdaptivityService.run_uniform if uniform else AdaptivityService.run_adaptive
    try:
        records = runner(adaptive, reference, on_step)
    except AdaptiveRunError as e:
        ReportService.write_csv(out_dir / "records.csv", e.records)
        raise
    ReportService.write_csv(out_dir / "records.csv", records)
    if uniform:
        ReferenceService.update_from_records(
            adaptive, config.reference_cache, config.reference_refinements, records
        )
    return records


def run(config: RunConfig) -> int:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")

    reference = ReferenceService.get_reference(
        config.adaptive(), config.reference_cache, config.reference_refinements,
        compute=config.compute_reference or config.emit_figures,
    )
    if reference is None:
        logger.info("No cached reference values: effectivities and saturation flags are not reported")
    else:
        logger.info(f"Reference values: dp={reference.dp:.10g} drag={reference.drag:.10g} "
                    f"lift={reference.lift:.10g}")

    main_kind = "uniform" if config.uniform else config.enrichment.value
    records = execute(config, config.enrichment, config.uniform, out_dir, reference, config.emit_vtk)
    if not config.emit_figures:
        return EXIT_OK

    runs: Dict[str, list] = {main_kind: [r.to_row() for r in records]}
    for kind in ("p", "h", "uniform"):
        if kind in runs:
            continue
        enrichment = config.enrichment if kind == "uniform" else EnrichmentKind(kind)
        paired = execute(config, enrichment, kind == "uniform", out_dir / "paired" / kind, reference, False)
        runs[kind] = [r.to_row() for r in paired]
    ReportService.emit_figures(runs, out_dir / "figures", reference)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run, and map failures to exit codes.

    Returns:
        0 on success, 2 for bad configuration, 3 for solver failures, 4 for I/O failures
    """
    args = build_parser().parse_args(argv)
    try:
        base = load_settings(args.config)
        config = resolve_config(args, base)
    except (ValidationError, ValueError) as e:
        configure_logging(settings.LOG_LEVEL)
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    configure_logging(config.log_level or base.LOG_LEVEL)
    logger.info(f"Starting {base.APP_NAME}...")
    try:
        return run(config)
    except SolverError as e:
        logger.error(f"Solver failure: {e}")
        return EXIT_SOLVER
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""
Adaptivity service: solve, enrich, estimate, localise, mark and refine
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

import numpy as np

from app.models.base import EnrichmentKind, GoalKind
from app.models.mesh import Mesh
from app.models.space import FeSystem, MixedVector
from app.schemas.records import (
    BASE_GOALS, EstimatorBreakdown, FunctionalDef, GoalValues, LoopRecord, ReferenceValues,
)
from app.schemas.run import AdaptiveConfig
from app.services.estimator_service import EstimatorService
from app.services.forms_service import FormContext, FormsService
from app.services.goal_service import GoalService
from app.services.mesh_service import MeshService
from app.services.space_service import SpaceService
from app.utils.errors import AdaptiveRunError, SolverError, SystemTooLargeError

logger = logging.getLogger(__name__)


@dataclass
class StepState:
    """Everything one adaptive step produced, for output hooks"""
    record: LoopRecord
    mesh: Mesh
    system: FeSystem
    u: MixedVector
    z: MixedVector
    goal: Optional[FunctionalDef] = None


# Goal and eta+ of the previous step, used for the balanced Newton stop
Previous = Tuple[FunctionalDef, float]
StepCallback = Callable[[StepState], None]


class AdaptivityService:
    """Service for the goal-oriented adaptive loop"""

    @staticmethod
    def mark_cells(indicators: Dict[int, float], theta: float) -> Set[int]:
        """
        Bulk (Dorfler) marking on |indicator|.

        Cells are sorted by |indicator| descending, ties by ascending cell id,
        and the shortest prefix holding at least theta of the total mass is marked.

        Args:
            indicators: cell_id -> indicator
            theta: Marking fraction in [0, 1]

        Returns:
            The marked cell ids
        """
        values = np.array(list(indicators.values()), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("cannot mark cells with non-finite indicators")
        if theta <= 0.0 or not indicators:
            return set()
        if theta >= 1.0:
            return set(indicators)

        ranked = sorted(indicators.items(), key=lambda item: (-abs(item[1]), item[0]))
        mass = np.cumsum([abs(v) for _, v in ranked])
        if mass[-1] == 0.0:
            return set()
        count = int(np.searchsorted(mass, theta * mass[-1], side="left")) + 1
        return {cid for cid, _ in ranked[:min(count, len(ranked))]}

    @staticmethod
    def enriched_system(mesh: Mesh, enrichment: EnrichmentKind) -> FeSystem:
        """[Q4]^2 x Q2 on the same mesh, or [Q2]^2 x Q1 on its uniform refinement"""
        if enrichment == EnrichmentKind.P:
            return SpaceService.build_system(mesh, 4)
        return SpaceService.build_system(MeshService.uniform_refine(mesh), 2)

    @staticmethod
    def initial_guess(ctx: FormContext, config: AdaptiveConfig) -> MixedVector:
        """Dirichlet lift, followed by a Stokes solve when convection is on"""
        initial = SpaceService.lift(ctx.system)
        if ctx.convection:
            stokes = FormContext(ctx.system, spec=ctx.spec, convection=False)
            initial, _ = FormsService.newton_solve(stokes, initial, config.newton)
        return initial

    @staticmethod
    def solve_primal(ctx: FormContext, config: AdaptiveConfig, initial: Optional[MixedVector] = None,
                     weight: Optional[MixedVector] = None,
                     eta: Optional[float] = None) -> Tuple[MixedVector, int]:
        """
        Newton solve with the configured controls.

        Without an initial iterate the Stokes solution serves as starting point.
        Given a weight z and an estimate eta, Newton also stops once
        |rho(u)(z)| <= balance_fraction * |eta|.

        Returns:
            (solution, Newton iterations of the final solve)
        """
        if initial is None:
            initial = AdaptivityService.initial_guess(ctx, config)
        u, report = FormsService.newton_solve(ctx, initial, config.newton, weight, eta)
        return u, report.iterations

    @staticmethod
    def goal_definition(config: AdaptiveConfig, combined: FunctionalDef) -> FunctionalDef:
        if config.goal == GoalKind.COMBINED:
            return combined
        return FunctionalDef(kind=config.goal)

    @staticmethod
    def reference_errors(config: AdaptiveConfig, goal: FunctionalDef, base: GoalValues, plus: GoalValues,
                         reference: Optional[ReferenceValues]):
        """
        (err_ref, err_ref_enriched, relative errors, saturation flags) of one step.

        For the combined goal the error is J_E(u_ref) - J_E(v) with the step's
        frozen weights, so J_E(u+) = 0.
        """
        if reference is None:
            return math.nan, math.nan, {}, {g.value: None for g in BASE_GOALS}
        ref = reference.as_dict()
        if config.goal == GoalKind.COMBINED:
            j_ref = goal.combined_value(ref)
            err = j_ref - goal.combined_value(base.as_dict())
            err_plus = j_ref - goal.combined_value(plus.as_dict())
        else:
            name = config.goal.value
            err = ref[name] - base.as_dict()[name]
            err_plus = ref[name] - plus.as_dict()[name]

        relative: Dict[str, float] = {}
        saturation: Dict[str, Optional[bool]] = {}
        for g in BASE_GOALS:
            name = g.value
            scale = abs(ref[name])
            relative[name] = abs(base.as_dict()[name] - ref[name]) / scale if scale > 0 else math.nan
            saturation[name] = EstimatorService.saturation_monitor(base.as_dict()[name], plus.as_dict()[name],
                                                                   ref[name])
        return err, err_plus, relative, saturation

    @staticmethod
    def run_step(step: int, mesh: Mesh, system: FeSystem, config: AdaptiveConfig,
                 reference: Optional[ReferenceValues], previous: Optional[Previous] = None) -> StepState:
        """
        One pass of solve -> enrich -> estimate on a fixed base mesh.

        The base Newton solve balances its iteration error against the
        discretisation error: it may stop once |rho(u_h)(z_h)| on the base
        form is below balance_fraction * |eta+|. The first solve uses the
        previous step's goal and estimate with an adjoint at the initial
        iterate; after estimating, Newton is resumed with the current z_h and
        eta+ until the balance holds.
        """
        timings: Dict[str, float] = {}
        iterations: Dict[str, int] = {}
        convection = not config.stokes_mode

        started = time.perf_counter()
        ctx = FormContext(system, spec=config.domain, convection=convection)
        initial = AdaptivityService.initial_guess(ctx, config)
        weight, eta = None, None
        if previous is not None:
            previous_goal, eta = previous
            weight = EstimatorService.solve_adjoint(ctx, initial, previous_goal).z
        u_h, iterations["base"] = AdaptivityService.solve_primal(ctx, config, initial, weight, eta)
        timings["solve_base"] = time.perf_counter() - started

        started = time.perf_counter()
        plus = AdaptivityService.enriched_system(mesh, config.enrichment)
        if plus.n_dofs > config.max_linear_dofs:
            raise SystemTooLargeError(
                f"enriched system with {plus.n_dofs} unknowns exceeds the cap of {config.max_linear_dofs}"
            )
        ctx_plus = FormContext(plus, spec=config.domain, convection=convection)
        u_plus, iterations["enriched"] = AdaptivityService.solve_primal(
            ctx_plus, config, SpaceService.embed(u_h, plus)
        )
        timings["solve_enriched"] = time.perf_counter() - started

        plus_values = GoalService.evaluate_goals(u_plus)
        timings["adjoint"] = timings["estimate"] = 0.0
        resumed = 0
        while True:
            base_values = GoalService.evaluate_goals(u_h)
            combined = GoalService.combined_from_values(base_values.as_dict(), plus_values.as_dict())
            base_values = GoalService.with_combined(base_values, combined, plus_values)
            goal = AdaptivityService.goal_definition(config, combined)

            started = time.perf_counter()
            z_h = EstimatorService.solve_adjoint(ctx, u_h, goal).z
            z_plus = EstimatorService.solve_adjoint(ctx_plus, u_plus, goal).z
            timings["adjoint"] += time.perf_counter() - started

            started = time.perf_counter()
            estimate: EstimatorBreakdown = EstimatorService.estimate(
                ctx, ctx_plus, u_h, z_h, u_plus, z_plus, goal, config.enrichment
            )
            timings["estimate"] += time.perf_counter() - started

            balance = EstimatorService.primal_residual(ctx, u_h, z_h)
            balanced = abs(balance) <= config.balance_fraction * abs(estimate.eta_plus)
            if balanced or resumed >= config.newton.max_iter:
                break
            started = time.perf_counter()
            u_h, extra = AdaptivityService.solve_primal(ctx, config, u_h, z_h, estimate.eta_plus)
            timings["solve_base"] += time.perf_counter() - started
            iterations["base"] += extra
            resumed += 1
            if extra == 0:
                break

        if not balanced:
            logger.warning(
                f"Step {step}: iteration error {balance:.3e} not small against eta {estimate.eta_plus:.3e}"
            )
        plus_values = GoalService.with_combined(plus_values, combined)
        if mesh.has_cylinder() and base_values.drag <= 0.0:
            logger.warning(f"Step {step}: non-positive drag {base_values.drag:.6e}")

        err, err_plus, relative, saturation = AdaptivityService.reference_errors(
            config, goal, base_values, plus_values, reference
        )
        estimate = estimate.model_copy(update={"I_eff": EstimatorService.effectivity(estimate.eta_plus, err)})
        for name, holds in saturation.items():
            if holds is False:
                logger.warning(f"Step {step}: saturation violated for {name}")

        record = LoopRecord(
            step=step,
            n_cells=system.n_cells,
            dofs_primal=system.n_dofs,
            dofs_enriched=plus.n_dofs,
            base=base_values,
            enriched=plus_values,
            estimator=estimate,
            err_ref=err,
            err_ref_enriched=err_plus,
            relative_errors=relative,
            saturation=saturation,
            newton_iterations=iterations,
            timings=timings,
        )
        logger.info(
            f"adaptive step={step} dofs={record.dofs_primal} dofs_enriched={record.dofs_enriched} "
            f"eta={estimate.eta_plus:.6e} ieff={estimate.I_eff:.6e}"
        )
        return StepState(record, mesh, system, u_h, z_h, goal)

    @staticmethod
    def run_adaptive(config: AdaptiveConfig, reference: Optional[ReferenceValues] = None,
                     on_step: Optional[StepCallback] = None) -> List[LoopRecord]:
        """
        Run the adaptive loop until max_steps, max_dofs or an empty marking.

        Args:
            config: Loop configuration
            reference: Reference functionals for errors, effectivity and saturation
            on_step: Called with the state of every completed step

        Returns:
            One LoopRecord per completed step

        Raises:
            AdaptiveRunError: a solver failure; carries the records completed so far
        """
        records: List[LoopRecord] = []
        previous: Optional[Previous] = None
        mesh = MeshService.build_benchmark_mesh(config.domain, config.pre_refinements)
        for step in range(config.max_steps):
            system = SpaceService.build_system(mesh, 2)
            if step > 0 and system.n_dofs > config.max_dofs:
                logger.info(f"Stopping: {system.n_dofs} dofs exceed max_dofs={config.max_dofs}")
                break
            try:
                state = AdaptivityService.run_step(step, mesh, system, config, reference, previous)
            except SolverError as e:
                raise AdaptiveRunError(f"step {step} failed: {e}", records=records) from e
            records.append(state.record)
            if state.goal is not None:
                previous = (state.goal, state.record.estimator.eta_plus)
            if on_step is not None:
                on_step(state)

            if step + 1 == config.max_steps:
                break
            marked = AdaptivityService.mark_cells(state.record.estimator.indicators, config.marking_fraction)
            if not marked:
                logger.info(f"Stopping: no cells marked at step {step} (theta={config.marking_fraction})")
                break
            started = time.perf_counter()
            mesh = MeshService.refine(mesh, marked)
            state.record.timings["refine"] = time.perf_counter() - started
            logger.info(f"Refined {len(marked)} of {system.n_cells} cells -> {mesh.n_active_cells} cells")
        return records

    @staticmethod
    def run_uniform(config: AdaptiveConfig, reference: Optional[ReferenceValues] = None,
                    on_step: Optional[StepCallback] = None) -> List[LoopRecord]:
        """The same pipeline with every cell marked at every step"""
        return AdaptivityService.run_adaptive(
            config.model_copy(update={"marking_fraction": 1.0}), reference, on_step
        )


# Global instance
adaptivity_service = AdaptivityService()


def mark_cells(indicators: Dict[int, float], theta: float) -> Set[int]:
    return AdaptivityService.mark_cells(indicators, theta)


def run_adaptive(config: AdaptiveConfig, reference: Optional[ReferenceValues] = None,
                 on_step: Optional[StepCallback] = None) -> List[LoopRecord]:
    return AdaptivityService.run_adaptive(config, reference, on_step)


def run_uniform(config: AdaptiveConfig, reference: Optional[ReferenceValues] = None,
                on_step: Optional[StepCallback] = None) -> List[LoopRecord]:
    return AdaptivityService.run_uniform(config, reference, on_step)

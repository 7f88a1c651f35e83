"""
Dual-weighted residual estimator service.

With u~, z~ the base primal/adjoint solutions embedded into the enriched
space and u+, z+ the enriched solutions:

    eta+ = 1/2 rho(u~)(z+ - z~) + 1/2 rho*(u~, z~)(u+ - u~)
    rho(u)(v)       = -A(u)(v)
    rho*(u, z)(v)   = J'(v) - A'(u)(v, z)
    eta_R           = 1/2 ((e . grad) e, e*_u),  e = u+ - u~, e* = z+ - z~
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from app.models.base import EnrichmentKind, GoalKind
from app.models.element import bilinear_shapes, gauss_rule_1d, inverse_map, map_points, point_geometry
from app.models.space import FeSystem, MixedVector
from app.schemas.records import EstimatorBreakdown, FunctionalDef, LinearSolveReport
from app.services.forms_service import FormContext, FormsService
from app.services.goal_service import GoalService
from app.services.linalg_service import LinalgService
from app.services.space_service import SpaceService

logger = logging.getLogger(__name__)


@dataclass
class AdjointSolution:
    """Adjoint z with the linearisation point and goal it was computed for"""
    z: MixedVector
    u_lin: MixedVector
    goal: FunctionalDef
    residual: float
    report: Optional[LinearSolveReport] = None


@dataclass
class PartitionWeights:
    """Base-mesh Q1 hat functions sampled on the enriched quadrature"""
    base_pos: np.ndarray  # enriched cell -> base cell position
    values: np.ndarray    # (nc, nq, 4)
    grads: np.ndarray     # (nc, nq, 4, 2), physical


class EstimatorService:
    """Service for adjoint solves and the hierarchical DWR estimator"""

    # ------------------------------------------------------------------
    # Adjoint
    # ------------------------------------------------------------------
    @staticmethod
    def solve_adjoint(ctx: FormContext, u_lin: MixedVector, goal: FunctionalDef) -> AdjointSolution:
        """
        Solve A'(u)(v, z) = J'(v) for all v in the homogeneous test space.

        Args:
            ctx: Form context of u_lin's system
            u_lin: Linearisation point
            goal: Goal functional (combined weights frozen)

        Returns:
            The adjoint solution with zero Dirichlet data
        """
        system = ctx.system
        constraints = system.constraints
        rhs = constraints.condense_vector(GoalService.derivative(goal, system))
        if not np.any(rhs):
            return AdjointSolution(system.zeros(), u_lin, goal, 0.0)
        matrix = FormsService.jacobian(ctx, u_lin)
        z_hat, report = LinalgService.solve_direct(matrix, rhs, transpose=True)
        residual = float(np.linalg.norm(matrix.T @ z_hat - rhs))
        z = MixedVector(system, constraints.distribute(z_hat, homogeneous=True))
        logger.debug(f"Adjoint solve on {system!r}: residual {residual:.3e}")
        return AdjointSolution(z, u_lin, goal, residual, report)

    # ------------------------------------------------------------------
    # Residual functionals
    # ------------------------------------------------------------------
    @staticmethod
    def primal_residual(ctx: FormContext, u: MixedVector, v: MixedVector) -> float:
        """rho(u)(v) = -A(u)(v)"""
        return -FormsService.form_value(ctx, u, v)

    @staticmethod
    def adjoint_residual(ctx: FormContext, u: MixedVector, z: MixedVector, goal: FunctionalDef,
                         v: MixedVector) -> float:
        """rho*(u, z)(v) = J'(v) - A'(u)(v, z)"""
        return GoalService.goal_value(goal, v) - FormsService.linearized_value(ctx, u, v, z)

    @staticmethod
    def _lift(ctx: FormContext, u: MixedVector, z: MixedVector) -> Tuple[MixedVector, MixedVector]:
        if u.system is not ctx.system:
            u = SpaceService.embed(u, ctx.system)
        if z.system is not ctx.system:
            z = SpaceService.embed(z, ctx.system, homogeneous=True)
        return u, z

    @staticmethod
    def compute_eta_plus(ctx_plus: FormContext, u_t: MixedVector, z_t: MixedVector,
                         u_plus: MixedVector, z_plus: MixedVector, goal: FunctionalDef) -> Tuple[float, float]:
        """
        Primal and adjoint parts of eta+ on the enriched system.

        Base vectors are embedded first (adjoints with zero Dirichlet data).

        Returns:
            (part_primal, part_adjoint)
        """
        u_t, z_t = EstimatorService._lift(ctx_plus, u_t, z_t)
        part_primal = 0.5 * EstimatorService.primal_residual(ctx_plus, u_t, z_plus - z_t)
        part_adjoint = 0.5 * EstimatorService.adjoint_residual(ctx_plus, u_t, z_t, goal, u_plus - u_t)
        return part_primal, part_adjoint

    @staticmethod
    def compute_remainder(ctx_plus: FormContext, u_t: MixedVector, z_t: MixedVector,
                          u_plus: MixedVector, z_plus: MixedVector, goal: FunctionalDef) -> Tuple[float, float]:
        """
        Remainder of the error representation, evaluated two ways.

        Returns:
            (closed form 1/2((e.grad)e, e*_u), two-point Gauss quadrature in s of the bracket)
        """
        u_t, z_t = EstimatorService._lift(ctx_plus, u_t, z_t)
        e = u_plus - u_t
        e_star = z_plus - z_t

        s_nodes, s_weights = gauss_rule_1d(2)
        quadrature = 0.0
        for s, weight in zip(s_nodes, s_weights):
            # J''' = 0 for linear and frozen-sign goals, A''' = 0 for the quadratic form
            bracket = (0.0 - FormsService.third_derivative(ctx_plus, e, e, e, z_t + e_star * s)
                       - 3.0 * FormsService.second_derivative(ctx_plus, e, e, e_star))
            quadrature += weight * bracket * s * (s - 1.0)
        quadrature *= 0.5

        closed = np.zeros(ctx_plus.system.n_cells)
        if ctx_plus.convection:
            for cells in ctx_plus.chunks():
                se, ss = ctx_plus.sample(e, cells), ctx_plus.sample(e_star, cells)
                transport = np.einsum("cqd,cqad->cqa", se.u, se.grad_u)
                closed[cells] = np.sum(ctx_plus.jxw[cells] * np.einsum("cqa,cqa->cq", transport, ss.u), axis=1)
        return 0.5 * float(np.sum(closed)), float(quadrature)

    # ------------------------------------------------------------------
    # Partition of unity
    # ------------------------------------------------------------------
    @staticmethod
    def _base_hats(plus: FeSystem, base: FeSystem, plus_pos: np.ndarray, ref: np.ndarray,
                   phys: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Base Q1 hats (vertex-slot order) at points of enriched cells.

        Args:
            plus_pos: Enriched cell position of each point (m,)
            ref: Reference coordinates in the enriched cell (m, 2)
            phys: Physical coordinates (m, 2)

        Returns:
            (base cell position (m,), values (m, 4), physical gradients (m, 4, 2))
        """
        cell_ids = plus.cell_ids
        if plus.mesh is base.mesh:
            base_pos = np.array([base.cell_index[int(cell_ids[k])] for k in plus_pos], dtype=np.int64)
            xi = ref
        else:
            cells = plus.mesh.cells
            base_pos = np.array([base.cell_index[cells[int(cell_ids[k])].parent] for k in plus_pos],
                                dtype=np.int64)
            xi, _ = inverse_map(base.cell_coordinates()[base_pos], phys)
        shapes, ref_grads = bilinear_shapes(xi)
        _, _, _, inv_t = point_geometry(base.cell_coordinates()[base_pos], xi)
        return base_pos, shapes, np.einsum("mab,mkb->mka", inv_t, ref_grads)

    @staticmethod
    def partition_weights(ctx_plus: FormContext, base: FeSystem) -> PartitionWeights:
        """Base Q1 hats at the enriched volume quadrature points"""
        plus = ctx_plus.system
        points = ctx_plus.rule.points
        nc, nq = plus.n_cells, len(points)
        phys = map_points(plus.cell_coordinates(), points).reshape(-1, 2)
        ref = np.tile(points, (nc, 1))
        base_pos, values, grads = EstimatorService._base_hats(
            plus, base, np.repeat(np.arange(nc), nq), ref, phys
        )
        return PartitionWeights(base_pos.reshape(nc, nq)[:, 0], values.reshape(nc, nq, 4),
                                grads.reshape(nc, nq, 4, 2))

    @staticmethod
    def localize_pu(ctx_plus: FormContext, base: FeSystem, u_t: MixedVector, z_t: MixedVector,
                    u_plus: MixedVector, z_plus: MixedVector,
                    goal: FunctionalDef) -> Tuple[np.ndarray, Dict[int, float]]:
        """
        Partition-of-unity localisation on the base mesh's Q1 vertices.

        eta_i = 1/2 rho(u~)((z+ - z~) psi_i) + 1/2 rho*(u~, z~)((u+ - u~) psi_i)

        Returns:
            (vertex indicators on the base Q1 numbering, {cell_id: indicator})
        """
        u_t, z_t = EstimatorService._lift(ctx_plus, u_t, z_t)
        e = u_plus - u_t
        e_star = z_plus - z_t
        pu = EstimatorService.partition_weights(ctx_plus, base)
        slots = np.zeros((base.n_cells, 4))

        for cells in ctx_plus.chunks():
            w = ctx_plus.jxw[cells]
            psi, dpsi = pu.values[cells], pu.grads[cells]
            su, sz = ctx_plus.sample(u_t, cells), ctx_plus.sample(z_t, cells)
            se, ss = ctx_plus.sample(e, cells), ctx_plus.sample(e_star, cells)

            flux, force, g = ctx_plus.primal_flux(su)
            tested = (np.einsum("cqab,cqab->cq", flux, ss.grad_u)
                      + np.einsum("cqa,cqa->cq", force, ss.u) + g * ss.p)
            product = np.einsum("cqab,cqa,cqkb->cqk", flux, ss.u, dpsi)
            primal = -0.5 * np.einsum("cq,cqk->ck", w, tested[..., None] * psi + product)

            hflux, hforce, hg = ctx_plus.adjoint_flux(su, sz)
            tested = (np.einsum("cqab,cqab->cq", hflux, se.grad_u)
                      + np.einsum("cqa,cqa->cq", hforce, se.u) + hg * se.p)
            product = np.einsum("cqab,cqa,cqkb->cqk", hflux, se.u, dpsi)
            adjoint = -0.5 * np.einsum("cq,cqk->ck", w, tested[..., None] * psi + product)

            np.add.at(slots, pu.base_pos[cells], primal + adjoint)

        EstimatorService._add_goal_terms(slots, ctx_plus, base, e, goal)

        q1_dofs, q1_constraints = SpaceService.vertex_partition(base.mesh, base.cell_ids)
        vertex = np.bincount(q1_dofs.ravel(), weights=slots.ravel(), minlength=q1_constraints.n_dofs)
        vertex = q1_constraints.condense_vector(vertex)
        share = np.bincount(q1_dofs.ravel(), minlength=q1_constraints.n_dofs).astype(float)
        per_cell = np.sum(vertex[q1_dofs] / share[q1_dofs], axis=1)
        indicators = {int(cid): float(v) for cid, v in zip(base.cell_ids, per_cell)}
        return vertex, indicators

    @staticmethod
    def _add_goal_terms(slots: np.ndarray, ctx_plus: FormContext, base: FeSystem, e: MixedVector,
                        goal: FunctionalDef) -> None:
        """Add 1/2 J'(e psi_i) slot by slot"""
        plus = ctx_plus.system
        weights = goal.component_weights()

        w_dp = weights.get(GoalKind.PRESSURE_DIFF.value, 0.0)
        if w_dp != 0.0:
            pos, xi = GoalService.pressure_points(plus)
            e_p = SpaceService.evaluate_at(e, pos, xi)["p"]
            points = plus.mesh.cell_coordinates([int(plus.cell_ids[k]) for k in pos])
            phys = np.einsum("mk,mkd->md", bilinear_shapes(xi)[0], points)
            base_pos, hats, _ = EstimatorService._base_hats(plus, base, pos, xi, phys)
            for k, sign in enumerate((1.0, -1.0)):
                slots[base_pos[k]] += 0.5 * w_dp * sign * e_p[k] * hats[k]

        direction = np.array([weights.get(GoalKind.DRAG.value, 0.0), weights.get(GoalKind.LIFT.value, 0.0)])
        faces = GoalService.cylinder_faces(plus)
        if np.any(direction != 0.0) and len(faces.cell_pos):
            nf, nq = faces.weights.shape
            fields = SpaceService.evaluate_at(
                e, np.repeat(faces.cell_pos, nq), faces.ref_points.reshape(-1, 2), gradients=True
            )
            base_pos, hats, dhats = EstimatorService._base_hats(
                plus, base, np.repeat(faces.cell_pos, nq), faces.ref_points.reshape(-1, 2),
                faces.points.reshape(-1, 2),
            )
            normals = np.repeat(faces.normals, nq, axis=0)
            grad_v = (hats[:, :, None, None] * fields["grad_u"][:, None]
                      + np.einsum("ma,mkb->mkab", fields["u"], dhats))
            p_v = hats * fields["p"][:, None]
            force = GoalService.traction(grad_v, p_v, normals[:, None, :], plus.mesh.spec.viscosity)
            contrib = 0.5 * faces.weights.reshape(-1)[:, None] * (force @ direction)
            np.add.at(slots, base_pos, contrib)

    # ------------------------------------------------------------------
    # Scalars
    # ------------------------------------------------------------------
    @staticmethod
    def effectivity(eta: float, reference_error: float) -> float:
        """eta / |error|; NaN when the error is zero or unknown"""
        if reference_error is None or not math.isfinite(reference_error) or reference_error == 0.0:
            return math.nan
        return eta / abs(reference_error)

    @staticmethod
    def compute_gap(j_plus: float, j_base: float, eta_plus: float, iter_part: float, eta_r: float) -> float:
        return abs(abs(j_plus - j_base) - abs(eta_plus + iter_part + eta_r))

    @staticmethod
    def saturation_monitor(j_base: float, j_plus: float, j_ref: float) -> bool:
        """True when the enriched solution is strictly closer to the reference"""
        return abs(j_plus - j_ref) < abs(j_base - j_ref)

    @staticmethod
    def estimate(ctx_base: FormContext, ctx_plus: FormContext, u_h: MixedVector, z_h: MixedVector,
                 u_plus: MixedVector, z_plus: MixedVector, goal: FunctionalDef,
                 enrichment: EnrichmentKind) -> EstimatorBreakdown:
        """
        All estimator parts of one step (effectivity left to the caller).

        The base goal value entering the gap is taken from the embedded base
        solution when the embedding is exact (p) and from u_h itself otherwise.
        """
        u_t = SpaceService.embed(u_h, ctx_plus.system)
        z_t = SpaceService.embed(z_h, ctx_plus.system, homogeneous=True)
        part_primal, part_adjoint = EstimatorService.compute_eta_plus(ctx_plus, u_t, z_t, u_plus, z_plus, goal)
        eta_plus = part_primal + part_adjoint
        iter_part = EstimatorService.primal_residual(ctx_plus, u_t, z_t)
        eta_r, eta_r_quad = EstimatorService.compute_remainder(ctx_plus, u_t, z_t, u_plus, z_plus, goal)
        if eta_r != 0.0 and abs(eta_r - eta_r_quad) > 1e-13 * abs(eta_r) + 1e-300:
            logger.warning(f"Remainder paths disagree: closed {eta_r:.16e} vs quadrature {eta_r_quad:.16e}")

        j_plus = GoalService.goal_value(goal, u_plus)
        j_base = GoalService.goal_value(goal, u_t if enrichment == EnrichmentKind.P else u_h)
        eta_e = EstimatorService.compute_gap(j_plus, j_base, eta_plus, iter_part, eta_r)

        vertex, indicators = EstimatorService.localize_pu(ctx_plus, ctx_base.system, u_t, z_t,
                                                          u_plus, z_plus, goal)
        total = float(np.sum(vertex))
        if abs(total - eta_plus) > 1e-10 * max(abs(eta_plus), 1e-300):
            logger.warning(f"PU sum {total:.16e} differs from eta+ {eta_plus:.16e}")

        return EstimatorBreakdown(
            enrichment=enrichment,
            eta_plus=eta_plus,
            part_primal=part_primal,
            part_adjoint=part_adjoint,
            iter_part=iter_part,
            eta_R=eta_r,
            eta_R_quadrature=eta_r_quad,
            eta_E=eta_e,
            indicators=indicators,
        )


# Global instance
estimator_service = EstimatorService()


def solve_adjoint(ctx: FormContext, u_lin: MixedVector, goal: FunctionalDef) -> AdjointSolution:
    return EstimatorService.solve_adjoint(ctx, u_lin, goal)


def compute_eta_plus(ctx_plus, u_t, z_t, u_plus, z_plus, goal) -> Tuple[float, float]:
    return EstimatorService.compute_eta_plus(ctx_plus, u_t, z_t, u_plus, z_plus, goal)


def compute_remainder(ctx_plus, u_t, z_t, u_plus, z_plus, goal) -> Tuple[float, float]:
    return EstimatorService.compute_remainder(ctx_plus, u_t, z_t, u_plus, z_plus, goal)


def localize_pu(ctx_plus, base, u_t, z_t, u_plus, z_plus, goal):
    return EstimatorService.localize_pu(ctx_plus, base, u_t, z_t, u_plus, z_plus, goal)


def effectivity(eta: float, reference_error: float) -> float:
    return EstimatorService.effectivity(eta, reference_error)


def compute_gap(j_plus: float, j_base: float, eta_plus: float, iter_part: float, eta_r: float) -> float:
    return EstimatorService.compute_gap(j_plus, j_base, eta_plus, iter_part, eta_r)


def saturation_monitor(j_base: float, j_plus: float, j_ref: float) -> bool:
    return EstimatorService.saturation_monitor(j_base, j_plus, j_ref)

"""Goal service: pressure difference, drag and lift, their derivatives and the combined goal"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from app.models.base import BoundaryTag, GoalKind
from app.models.element import bilinear_shapes, gauss_rule_1d, point_geometry
from app.models.mesh import CCW_EDGES
from app.models.space import PRESSURE, FeSystem, MixedVector, component_blocks
from app.schemas.records import BASE_GOALS, FunctionalDef, GoalValues
from app.services.mesh_service import MeshService
from app.services.space_service import SpaceService

logger = logging.getLogger(__name__)

FORCE_SCALE = 500.0
X1 = (0.15, 0.2)
X2 = (0.25, 0.2)


@dataclass
class FaceData:
    """Quadrature on the cylinder edges of one system"""
    cell_pos: np.ndarray    # (nf,)
    ref_points: np.ndarray  # (nf, nq, 2)
    points: np.ndarray      # (nf, nq, 2)
    normals: np.ndarray     # (nf, 2), pointing out of the fluid
    weights: np.ndarray     # (nf, nq), including the edge length


def _edge_reference_points(local: int, t: np.ndarray) -> np.ndarray:
    zeros, ones = np.zeros_like(t), np.ones_like(t)
    return {
        0: np.stack([t, zeros], axis=1),
        1: np.stack([ones, t], axis=1),
        2: np.stack([t, ones], axis=1),
        3: np.stack([zeros, t], axis=1),
    }[local]


class GoalService:
    """Service for the benchmark quantities of interest"""

    @staticmethod
    def pressure_points(system: FeSystem) -> Tuple[np.ndarray, np.ndarray]:
        """Cell positions and reference coordinates of X1 and X2"""
        return system.cached(
            "pressure_points",
            lambda: MeshService.locate(system.mesh, np.array([X1, X2]), system.cell_ids),
        )

    @staticmethod
    def cylinder_faces(system: FeSystem) -> FaceData:
        def build() -> FaceData:
            mesh = system.mesh
            t, w = gauss_rule_1d(system.vel_degree + 1)
            faces = mesh.tagged_faces(BoundaryTag.CYLINDER)
            nq = len(t)
            cell_pos = np.empty(len(faces), dtype=np.int64)
            ref = np.empty((len(faces), nq, 2))
            normals = np.empty((len(faces), 2))
            weights = np.empty((len(faces), nq))
            for k, (cid, local) in enumerate(faces):
                cell = mesh.cells[cid]
                a, b = CCW_EDGES[local]
                tangent = mesh.vertices[cell.vertices[b]] - mesh.vertices[cell.vertices[a]]
                length = float(np.hypot(tangent[0], tangent[1]))
                cell_pos[k] = system.cell_index[cid]
                ref[k] = _edge_reference_points(local, t)
                normals[k] = (tangent[1] / length, -tangent[0] / length)
                weights[k] = w * length
            coords = system.cell_coordinates()[cell_pos]
            shapes = bilinear_shapes(ref.reshape(-1, 2))[0].reshape(len(faces), nq, 4)
            points = np.einsum("fqk,fkd->fqd", shapes, coords)
            return FaceData(cell_pos, ref, points, normals, weights)
        return system.cached("cylinder_faces", build)

    @staticmethod
    def traction(grad_u: np.ndarray, p: np.ndarray, normals: np.ndarray, nu: float) -> np.ndarray:
        """-C (nu (grad u + grad u^T) n + p n), the force density on the obstacle"""
        sym = grad_u + np.swapaxes(grad_u, -1, -2)
        return -FORCE_SCALE * (nu * np.einsum("...ab,...b->...a", sym, normals) + p[..., None] * normals)

    @staticmethod
    def eval_pressure_diff(u: MixedVector) -> float:
        pos, xi = GoalService.pressure_points(u.system)
        p = SpaceService.evaluate_at(u, pos, xi)["p"]
        return float(p[0] - p[1])

    @staticmethod
    def eval_drag_lift(u: MixedVector) -> Tuple[float, float]:
        faces = GoalService.cylinder_faces(u.system)
        if len(faces.cell_pos) == 0:
            return 0.0, 0.0
        nf, nq = faces.weights.shape
        fields = SpaceService.evaluate_at(
            u, np.repeat(faces.cell_pos, nq), faces.ref_points.reshape(-1, 2), gradients=True
        )
        normals = np.repeat(faces.normals, nq, axis=0)
        force = GoalService.traction(fields["grad_u"], fields["p"], normals, u.system.mesh.spec.viscosity)
        w = faces.weights.reshape(-1)
        return float(np.sum(w * force[:, 0])), float(np.sum(w * force[:, 1]))

    @staticmethod
    def evaluate_goals(u: MixedVector) -> GoalValues:
        drag, lift = GoalService.eval_drag_lift(u)
        return GoalValues(dp=GoalService.eval_pressure_diff(u), drag=drag, lift=lift)

    @staticmethod
    def goal_value(defn: FunctionalDef, u: MixedVector) -> float:
        """Linear(ised) goal: sum of component weights times J_i(u)"""
        values = GoalService.evaluate_goals(u).as_dict()
        return float(sum(weight * values[name] for name, weight in defn.component_weights().items()))

    @staticmethod
    def derivative(defn: FunctionalDef, system: FeSystem) -> np.ndarray:
        """
        Right-hand side rhs_i = J'(phi_i) over all basis functions (unconstrained).

        Args:
            defn: Goal; for COMBINED the weights must already be frozen
            system: Finite element system

        Returns:
            Vector of length n_dofs
        """
        rhs = np.zeros(system.n_dofs)
        weights = defn.component_weights()
        sp = system.local_slice(PRESSURE)

        w_dp = weights.get(GoalKind.PRESSURE_DIFF.value, 0.0)
        if w_dp != 0.0:
            pos, xi = GoalService.pressure_points(system)
            psi, _ = system.pre_basis.evaluate(xi)
            np.add.at(rhs, system.cell_dofs[pos[0], sp], w_dp * psi[0])
            np.add.at(rhs, system.cell_dofs[pos[1], sp], -w_dp * psi[1])

        w_force = np.array([weights.get(GoalKind.DRAG.value, 0.0), weights.get(GoalKind.LIFT.value, 0.0)])
        faces = GoalService.cylinder_faces(system)
        if np.any(w_force != 0.0) and len(faces.cell_pos):
            nu = system.mesh.spec.viscosity
            nf, nq = faces.weights.shape
            coords = np.repeat(system.cell_coordinates()[faces.cell_pos], nq, axis=0)
            ref = faces.ref_points.reshape(-1, 2)
            _, _, _, inv_t = point_geometry(coords, ref)
            normals = np.repeat(faces.normals, nq, axis=0)
            w = faces.weights.reshape(-1)
            # Combined direction e = w_drag e1 + w_lift e2
            direction = w_force
            local = np.zeros((nf * nq, system.n_local))
            for component, block, basis in component_blocks(system):
                values, grads = basis.evaluate(ref)
                if component == PRESSURE:
                    local[:, block] = -FORCE_SCALE * values * (normals @ direction)[:, None]
                    continue
                phys = np.einsum("mab,mib->mia", inv_t, grads)
                grad_n = np.einsum("mia,ma->mi", phys, normals)
                grad_e = phys @ direction
                # v = phi e_c: (grad v + grad v^T) n . d = d_c (grad phi . n) + (grad phi . d) n_c
                local[:, block] = -FORCE_SCALE * nu * (
                    direction[component] * grad_n + grad_e * normals[:, component][:, None]
                )
            local *= w[:, None]
            cells = np.repeat(faces.cell_pos, nq)
            np.add.at(rhs, system.cell_dofs[cells].ravel(), local.ravel())
        return rhs

    @staticmethod
    def combined_from_values(base: Dict[str, float], plus: Dict[str, float]) -> FunctionalDef:
        """Freeze signs s_i = sign(J_i(u+) - J_i(u_h)) and scales |J_i(u_h)|"""
        signs, scales, anchor = {}, {}, {}
        for goal in BASE_GOALS:
            name = goal.value
            scale = abs(base[name])
            if scale == 0.0:
                logger.warning(f"Combined goal: |{name}(u_h)| = 0, component excluded")
            signs[name] = int(np.sign(plus[name] - base[name]))
            scales[name] = scale
            anchor[name] = plus[name]
        return FunctionalDef(kind=GoalKind.COMBINED, signs=signs, scales=scales, anchor=anchor)

    @staticmethod
    def fix_combined_weights(u_h: MixedVector, u_plus: MixedVector) -> FunctionalDef:
        return GoalService.combined_from_values(
            GoalService.evaluate_goals(u_h).as_dict(), GoalService.evaluate_goals(u_plus).as_dict()
        )

    @staticmethod
    def with_combined(values: GoalValues, defn: FunctionalDef, plus: Optional[GoalValues] = None) -> GoalValues:
        """Copy of values with J_E and (given the enriched values) the differences filled in"""
        update = {"combined": defn.combined_value(values.as_dict())}
        if plus is not None:
            update["differences"] = {k: plus.as_dict()[k] - v for k, v in values.as_dict().items()}
        return values.model_copy(update=update)


# Global instance
goal_service = GoalService()


def eval_pressure_diff(u: MixedVector) -> float:
    return GoalService.eval_pressure_diff(u)


def eval_drag_lift(u: MixedVector) -> Tuple[float, float]:
    return GoalService.eval_drag_lift(u)


def derivative(defn: FunctionalDef, system: FeSystem) -> np.ndarray:
    return GoalService.derivative(defn, system)


def fix_combined_weights(u_h: MixedVector, u_plus: MixedVector) -> FunctionalDef:
    return GoalService.fix_combined_weights(u_h, u_plus)

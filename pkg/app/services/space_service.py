"""Space service: numbering, Dirichlet and hanging-node constraints, embedding, evaluation"""
import functools
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.models.base import BoundaryTag, DomainSpec, WALL_TAGS
from app.models.element import LagrangeBasis, get_basis, inverse_map, lagrange_1d, map_points, point_geometry
from app.models.mesh import LOCAL_EDGES, Mesh, edge_key
from app.models.space import (
    PRESSURE, VEL_X, VEL_Y, ConstraintRow, ConstraintSet, FeSystem, MixedVector, component_blocks,
)
from app.services.mesh_service import MeshService
from app.utils.errors import ElementError, IncompatibleSystemsError

logger = logging.getLogger(__name__)

VEL_DEGREES = (2, 4)

NodeKey = Tuple


@functools.lru_cache(maxsize=None)
def _node_descriptors(degree: int) -> Tuple[Tuple, ...]:
    """
    Topological position of every local node in tensor order.

    ('v', slot) for vertices, ('e', local_edge, j) for the j-th node from the
    first vertex of LOCAL_EDGES[local_edge], ('c', ix, iy) for interior nodes.
    """
    k = degree
    corners = {(0, 0): 0, (k, 0): 1, (k, k): 2, (0, k): 3}
    out = []
    for iy in range(k + 1):
        for ix in range(k + 1):
            if (ix, iy) in corners:
                out.append(("v", corners[(ix, iy)]))
            elif iy == 0:
                out.append(("e", 0, ix))
            elif ix == k:
                out.append(("e", 1, iy))
            elif iy == k:
                out.append(("e", 2, ix))
            elif ix == 0:
                out.append(("e", 3, iy))
            else:
                out.append(("c", ix, iy))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def edge_nodes(degree: int, local_edge: int) -> Tuple[int, ...]:
    """Local node indices lying on a local edge, ordered from its first vertex"""
    k = degree
    a, b = LOCAL_EDGES[local_edge]
    start = {0: (0, 0), 1: (k, 0), 2: (k, k), 3: (0, k)}[a]
    end = {0: (0, 0), 1: (k, 0), 2: (k, k), 3: (0, k)}[b]
    nodes = []
    for j in range(k + 1):
        ix = start[0] + (end[0] - start[0]) * j // k
        iy = start[1] + (end[1] - start[1]) * j // k
        nodes.append(ix + (k + 1) * iy)
    return tuple(nodes)


def _global_key(cell_id: int, vertices: Sequence[int], degree: int, desc: Tuple) -> NodeKey:
    if desc[0] == "v":
        return (0, vertices[desc[1]])
    if desc[0] == "e":
        sa, sb = LOCAL_EDGES[desc[1]]
        a, b = vertices[sa], vertices[sb]
        j = desc[2] if a < b else degree - desc[2]
        lo, hi = edge_key(a, b)
        return (1, lo, hi, j)
    return (2, cell_id, desc[1], desc[2])


def number_dofs(mesh: Mesh, cell_ids: Sequence[int],
                fields: Sequence[Tuple[int, LagrangeBasis]]) -> Tuple[np.ndarray, Dict[Tuple, int]]:
    """
    Global numbering by first encounter in (cell_id, component, local node) order.

    Returns:
        (cell_dofs (n_cells, sum of local sizes), {(component,) + node key: dof})
    """
    n_local = sum(basis.n_nodes for _, basis in fields)
    cell_dofs = np.empty((len(cell_ids), n_local), dtype=np.int64)
    keys: Dict[Tuple, int] = {}
    for ci, cid in enumerate(cell_ids):
        vertices = mesh.cells[cid].vertices
        col = 0
        for component, basis in fields:
            for desc in _node_descriptors(basis.degree):
                key = (component,) + _global_key(cid, vertices, basis.degree, desc)
                dof = keys.get(key)
                if dof is None:
                    dof = len(keys)
                    keys[key] = dof
                cell_dofs[ci, col] = dof
                col += 1
    return cell_dofs, keys


class SpaceService:
    """Service for building finite element systems and moving vectors between them"""

    @staticmethod
    def interpolate_inflow(spec: DomainSpec, y: float) -> Tuple[float, float]:
        return spec.inflow_velocity(y)

    @staticmethod
    def hanging_constraints(mesh: Mesh, basis: LagrangeBasis, keys: Dict[Tuple, int],
                            component: int = 0) -> Dict[int, List[Tuple[int, float]]]:
        """
        Constrain fine-side nodes on every hanging edge to the coarse edge trace.

        Positions are measured along the coarse edge from its lower vertex id:
        0 at that vertex, 1/2 at the midpoint, 1 at the other end.

        Returns:
            {constrained dof: [(master dof, weight), ...]} (masters may still be constrained)
        """
        k = basis.degree
        rows: Dict[int, List[Tuple[int, float]]] = {}
        for cid, local, m in mesh.hanging_edges():
            lo, hi = mesh.cells[cid].edge(local)
            masters = [keys[(component, 0, lo)]]
            masters += [keys[(component, 1, lo, hi, j)] for j in range(1, k)]
            masters.append(keys[(component, 0, hi)])
            position = {lo: 0.0, hi: 1.0, m: 0.5}

            fine: List[Tuple[int, float]] = [(keys[(component, 0, m)], 0.5)]
            for x, y in ((lo, m), (m, hi)):
                a, b = edge_key(x, y)
                for j in range(1, k):
                    t = position[a] + (position[b] - position[a]) * j / k
                    fine.append((keys[(component, 1, a, b, j)], t))

            for dof, t in fine:
                weights, _ = lagrange_1d(basis.nodes_1d, np.array([t]))
                rows[dof] = [(master, float(w)) for master, w in zip(masters, weights[0]) if w != 0.0]
        return rows

    @staticmethod
    def _dirichlet_rows(mesh: Mesh, system_cells: Sequence[int], cell_dofs: np.ndarray,
                        dof_points: np.ndarray, basis: LagrangeBasis, n_vel: int) -> Dict[int, float]:
        values: Dict[int, float] = {}
        index = {cid: k for k, cid in enumerate(system_cells)}
        # Walls last: corners shared with the inflow take the no-slip value
        for tag in (BoundaryTag.INFLOW,) + WALL_TAGS:
            for cid, local in mesh.tagged_faces(tag):
                ci = index[cid]
                for node in edge_nodes(basis.degree, local):
                    dof_x = int(cell_dofs[ci, node])
                    dof_y = int(cell_dofs[ci, n_vel + node])
                    if tag == BoundaryTag.INFLOW:
                        ux, uy = mesh.spec.inflow_velocity(dof_points[dof_x, 1])
                    else:
                        ux, uy = 0.0, 0.0
                    values[dof_x] = ux
                    values[dof_y] = uy
        return values

    @staticmethod
    def _expand_chains(rows: Dict[int, ConstraintRow]) -> Dict[int, ConstraintRow]:
        resolved: Dict[int, ConstraintRow] = {}

        def resolve(dof: int) -> ConstraintRow:
            if dof in resolved:
                return resolved[dof]
            masters, value = rows[dof]
            acc: Dict[int, float] = {}
            for master, weight in masters:
                if master in rows:
                    sub_masters, sub_value = resolve(master)
                    value += weight * sub_value
                    for sub, sub_weight in sub_masters:
                        acc[sub] = acc.get(sub, 0.0) + weight * sub_weight
                else:
                    acc[master] = acc.get(master, 0.0) + weight
            row = (tuple(sorted((mm, w) for mm, w in acc.items() if w != 0.0)), value)
            resolved[dof] = row
            return row

        for dof in sorted(rows):
            resolve(dof)
        return resolved

    @staticmethod
    def build_system(mesh: Mesh, vel_degree: int) -> FeSystem:
        """
        Taylor-Hood system [Q_k]^2 x Q_{k/2} with Dirichlet and hanging-node constraints.

        Args:
            mesh: Mesh whose active cells carry the space
            vel_degree: 2 (base) or 4 (p-enriched)

        Returns:
            The constrained system
        """
        if vel_degree not in VEL_DEGREES:
            raise ElementError(f"unsupported velocity degree {vel_degree}")
        vel, pre = get_basis(vel_degree), get_basis(vel_degree // 2)
        cell_ids = list(mesh.active_ids)
        fields = ((VEL_X, vel), (VEL_Y, vel), (PRESSURE, pre))
        cell_dofs, keys = number_dofs(mesh, cell_ids, fields)
        n_dofs = len(keys)

        dof_component = np.empty(n_dofs, dtype=np.int64)
        for key, dof in keys.items():
            dof_component[dof] = key[0]
        dof_points = np.empty((n_dofs, 2))
        coords = mesh.cell_coordinates(cell_ids)
        col = 0
        for _, basis in fields:
            block = cell_dofs[:, col:col + basis.n_nodes]
            dof_points[block] = map_points(coords, basis.nodes)
            col += basis.n_nodes

        rows: Dict[int, ConstraintRow] = {}
        for dof, value in SpaceService._dirichlet_rows(
                mesh, cell_ids, cell_dofs, dof_points, vel, vel.n_nodes).items():
            rows[dof] = ((), value)
        for component, basis in fields:
            for dof, masters in SpaceService.hanging_constraints(mesh, basis, keys, component).items():
                if dof not in rows:
                    rows[dof] = (tuple(masters), 0.0)
        constraints = ConstraintSet(n_dofs, SpaceService._expand_chains(rows))

        system = FeSystem(mesh, vel_degree, cell_ids, cell_dofs, dof_component, dof_points, constraints)
        logger.info(
            f"Built Q{vel_degree}/Q{vel_degree // 2} system: {len(cell_ids)} cells, "
            f"{n_dofs} dofs, {len(constraints)} constrained"
        )
        return system

    @staticmethod
    def vertex_partition(mesh: Mesh, cell_ids: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, ConstraintSet]:
        """
        Continuous Q1 hat functions of a mesh (hanging vertices constrained, no boundary conditions).

        Returns:
            (vertex dofs per cell in vertex-slot order (n_cells, 4), constraints)
        """
        cell_ids = list(mesh.active_ids if cell_ids is None else cell_ids)
        q1 = get_basis(1)
        cell_dofs, keys = number_dofs(mesh, cell_ids, ((0, q1),))
        rows = {dof: (tuple(masters), 0.0)
                for dof, masters in SpaceService.hanging_constraints(mesh, q1, keys, 0).items()}
        constraints = ConstraintSet(len(keys), SpaceService._expand_chains(rows))
        # Q1 tensor order (0,0),(1,0),(0,1),(1,1) -> vertex slots 0,1,3,2
        return cell_dofs[:, [0, 1, 3, 2]], constraints

    @staticmethod
    def lift(system: FeSystem) -> MixedVector:
        """Zero field with the Dirichlet data applied"""
        return system.zeros().distribute()

    @staticmethod
    def interpolate(system: FeSystem, func: Callable[[np.ndarray], np.ndarray]) -> MixedVector:
        """
        Nodal interpolant of func(points (m,2)) -> (m,3) columns (u_x, u_y, p).
        Constraints are not applied.
        """
        values = np.asarray(func(system.dof_points), dtype=float).reshape(system.n_dofs, 3)
        return MixedVector(system, values[np.arange(system.n_dofs), system.dof_component])

    @staticmethod
    def evaluate_at(vector: MixedVector, cell_pos: np.ndarray, xi: np.ndarray,
                    gradients: bool = False) -> Dict[str, np.ndarray]:
        """
        Field values at reference points of given cells (one point per entry).

        Returns:
            {"u": (m,2), "p": (m,)} and, with gradients, {"grad_u": (m,2,2), "grad_p": (m,2)}
        """
        system = vector.system
        cell_pos = np.asarray(cell_pos, dtype=np.int64)
        xi = np.asarray(xi, dtype=float).reshape(-1, 2)
        local = vector.values[system.cell_dofs[cell_pos]]
        out: Dict[str, np.ndarray] = {}
        inv_t = None
        if gradients:
            coords = system.cell_coordinates()[cell_pos]
            _, _, _, inv_t = point_geometry(coords, xi)
            out["grad_u"] = np.empty((len(cell_pos), 2, 2))
        u = np.empty((len(cell_pos), 2))
        for component, block, basis in component_blocks(system):
            values, grads = basis.evaluate(xi)
            coeff = local[:, block]
            field = np.einsum("mi,mi->m", values, coeff)
            if component == PRESSURE:
                out["p"] = field
            else:
                u[:, component] = field
            if gradients:
                ref = np.einsum("mid,mi->md", grads, coeff)
                phys = np.einsum("mab,mb->ma", inv_t, ref)
                if component == PRESSURE:
                    out["grad_p"] = phys
                else:
                    out["grad_u"][:, component, :] = phys
        out["u"] = u
        return out

    @staticmethod
    def evaluate(vector: MixedVector, points) -> Tuple[np.ndarray, np.ndarray]:
        """Velocity (m,2) and pressure (m,) at physical points"""
        system = vector.system
        cell_pos, xi = MeshService.locate(system.mesh, points, system.cell_ids)
        fields = SpaceService.evaluate_at(vector, cell_pos, xi)
        return fields["u"], fields["p"]

    @staticmethod
    def embed(vector: MixedVector, target: FeSystem, homogeneous: bool = False) -> MixedVector:
        """
        Re-express a base-space vector on its p- or h-enrichment by nodal interpolation.

        Args:
            vector: Vector on the base system
            target: Same mesh with doubled degree, or the uniform refinement with equal degree
            homogeneous: Apply zero Dirichlet data (adjoint vectors)

        Raises:
            IncompatibleSystemsError: target is neither enrichment of the source
        """
        source = vector.system
        target_coords = target.cell_coordinates()
        if target.mesh is source.mesh and source.vel_degree == 2 and target.vel_degree == 4:
            src_pos = np.array([source.cell_index[int(cid)] for cid in target.cell_ids])

            def reference_points(basis: LagrangeBasis) -> np.ndarray:
                return np.broadcast_to(basis.nodes, (target.n_cells,) + basis.nodes.shape)
        elif SpaceService._is_uniform_refinement(source, target):
            parents = [target.mesh.cells[int(cid)].parent for cid in target.cell_ids]
            src_pos = np.array([source.cell_index[p] for p in parents])
            parent_coords = source.cell_coordinates()[src_pos]

            def reference_points(basis: LagrangeBasis) -> np.ndarray:
                phys = map_points(target_coords, basis.nodes)
                nb = basis.n_nodes
                coords = np.repeat(parent_coords, nb, axis=0)
                xi, _ = inverse_map(coords, phys.reshape(-1, 2))
                return xi.reshape(target.n_cells, nb, 2)
        else:
            raise IncompatibleSystemsError(f"{target!r} is not an enrichment of {source!r}")

        out = np.zeros(target.n_dofs)
        src_local = vector.values[source.cell_dofs[src_pos]]
        src_blocks = component_blocks(source)
        for (component, t_block, t_basis), (_, s_block, s_basis) in zip(component_blocks(target), src_blocks):
            xi = reference_points(t_basis)
            values, _ = s_basis.evaluate(xi.reshape(-1, 2))
            values = values.reshape(target.n_cells, t_basis.n_nodes, s_basis.n_nodes)
            field = np.einsum("cts,cs->ct", values, src_local[:, s_block])
            out[target.cell_dofs[:, t_block]] = field
        return MixedVector(target, target.constraints.distribute(out, homogeneous))

    @staticmethod
    def _is_uniform_refinement(source: FeSystem, target: FeSystem) -> bool:
        if source.vel_degree != target.vel_degree or target.n_cells != 4 * source.n_cells:
            return False
        for cid in target.cell_ids:
            cell = target.mesh.cells.get(int(cid))
            if cell is None or cell.parent not in source.cell_index:
                return False
        return True


# Global instance
space_service = SpaceService()


def build_system(mesh: Mesh, vel_degree: int) -> FeSystem:
    return SpaceService.build_system(mesh, vel_degree)


def embed(vector: MixedVector, target: FeSystem, homogeneous: bool = False) -> MixedVector:
    return SpaceService.embed(vector, target, homogeneous)


def evaluate(vector: MixedVector, points) -> Tuple[np.ndarray, np.ndarray]:
    return SpaceService.evaluate(vector, points)

"""Mixed finite element spaces: constraints, systems and coefficient vectors"""
import itertools
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from app.models.element import LagrangeBasis, get_basis
from app.models.mesh import Mesh
from app.utils.errors import IncompatibleSystemsError

VEL_X, VEL_Y, PRESSURE = 0, 1, 2
COMPONENT_NAMES = ("u_x", "u_y", "p")

ConstraintRow = Tuple[Tuple[Tuple[int, float], ...], float]

_system_ids = itertools.count(1)


class ConstraintSet:
    """
    Affine constraints x_i = sum_j w_ij x_j + g_i with unconstrained masters.

    Stored as an n-by-n matrix P (identity on free rows, weights on
    constrained rows) and an inhomogeneity vector g, so that distributing
    a vector is x -> P x + g.
    """

    def __init__(self, n_dofs: int, rows: Dict[int, ConstraintRow]):
        self.n_dofs = n_dofs
        self.rows = dict(sorted(rows.items()))
        self.constrained = np.zeros(n_dofs, dtype=bool)
        self.inhomogeneity = np.zeros(n_dofs)
        r_idx, c_idx, vals = [], [], []
        for dof, (masters, value) in self.rows.items():
            self.constrained[dof] = True
            self.inhomogeneity[dof] = value
            for master, weight in masters:
                r_idx.append(dof)
                c_idx.append(master)
                vals.append(weight)
        free = np.nonzero(~self.constrained)[0]
        r_idx.extend(free.tolist())
        c_idx.extend(free.tolist())
        vals.extend([1.0] * len(free))
        self.matrix = sparse.csr_matrix((vals, (r_idx, c_idx)), shape=(n_dofs, n_dofs))
        self.matrix.sort_indices()
        self._identity_rows = sparse.diags(self.constrained.astype(float), format="csr")

    def __len__(self) -> int:
        return len(self.rows)

    def is_constrained(self, dof: int) -> bool:
        return bool(self.constrained[dof])

    def distribute(self, values: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        """Overwrite constrained entries with their constraint expressions"""
        out = self.matrix @ np.asarray(values, dtype=float)
        if not homogeneous:
            out = out + self.inhomogeneity
        return out

    def condense_matrix(self, matrix) -> sparse.csr_matrix:
        """P^T A P with unit diagonal on constrained rows"""
        condensed = (self.matrix.T @ matrix @ self.matrix + self._identity_rows).tocsr()
        condensed.sum_duplicates()
        condensed.sort_indices()
        return condensed

    def condense_vector(self, vector: np.ndarray) -> np.ndarray:
        """P^T b; constrained entries are zero"""
        return self.matrix.T @ np.asarray(vector, dtype=float)


class FeSystem:
    """
    Taylor-Hood space [Q_k]^2 x Q_{k/2} on the active cells of a mesh.

    Local layout per cell: u_x nodes, then u_y nodes, then p nodes, each in
    tensor order of the respective basis.
    """

    def __init__(
        self,
        mesh: Mesh,
        vel_degree: int,
        cell_ids: Sequence[int],
        cell_dofs: np.ndarray,
        dof_component: np.ndarray,
        dof_points: np.ndarray,
        constraints: ConstraintSet,
    ):
        self.system_id = next(_system_ids)
        self.mesh = mesh
        self.vel_degree = vel_degree
        self.pre_degree = vel_degree // 2
        self.vel_basis: LagrangeBasis = get_basis(vel_degree)
        self.pre_basis: LagrangeBasis = get_basis(self.pre_degree)
        self.cell_ids = np.asarray(cell_ids, dtype=np.int64)
        self.cell_index = {int(cid): k for k, cid in enumerate(self.cell_ids)}
        self.cell_dofs = cell_dofs
        self.dof_component = dof_component
        self.dof_points = dof_points
        self.constraints = constraints
        self.n_dofs = len(dof_component)
        self._cache: Dict[str, object] = {}

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def n_vel_local(self) -> int:
        return self.vel_basis.n_nodes

    @property
    def n_local(self) -> int:
        return 2 * self.vel_basis.n_nodes + self.pre_basis.n_nodes

    def local_slice(self, component: int) -> slice:
        nv = self.vel_basis.n_nodes
        if component == VEL_X:
            return slice(0, nv)
        if component == VEL_Y:
            return slice(nv, 2 * nv)
        return slice(2 * nv, self.n_local)

    def component_dofs(self, component: int) -> np.ndarray:
        return np.nonzero(self.dof_component == component)[0]

    def cell_coordinates(self) -> np.ndarray:
        return self.mesh.cell_coordinates(self.cell_ids)

    def cached(self, key: str, factory):
        """Memoise derived data that depends only on the system"""
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]

    def zeros(self) -> "MixedVector":
        return MixedVector(self, np.zeros(self.n_dofs))

    def __repr__(self) -> str:
        return (f"FeSystem(id={self.system_id}, Q{self.vel_degree}/Q{self.pre_degree}, "
                f"cells={self.n_cells}, dofs={self.n_dofs})")


class MixedVector:
    """Coefficient vector of a (velocity, pressure) field on one FeSystem"""

    def __init__(self, system: FeSystem, values: Optional[np.ndarray] = None):
        self.system = system
        if values is None:
            values = np.zeros(system.n_dofs)
        values = np.asarray(values, dtype=float)
        if values.shape != (system.n_dofs,):
            raise IncompatibleSystemsError(
                f"vector of length {values.shape} does not match {system.n_dofs} dofs"
            )
        self.values = values

    def _check(self, other: "MixedVector") -> None:
        if other.system is not self.system:
            raise IncompatibleSystemsError(
                f"vectors live on different systems ({self.system.system_id} vs {other.system.system_id})"
            )

    def copy(self) -> "MixedVector":
        return MixedVector(self.system, self.values.copy())

    def distribute(self, homogeneous: bool = False) -> "MixedVector":
        return MixedVector(self.system, self.system.constraints.distribute(self.values, homogeneous))

    def __add__(self, other: "MixedVector") -> "MixedVector":
        self._check(other)
        return MixedVector(self.system, self.values + other.values)

    def __sub__(self, other: "MixedVector") -> "MixedVector":
        self._check(other)
        return MixedVector(self.system, self.values - other.values)

    def __mul__(self, scalar: float) -> "MixedVector":
        return MixedVector(self.system, self.values * float(scalar))

    __rmul__ = __mul__

    def dot(self, other: np.ndarray) -> float:
        return float(np.dot(self.values, other))

    def local_values(self) -> np.ndarray:
        """Coefficients per cell in local layout, shape (n_cells, n_local)"""
        return self.values[self.system.cell_dofs]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def component_blocks(system: FeSystem) -> List[Tuple[int, slice, LagrangeBasis]]:
    return [
        (VEL_X, system.local_slice(VEL_X), system.vel_basis),
        (VEL_Y, system.local_slice(VEL_Y), system.vel_basis),
        (PRESSURE, system.local_slice(PRESSURE), system.pre_basis),
    ]

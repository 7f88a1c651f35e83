"""Hierarchical quadrilateral mesh with 1-irregular hanging nodes"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from app.models.base import BoundaryTag, DomainSpec
from app.utils.errors import MeshError

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

# Local edges as vertex slots, oriented along increasing reference coordinate
LOCAL_EDGES = ((0, 1), (1, 2), (3, 2), (0, 3))
# The same edges traversed counter-clockwise
CCW_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))

RADIUS_TOL = 1e-12


def edge_key(a: int, b: int) -> Edge:
    """Orientation-free edge identifier"""
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Cell:
    """One quadrilateral of the hierarchy; vertices counter-clockwise"""
    cell_id: int
    vertices: Tuple[int, int, int, int]
    level: int
    parent: Optional[int] = None
    children: Tuple[int, ...] = ()

    @property
    def is_active(self) -> bool:
        return not self.children

    def edge(self, local: int) -> Edge:
        a, b = LOCAL_EDGES[local]
        return edge_key(self.vertices[a], self.vertices[b])

    def edges(self) -> List[Edge]:
        return [self.edge(k) for k in range(4)]


class Mesh:
    """
    Immutable quadrilateral mesh.

    Keeps the full refinement hierarchy (inactive parents included), boundary
    tags of every boundary edge ever created, the midpoint vertex of every split
    edge and the parent of every half edge. Refinement returns a new Mesh.
    """

    def __init__(
        self,
        spec: DomainSpec,
        vertices,
        cells: Dict[int, Cell],
        boundary_tags: Dict[Edge, BoundaryTag],
        midpoints: Optional[Dict[Edge, int]] = None,
        edge_parents: Optional[Dict[Edge, Edge]] = None,
    ):
        self.spec = spec
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.vertices.setflags(write=False)
        self.cells = dict(cells)
        self.boundary_tags = dict(boundary_tags)
        self.midpoints = dict(midpoints or {})
        self.edge_parents = dict(edge_parents or {})
        self.active_ids = tuple(sorted(cid for cid, cell in self.cells.items() if cell.is_active))
        self._edge_owners: Optional[Dict[Edge, List[int]]] = None

    # ------------------------------------------------------------------
    # Basic queries
    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_active_cells(self) -> int:
        return len(self.active_ids)

    @property
    def next_cell_id(self) -> int:
        return max(self.cells) + 1 if self.cells else 0

    @property
    def max_level(self) -> int:
        return max(self.cells[cid].level for cid in self.active_ids)

    def active_cells(self) -> List[Cell]:
        return [self.cells[cid] for cid in self.active_ids]

    def cell_coordinates(self, cell_ids: Optional[Iterable[int]] = None) -> np.ndarray:
        """Vertex coordinates per cell, shape (n, 4, 2)"""
        ids = self.active_ids if cell_ids is None else list(cell_ids)
        idx = np.array([self.cells[cid].vertices for cid in ids], dtype=np.int64).reshape(-1, 4)
        return self.vertices[idx]

    def edge_owners(self) -> Dict[Edge, List[int]]:
        """Active cells owning each full edge"""
        if self._edge_owners is None:
            owners: Dict[Edge, List[int]] = {}
            for cid in self.active_ids:
                for e in self.cells[cid].edges():
                    owners.setdefault(e, []).append(cid)
            self._edge_owners = owners
        return self._edge_owners

    def boundary_tag(self, a: int, b: int) -> Optional[BoundaryTag]:
        return self.boundary_tags.get(edge_key(a, b))

    def tagged_faces(self, tag: BoundaryTag) -> List[Tuple[int, int]]:
        """(cell_id, local edge) of every active boundary edge with the given tag"""
        faces = []
        for cid in self.active_ids:
            cell = self.cells[cid]
            for local in range(4):
                if self.boundary_tags.get(cell.edge(local)) == tag:
                    faces.append((cid, local))
        return faces

    def hanging_edges(self) -> List[Tuple[int, int, int]]:
        """(coarse cell_id, local edge, midpoint vertex) for every edge split on one side only"""
        found = []
        for cid in self.active_ids:
            cell = self.cells[cid]
            for local in range(4):
                m = self.midpoints.get(cell.edge(local))
                if m is not None:
                    found.append((cid, local, m))
        return found

    def has_cylinder(self) -> bool:
        return any(tag == BoundaryTag.CYLINDER for tag in self.boundary_tags.values())

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------
    def cell_areas(self, cell_ids: Optional[Iterable[int]] = None) -> np.ndarray:
        """Shoelace areas (exact for the bilinear image of a planar quadrilateral)"""
        xy = self.cell_coordinates(cell_ids)
        x, y = xy[:, :, 0], xy[:, :, 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def area(self) -> float:
        return float(np.sum(self.cell_areas()))

    def boundary_length(self, tag: BoundaryTag) -> float:
        lengths = []
        for cid, local in self.tagged_faces(tag):
            a, b = self.cells[cid].edge(local)
            lengths.append(np.linalg.norm(self.vertices[b] - self.vertices[a]))
        return float(np.sum(lengths)) if lengths else 0.0

    # ------------------------------------------------------------------
    # Invariants
    # ------------------------------------------------------------------
    def check(self) -> None:
        """
        Verify orientation, circle placement, 1-irregularity and conformity.

        Raises:
            MeshError: on the first violated invariant
        """
        self._check_orientation()
        self._check_cylinder_vertices()
        self._check_irregularity()

    def _check_orientation(self) -> None:
        xy = self.cell_coordinates()
        for k in range(4):
            prev_v = xy[:, (k - 1) % 4] - xy[:, k]
            next_v = xy[:, (k + 1) % 4] - xy[:, k]
            cross = next_v[:, 0] * prev_v[:, 1] - next_v[:, 1] * prev_v[:, 0]
            if np.any(cross <= 0.0):
                bad = self.active_ids[int(np.argwhere(cross <= 0.0)[0, 0])]
                raise MeshError(f"cell {bad} is inverted or degenerate at local vertex {k}")

    def _check_cylinder_vertices(self) -> None:
        center = np.asarray(self.spec.cylinder_center)
        for cid, local in self.tagged_faces(BoundaryTag.CYLINDER):
            for v in self.cells[cid].edge(local):
                dist = np.linalg.norm(self.vertices[v] - center)
                if abs(dist - self.spec.cylinder_radius) > RADIUS_TOL:
                    raise MeshError(f"cylinder vertex {v} at distance {dist!r} from the center")

    def _check_irregularity(self) -> None:
        owners = self.edge_owners()
        for cid in self.active_ids:
            cell = self.cells[cid]
            for e in cell.edges():
                if e in self.boundary_tags:
                    if len(owners[e]) != 1:
                        raise MeshError(f"boundary edge {e} has {len(owners[e])} owners")
                    continue
                m = self.midpoints.get(e)
                if m is not None:
                    for half in (edge_key(e[0], m), edge_key(m, e[1])):
                        fine = owners.get(half, [])
                        if len(fine) != 1 or half in self.midpoints:
                            raise MeshError(f"cell {cid}: edge {e} violates 1-irregularity")
                        if self.cells[fine[0]].level != cell.level + 1:
                            raise MeshError(f"cell {cid}: level jump across edge {e}")
                    continue
                same = owners[e]
                if len(same) == 2:
                    if self.cells[same[0]].level != self.cells[same[1]].level:
                        raise MeshError(f"edge {e} shared by cells of different levels")
                    continue
                parent = self.edge_parents.get(e)
                coarse = owners.get(parent, []) if parent is not None else []
                if len(coarse) != 1 or self.cells[coarse[0]].level != cell.level - 1:
                    raise MeshError(f"cell {cid}: interior edge {e} has no valid neighbour")

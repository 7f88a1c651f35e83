"""Mesh service: benchmark mesh construction, adaptive refinement and point location"""
import logging
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from app.models.base import BoundaryTag, DomainSpec
from app.models.element import inverse_map
from app.models.mesh import Cell, Edge, Mesh, edge_key
from app.utils.errors import MeshError, PointOutsideMeshError

logger = logging.getLogger(__name__)

LOCATE_TOL = 1e-10


def _segment(start: float, stop: float, spacing: float) -> List[float]:
    """Grid lines on [start, stop) with roughly the given spacing"""
    n = max(1, int(round((stop - start) / spacing)))
    return [start + i * (stop - start) / n for i in range(n)]


class _Refiner:
    """Mutable working copy of a mesh while cells are being split"""

    def __init__(self, mesh: Mesh):
        self.spec = mesh.spec
        self.vertices = [tuple(v) for v in mesh.vertices.tolist()]
        self.cells = dict(mesh.cells)
        self.tags = dict(mesh.boundary_tags)
        self.midpoints = dict(mesh.midpoints)
        self.edge_parents = dict(mesh.edge_parents)
        self.next_id = mesh.next_cell_id

    def _add_vertex(self, point) -> int:
        self.vertices.append((float(point[0]), float(point[1])))
        return len(self.vertices) - 1

    def _midpoint(self, a: int, b: int) -> int:
        key = edge_key(a, b)
        m = self.midpoints.get(key)
        if m is not None:
            return m
        xa, xb = self.vertices[a], self.vertices[b]
        point = (0.5 * (xa[0] + xb[0]), 0.5 * (xa[1] + xb[1]))
        tag = self.tags.get(key)
        if tag == BoundaryTag.CYLINDER:
            point = self.spec.project_to_cylinder(*point)
        m = self._add_vertex(point)
        self.midpoints[key] = m
        for half in (edge_key(a, m), edge_key(m, b)):
            self.edge_parents[half] = key
            if tag is not None:
                self.tags[half] = tag
        return m

    def split(self, cid: int) -> None:
        cell = self.cells[cid]
        if not cell.is_active:
            return
        v0, v1, v2, v3 = cell.vertices
        m01 = self._midpoint(v0, v1)
        m12 = self._midpoint(v1, v2)
        m23 = self._midpoint(v2, v3)
        m30 = self._midpoint(v3, v0)
        corners = np.array([self.vertices[v] for v in cell.vertices])
        c = self._add_vertex(corners.mean(axis=0))
        quads = ((v0, m01, c, m30), (m01, v1, m12, c), (c, m12, v2, m23), (m30, c, m23, v3))
        ids = tuple(range(self.next_id, self.next_id + 4))
        self.next_id += 4
        self.cells[cid] = replace(cell, children=ids)
        for child_id, quad in zip(ids, quads):
            self.cells[child_id] = Cell(child_id, quad, cell.level + 1, parent=cid)

    def build(self) -> Mesh:
        return Mesh(self.spec, self.vertices, self.cells, self.tags, self.midpoints, self.edge_parents)


class MeshService:
    """Service for building and refining the benchmark mesh"""

    @staticmethod
    def build_benchmark_mesh(spec: DomainSpec, pre_refinements: int = 0) -> Mesh:
        """
        Structured channel grid with a ring of eight cells grafted around the cylinder.

        The obstacle sits in a box of half-width 2r made of four grid cells;
        these are replaced by eight ring cells between the box perimeter and
        eight points on the circle.

        Args:
            spec: Benchmark geometry
            pre_refinements: Number of uniform refinements applied afterwards

        Returns:
            The benchmark mesh
        """
        if pre_refinements < 0:
            raise MeshError("pre_refinements must be non-negative")
        cx, cy = spec.cylinder_center
        half = 2.0 * spec.cylinder_radius
        length, height = spec.channel_length, spec.channel_height
        if not (cx - half > 0 and cy - half > 0 and cx + half < length and cy + half < height):
            raise MeshError("cylinder too close to the channel walls for the ring layout")

        xs = _segment(0.0, cx - half, half) + [cx - half, cx] + _segment(cx + half, length, half) + [length]
        ys = _segment(0.0, cy - half, half) + [cy - half, cy] + _segment(cy + half, height, half) + [height]
        ib = len(_segment(0.0, cx - half, half))
        jb = len(_segment(0.0, cy - half, half))
        nx, ny = len(xs) - 1, len(ys) - 1

        vertices: List[Tuple[float, float]] = []
        grid: Dict[Tuple[int, int], int] = {}
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                if (i, j) == (ib + 1, jb + 1):
                    continue
                grid[(i, j)] = len(vertices)
                vertices.append((x, y))

        cells: Dict[int, Cell] = {}
        for j in range(ny):
            for i in range(nx):
                if ib <= i <= ib + 1 and jb <= j <= jb + 1:
                    continue
                quad = (grid[(i, j)], grid[(i + 1, j)], grid[(i + 1, j + 1)], grid[(i, j + 1)])
                cid = len(cells)
                cells[cid] = Cell(cid, quad, 0)

        tags = MeshService._outer_tags(grid, nx, ny)

        # Box perimeter counter-clockwise starting at angle 0
        perimeter = [(ib + 2, jb + 1), (ib + 2, jb + 2), (ib + 1, jb + 2), (ib, jb + 2),
                     (ib, jb + 1), (ib, jb), (ib + 1, jb), (ib + 2, jb)]
        box_ids = [grid[p] for p in perimeter]
        circle_ids = []
        for vid in box_ids:
            dx, dy = vertices[vid][0] - cx, vertices[vid][1] - cy
            norm = np.hypot(dx, dy)
            circle_ids.append(len(vertices))
            vertices.append((cx + spec.cylinder_radius * dx / norm, cy + spec.cylinder_radius * dy / norm))
        n_ring = len(box_ids)
        for k in range(n_ring):
            kn = (k + 1) % n_ring
            quad = (circle_ids[k], box_ids[k], box_ids[kn], circle_ids[kn])
            cid = len(cells)
            cells[cid] = Cell(cid, quad, 0)
            tags[edge_key(circle_ids[k], circle_ids[kn])] = BoundaryTag.CYLINDER

        mesh = Mesh(spec, vertices, cells, tags)
        logger.info(f"Built benchmark mesh: {mesh.n_active_cells} cells, {mesh.n_vertices} vertices")
        for _ in range(pre_refinements):
            mesh = MeshService.uniform_refine(mesh)
        return mesh

    @staticmethod
    def build_rectangle_mesh(spec: DomainSpec, nx: int, ny: int, length: Optional[float] = None,
                             height: Optional[float] = None) -> Mesh:
        """Cylinder-free nx-by-ny channel (inflow left, outflow right, walls top and bottom)"""
        if nx < 1 or ny < 1:
            raise MeshError("rectangle mesh needs at least one cell per direction")
        length = spec.channel_length if length is None else length
        height = spec.channel_height if height is None else height
        vertices = []
        grid: Dict[Tuple[int, int], int] = {}
        for j in range(ny + 1):
            for i in range(nx + 1):
                grid[(i, j)] = len(vertices)
                vertices.append((length * i / nx, height * j / ny))
        cells = {}
        for j in range(ny):
            for i in range(nx):
                cid = len(cells)
                quad = (grid[(i, j)], grid[(i + 1, j)], grid[(i + 1, j + 1)], grid[(i, j + 1)])
                cells[cid] = Cell(cid, quad, 0)
        return Mesh(spec, vertices, cells, MeshService._outer_tags(grid, nx, ny))

    @staticmethod
    def _outer_tags(grid: Dict[Tuple[int, int], int], nx: int, ny: int) -> Dict[Edge, BoundaryTag]:
        tags: Dict[Edge, BoundaryTag] = {}
        for i in range(nx):
            tags[edge_key(grid[(i, 0)], grid[(i + 1, 0)])] = BoundaryTag.NO_SLIP
            tags[edge_key(grid[(i, ny)], grid[(i + 1, ny)])] = BoundaryTag.NO_SLIP
        for j in range(ny):
            tags[edge_key(grid[(0, j)], grid[(0, j + 1)])] = BoundaryTag.INFLOW
            tags[edge_key(grid[(nx, j)], grid[(nx, j + 1)])] = BoundaryTag.OUTFLOW
        return tags

    @staticmethod
    def refinement_closure(mesh: Mesh, marked: Iterable[int]) -> Set[int]:
        """Marked cells plus every coarser neighbour that must be split to stay 1-irregular"""
        owners = mesh.edge_owners()
        result = set(marked)
        stack = sorted(result)
        while stack:
            cell = mesh.cells[stack.pop()]
            for e in cell.edges():
                if e in mesh.boundary_tags or e in mesh.midpoints or len(owners.get(e, ())) == 2:
                    continue
                parent = mesh.edge_parents.get(e)
                for coarse in owners.get(parent, ()) if parent is not None else ():
                    if coarse not in result:
                        result.add(coarse)
                        stack.append(coarse)
        return result

    @staticmethod
    def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
        """
        Quadrisect marked cells, closing the refinement for 1-irregularity.

        Args:
            mesh: Current mesh (left untouched)
            marked: Active cell ids to split

        Returns:
            New mesh; surviving cell ids unchanged
        """
        marked = {int(c) for c in marked}
        unknown = marked.difference(mesh.active_ids)
        if unknown:
            raise MeshError(f"cannot refine non-active cells {sorted(unknown)[:5]}")
        to_refine = MeshService.refinement_closure(mesh, marked)
        refiner = _Refiner(mesh)
        for cid in sorted(to_refine, key=lambda c: (mesh.cells[c].level, c)):
            refiner.split(cid)
        refined = refiner.build()
        logger.debug(
            f"Refined {len(marked)} marked (+{len(to_refine) - len(marked)} closure) cells: "
            f"{mesh.n_active_cells} -> {refined.n_active_cells} active cells"
        )
        return refined

    @staticmethod
    def uniform_refine(mesh: Mesh) -> Mesh:
        return MeshService.refine(mesh, mesh.active_ids)

    @staticmethod
    def locate(mesh: Mesh, points, cell_ids: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Find the containing active cell and reference coordinates of each point.

        Args:
            mesh: Mesh to search
            points: Physical points, shape (m, 2)
            cell_ids: Cells to search (default: all active cells, ascending id)

        Returns:
            (positions into cell_ids (m,), reference points (m, 2))

        Raises:
            PointOutsideMeshError: a point lies in no cell
        """
        ids = list(mesh.active_ids if cell_ids is None else cell_ids)
        coords = mesh.cell_coordinates(ids)
        lo = coords.min(axis=1) - LOCATE_TOL
        hi = coords.max(axis=1) + LOCATE_TOL
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        found = np.empty(len(points), dtype=np.int64)
        xi_out = np.empty_like(points)
        for k, p in enumerate(points):
            cand = np.nonzero(np.all(lo <= p, axis=1) & np.all(p <= hi, axis=1))[0]
            if cand.size:
                xi, ok = inverse_map(coords[cand], np.broadcast_to(p, (cand.size, 2)))
                inside = ok & np.all(xi >= -LOCATE_TOL, axis=1) & np.all(xi <= 1.0 + LOCATE_TOL, axis=1)
                hits = np.nonzero(inside)[0]
                if hits.size:
                    found[k] = cand[hits[0]]
                    xi_out[k] = np.clip(xi[hits[0]], 0.0, 1.0)
                    continue
            raise PointOutsideMeshError(p)
        return found, xi_out


# Global instance
mesh_service = MeshService()


def build_benchmark_mesh(spec: DomainSpec, pre_refinements: int = 0) -> Mesh:
    return MeshService.build_benchmark_mesh(spec, pre_refinements)


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    return MeshService.refine(mesh, marked)


def uniform_refine(mesh: Mesh) -> Mesh:
    return MeshService.uniform_refine(mesh)

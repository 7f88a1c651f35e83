"""VTK service: legacy ASCII unstructured-grid output of meshes and solution fields"""
import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from app.models.element import REFERENCE_VERTICES
from app.models.mesh import Mesh
from app.models.space import MixedVector
from app.services.space_service import SpaceService

logger = logging.getLogger(__name__)

VTK_QUAD = 9


class VtkService:
    """Service for writing legacy VTK files"""

    @staticmethod
    def vertex_fields(vector: MixedVector) -> Dict[str, np.ndarray]:
        """Velocity (n_vertices, 2) and pressure (n_vertices,) at the mesh vertices"""
        system = vector.system
        n_cells = system.n_cells
        cell_pos = np.repeat(np.arange(n_cells), 4)
        xi = np.tile(REFERENCE_VERTICES, (n_cells, 1))
        fields = SpaceService.evaluate_at(vector, cell_pos, xi)
        vertex_ids = np.array([system.mesh.cells[int(cid)].vertices for cid in system.cell_ids]).ravel()
        u = np.zeros((system.mesh.n_vertices, 2))
        p = np.zeros(system.mesh.n_vertices)
        u[vertex_ids] = fields["u"]
        p[vertex_ids] = fields["p"]
        return {"u": u, "p": p}

    @staticmethod
    def write_vtk(path: Path, mesh: Mesh, u: Optional[MixedVector] = None, z: Optional[MixedVector] = None,
                  indicators: Optional[Dict[int, float]] = None, title: str = "dwr step") -> Path:
        """
        Write the active cells as VTK_QUAD with point data u, p, z_u, z_p and
        cell data indicator and level.

        Args:
            path: Target file
            mesh: Mesh whose active cells are written
            u: Primal solution (optional)
            z: Adjoint solution (optional)
            indicators: cell_id -> error indicator (optional)
            title: Header line

        Returns:
            The written path
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cells = mesh.active_cells()
        points = mesh.vertices
        with path.open("w", encoding="utf-8") as f:
            f.write("# vtk DataFile Version 2.0\n")
            f.write(f"{title}\n")
            f.write("ASCII\n")
            f.write("DATASET UNSTRUCTURED_GRID\n")
            f.write(f"POINTS {len(points)} double\n")
            for x, y in points:
                f.write(f"{x:.17g} {y:.17g} 0\n")
            f.write(f"\nCELLS {len(cells)} {5 * len(cells)}\n")
            for cell in cells:
                f.write("4 {} {} {} {}\n".format(*cell.vertices))
            f.write(f"\nCELL_TYPES {len(cells)}\n")
            f.write(f"{VTK_QUAD}\n" * len(cells))

            f.write(f"\nCELL_DATA {len(cells)}\n")
            f.write("SCALARS level int 1\nLOOKUP_TABLE default\n")
            for cell in cells:
                f.write(f"{cell.level}\n")
            if indicators is not None:
                f.write("SCALARS indicator double 1\nLOOKUP_TABLE default\n")
                for cell in cells:
                    f.write(f"{indicators.get(cell.cell_id, 0.0):.17g}\n")

            point_fields = []
            for prefix, vector in (("", u), ("z_", z)):
                if vector is not None:
                    values = VtkService.vertex_fields(vector)
                    point_fields.append((f"{prefix}u", values["u"], True))
                    point_fields.append((f"{prefix}p", values["p"], False))
            if point_fields:
                f.write(f"\nPOINT_DATA {len(points)}\n")
            for name, values, is_vector in point_fields:
                if is_vector:
                    f.write(f"VECTORS {name} double\n")
                    for vx, vy in values:
                        f.write(f"{vx:.17g} {vy:.17g} 0\n")
                else:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in values:
                        f.write(f"{v:.17g}\n")
        logger.debug(f"Wrote {path}")
        return path


# Global instance
vtk_service = VtkService()


def write_vtk(path: Path, mesh: Mesh, u=None, z=None, indicators=None, title: str = "dwr step") -> Path:
    return VtkService.write_vtk(path, mesh, u, z, indicators, title)

import numpy as np
import pytest

from app.services.space_service import SpaceService
from app.services.vtk_service import VtkService


def test_mesh_only_file(tmp_path, benchmark_mesh):
    path = VtkService.write_vtk(tmp_path / "mesh.vtk", benchmark_mesh)
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 2.0\n")
    assert f"POINTS {benchmark_mesh.n_vertices} double" in text
    assert "CELLS 92 460" in text
    assert "CELL_TYPES 92" in text
    assert "SCALARS level int 1" in text
    assert "POINT_DATA" not in text


def test_fields_and_indicators(tmp_path, benchmark_mesh):
    system = SpaceService.build_system(benchmark_mesh, 2)
    u = SpaceService.interpolate(system, lambda x: np.stack([x[:, 0], x[:, 1], x[:, 0] + x[:, 1]], axis=1))
    indicators = {cid: float(cid) for cid in benchmark_mesh.active_ids}
    text = VtkService.write_vtk(tmp_path / "step_0.vtk", benchmark_mesh, u, u, indicators).read_text()
    for header in ("VECTORS u double", "SCALARS p double 1", "VECTORS z_u double", "SCALARS z_p double 1",
                   "SCALARS indicator double 1", f"POINT_DATA {benchmark_mesh.n_vertices}"):
        assert header in text


def test_vertex_fields_sample_the_solution(benchmark_mesh):
    system = SpaceService.build_system(benchmark_mesh, 2)
    u = SpaceService.interpolate(system, lambda x: np.stack([x[:, 0], x[:, 1], x[:, 0] + x[:, 1]], axis=1))
    fields = VtkService.vertex_fields(u)
    assert fields["u"] == pytest.approx(benchmark_mesh.vertices, abs=1e-13)
    assert fields["p"] == pytest.approx(benchmark_mesh.vertices.sum(axis=1), abs=1e-13)

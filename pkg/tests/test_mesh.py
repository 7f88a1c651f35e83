import math

import numpy as np
import pytest

from app.models.base import BoundaryTag, DomainSpec
from app.services.goal_service import X1, X2
from app.services.mesh_service import MeshService
from app.utils.errors import MeshError, PointOutsideMeshError


def test_benchmark_mesh_layout(benchmark_mesh, spec):
    assert benchmark_mesh.n_active_cells == 92
    assert len(benchmark_mesh.tagged_faces(BoundaryTag.CYLINDER)) == 8
    assert benchmark_mesh.boundary_length(BoundaryTag.INFLOW) == pytest.approx(spec.channel_height)
    assert benchmark_mesh.boundary_length(BoundaryTag.OUTFLOW) == pytest.approx(spec.channel_height)
    assert benchmark_mesh.has_cylinder()
    benchmark_mesh.check()


def test_benchmark_mesh_is_deterministic(spec, benchmark_mesh):
    again = MeshService.build_benchmark_mesh(spec)
    assert np.array_equal(again.vertices, benchmark_mesh.vertices)
    assert again.active_ids == benchmark_mesh.active_ids


def test_area_decreases_towards_the_domain_area(benchmark_mesh, spec):
    # the polygonal hole is inscribed in the disk
    octagon = 2.0 * math.sqrt(2.0) * spec.cylinder_radius ** 2
    coarse = benchmark_mesh.area()
    assert coarse == pytest.approx(spec.channel_length * spec.channel_height - octagon, rel=1e-12)
    fine = MeshService.uniform_refine(benchmark_mesh)
    fine.check()
    assert fine.n_active_cells == 4 * 92
    assert spec.domain_area < fine.area() < coarse


def test_cylinder_vertices_stay_on_the_circle(benchmark_mesh, spec):
    mesh = MeshService.uniform_refine(MeshService.uniform_refine(benchmark_mesh))
    center = np.asarray(spec.cylinder_center)
    for cid, local in mesh.tagged_faces(BoundaryTag.CYLINDER):
        for v in mesh.cells[cid].edge(local):
            assert np.linalg.norm(mesh.vertices[v] - center) == pytest.approx(spec.cylinder_radius, abs=1e-12)


def test_refining_one_cell_leaves_hanging_nodes(benchmark_mesh):
    mesh = MeshService.refine(benchmark_mesh, [0])
    mesh.check()
    assert mesh.n_active_cells == 95
    assert mesh.hanging_edges()
    assert benchmark_mesh.n_active_cells == 92


def test_refinement_closure_keeps_one_irregularity(benchmark_mesh):
    mesh = MeshService.refine(benchmark_mesh, [0])
    children = mesh.cells[0].children
    assert any(MeshService.refinement_closure(mesh, [c]) != {c} for c in children)
    for child in children:
        finer = MeshService.refine(mesh, [child])
        finer.check()
        assert finer.n_active_cells >= mesh.n_active_cells + 3


def test_refining_inactive_cell_raises(benchmark_mesh):
    mesh = MeshService.refine(benchmark_mesh, [0])
    with pytest.raises(MeshError):
        MeshService.refine(mesh, [0])


def test_locate_pressure_points(benchmark_mesh):
    pos, xi = MeshService.locate(benchmark_mesh, np.array([X1, X2]))
    coords = benchmark_mesh.cell_coordinates([benchmark_mesh.active_ids[k] for k in pos])
    for k, point in enumerate((X1, X2)):
        s, t = xi[k]
        shapes = np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
        assert shapes @ coords[k] == pytest.approx(point, abs=1e-12)


@pytest.mark.parametrize("point", [(0.2, 0.2), (-1.0, 0.0), (1.0, 0.5)])
def test_locate_outside_raises(benchmark_mesh, point):
    with pytest.raises(PointOutsideMeshError) as exc:
        MeshService.locate(benchmark_mesh, np.array([point]))
    assert exc.value.point == pytest.approx(point)


def test_rectangle_mesh(rectangle_mesh, spec):
    assert rectangle_mesh.n_active_cells == 8
    assert rectangle_mesh.area() == pytest.approx(spec.channel_length * spec.channel_height)
    assert not rectangle_mesh.has_cylinder()
    with pytest.raises(MeshError):
        MeshService.build_rectangle_mesh(spec, 0, 2)


def test_symmetric_domain_spec_validation():
    DomainSpec(cylinder_center=(0.2, 0.205))
    with pytest.raises(ValueError):
        DomainSpec(cylinder_center=(0.2, 0.39))


def test_first_refinement_moves_only_cylinder_midpoints(benchmark_mesh, spec):
    fine = MeshService.uniform_refine(benchmark_mesh)
    center = np.asarray(spec.cylinder_center)
    sagitta = spec.cylinder_radius * (1.0 - math.cos(math.pi / 8.0))
    for tag in BoundaryTag:
        faces = benchmark_mesh.tagged_faces(tag)
        assert faces
        for cid, local in faces:
            a, b = benchmark_mesh.cells[cid].edge(local)
            chord = 0.5 * (fine.vertices[a] + fine.vertices[b])
            m = fine.vertices[fine.midpoints[(a, b)]]
            if tag == BoundaryTag.CYLINDER:
                assert np.linalg.norm(m - center) == pytest.approx(spec.cylinder_radius, abs=1e-12)
                assert np.linalg.norm(m - chord) == pytest.approx(sagitta, rel=1e-9)
            else:
                assert m == pytest.approx(chord, abs=1e-15)

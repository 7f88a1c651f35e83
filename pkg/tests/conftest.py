"""
Shared fixtures: benchmark and rectangle meshes, solved primal/adjoint pairs, record factories
"""
import math
from types import SimpleNamespace

import numpy as np
import pytest

from app.models.base import DomainSpec, EnrichmentKind, GoalKind
from app.schemas.records import EstimatorBreakdown, GoalValues, LoopRecord
from app.schemas.run import AdaptiveConfig
from app.services.adaptivity_service import AdaptivityService
from app.services.estimator_service import EstimatorService
from app.services.forms_service import FormContext
from app.services.goal_service import GoalService
from app.services.mesh_service import MeshService
from app.services.space_service import SpaceService


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow benchmark tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def spec():
    return DomainSpec()


@pytest.fixture(scope="session")
def benchmark_mesh(spec):
    return MeshService.build_benchmark_mesh(spec)


@pytest.fixture
def rectangle_mesh(spec):
    return MeshService.build_rectangle_mesh(spec, 4, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def solve_pair(mesh, enrichment: EnrichmentKind, goal: GoalKind, stokes: bool) -> SimpleNamespace:
    """Base and enriched primal and adjoint solutions on one mesh"""
    config = AdaptiveConfig(enrichment=enrichment, goal=goal, stokes_mode=stokes, domain=mesh.spec)
    base = SpaceService.build_system(mesh, 2)
    ctx = FormContext(base, convection=not stokes)
    u_h, _ = AdaptivityService.solve_primal(ctx, config)
    plus = AdaptivityService.enriched_system(mesh, enrichment)
    ctx_plus = FormContext(plus, convection=not stokes)
    u_plus, _ = AdaptivityService.solve_primal(ctx_plus, config, SpaceService.embed(u_h, plus))
    combined = GoalService.fix_combined_weights(u_h, u_plus)
    defn = AdaptivityService.goal_definition(config, combined)
    z_h = EstimatorService.solve_adjoint(ctx, u_h, defn).z
    z_plus = EstimatorService.solve_adjoint(ctx_plus, u_plus, defn).z
    return SimpleNamespace(
        config=config, ctx=ctx, ctx_plus=ctx_plus, goal=defn,
        u_h=u_h, z_h=z_h, u_plus=u_plus, z_plus=z_plus,
        u_t=SpaceService.embed(u_h, plus), z_t=SpaceService.embed(z_h, plus, homogeneous=True),
    )


@pytest.fixture(scope="session")
def stokes_dp_p(benchmark_mesh):
    return solve_pair(benchmark_mesh, EnrichmentKind.P, GoalKind.PRESSURE_DIFF, stokes=True)


@pytest.fixture(scope="session")
def ns_combined_p(benchmark_mesh):
    return solve_pair(benchmark_mesh, EnrichmentKind.P, GoalKind.COMBINED, stokes=False)


@pytest.fixture(scope="session")
def ns_combined_h(benchmark_mesh):
    return solve_pair(benchmark_mesh, EnrichmentKind.H, GoalKind.COMBINED, stokes=False)


@pytest.fixture
def make_record():
    """Factory for synthetic loop records"""
    def factory(step: int = 0, dofs: int = 1000, i_eff: float = 0.9, saturation=None, indicators=None):
        base = GoalValues(dp=-0.11 - 1e-3 * step, drag=5.5 + 0.01 * step, lift=0.01, combined=0.02)
        enriched = GoalValues(dp=-0.117, drag=5.57, lift=0.0106)
        estimator = EstimatorBreakdown(
            enrichment=EnrichmentKind.P,
            eta_plus=-0.0123 / (step + 1),
            part_primal=-0.006 / (step + 1),
            part_adjoint=-0.0063 / (step + 1),
            iter_part=1e-14,
            eta_R=1e-6 / (step + 1),
            eta_R_quadrature=1e-6 / (step + 1),
            eta_E=3e-15,
            I_eff=i_eff,
            indicators=indicators if indicators is not None else {0: 1.0},
        )
        return LoopRecord(
            step=step,
            n_cells=92 * (step + 1),
            dofs_primal=dofs,
            dofs_enriched=4 * dofs,
            base=base,
            enriched=enriched,
            estimator=estimator,
            err_ref=-0.0125 / (step + 1),
            err_ref_enriched=-1e-4 / (step + 1),
            saturation=saturation if saturation is not None else {"dp": True, "drag": True, "lift": None},
        )
    return factory


def same_float(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b

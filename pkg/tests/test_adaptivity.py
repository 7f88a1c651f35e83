import logging
import math

import pytest

from app.models.base import EnrichmentKind, GoalKind
from app.schemas.records import FunctionalDef, ReferenceValues
from app.schemas.run import AdaptiveConfig
from app.services.adaptivity_service import AdaptivityService, StepState
from app.services.estimator_service import EstimatorService
from app.services.forms_service import FormContext, FormsService
from app.services.goal_service import GoalService
from app.services.mesh_service import MeshService
from app.services.report_service import format_value
from app.services.space_service import SpaceService
from app.utils.errors import AdaptiveRunError, NewtonError


def stokes_config(**overrides):
    values = dict(stokes_mode=True, goal=GoalKind.PRESSURE_DIFF, max_steps=2)
    values.update(overrides)
    return AdaptiveConfig(**values)


def test_marking_equal_indicators_takes_lowest_ids():
    indicators = {cid: 1.0 for cid in range(10)}
    assert AdaptivityService.mark_cells(indicators, 0.5) == {0, 1, 2, 3, 4}


def test_marking_smallest_prefix():
    assert AdaptivityService.mark_cells({0: 5.0, 1: 3.0, 2: 1.0, 3: 1.0}, 0.3) == {0}
    assert AdaptivityService.mark_cells({0: 5.0, 1: 3.0, 2: 1.0, 3: 1.0}, 0.6) == {0, 1}
    assert AdaptivityService.mark_cells({0: 9.0, 1: 0.5, 2: 0.5}, 0.5) == {0}


def test_marking_uses_magnitudes():
    assert AdaptivityService.mark_cells({0: 1.0, 1: -5.0, 2: 2.0}, 0.5) == {1}


@pytest.mark.parametrize("theta, expected", [(0.0, set()), (1.0, {3, 7, 9})])
def test_marking_limits(theta, expected):
    assert AdaptivityService.mark_cells({3: 1.0, 7: 2.0, 9: 0.0}, theta) == expected


def test_marking_zero_mass_and_non_finite():
    assert AdaptivityService.mark_cells({0: 0.0, 1: 0.0}, 0.5) == set()
    with pytest.raises(ValueError):
        AdaptivityService.mark_cells({0: 1.0, 1: math.nan}, 0.5)


def test_enriched_systems(benchmark_mesh):
    p = AdaptivityService.enriched_system(benchmark_mesh, EnrichmentKind.P)
    h = AdaptivityService.enriched_system(benchmark_mesh, EnrichmentKind.H)
    assert p.mesh is benchmark_mesh and p.vel_degree == 4
    assert h.n_cells == 4 * 92 and h.vel_degree == 2


def test_reference_errors_for_single_and_combined_goals(make_record):
    record = make_record()
    reference = ReferenceValues(dp=-0.1175, drag=5.58, lift=0.0106, dofs=10, config_hash="x")
    config = AdaptiveConfig(goal=GoalKind.DRAG)
    err, err_plus, relative, saturation = AdaptivityService.reference_errors(
        config, None, record.base, record.enriched, reference
    )
    assert err == pytest.approx(5.58 - 5.5)
    assert err_plus == pytest.approx(5.58 - 5.57)
    assert relative["drag"] == pytest.approx(0.08 / 5.58)
    assert saturation == {"dp": True, "drag": True, "lift": True}

    combined = GoalService.combined_from_values(record.base.as_dict(), record.enriched.as_dict())
    err, err_plus, _, _ = AdaptivityService.reference_errors(
        AdaptiveConfig(goal=GoalKind.COMBINED), combined, record.base, record.enriched, reference
    )
    assert err_plus == pytest.approx(combined.combined_value(reference.as_dict()))
    assert err == pytest.approx(err_plus - combined.combined_value(record.base.as_dict()))


def test_reference_errors_without_reference(make_record):
    record = make_record()
    err, err_plus, relative, saturation = AdaptivityService.reference_errors(
        AdaptiveConfig(), None, record.base, record.enriched, None
    )
    assert math.isnan(err) and math.isnan(err_plus)
    assert relative == {}
    assert saturation == {"dp": None, "drag": None, "lift": None}


def test_stokes_run_is_exact_and_localised():
    records = AdaptivityService.run_adaptive(stokes_config())
    assert len(records) == 2
    assert records[1].dofs_primal > records[0].dofs_primal
    for record in records:
        est = record.estimator
        error = record.enriched.dp - record.base.dp
        assert error == pytest.approx(est.eta_plus + est.iter_part, rel=1e-10, abs=1e-13)
        assert est.eta_R == 0.0
        assert sum(est.indicators.values()) == pytest.approx(est.eta_plus, rel=1e-10)
        assert set(record.timings) >= {"solve_base", "solve_enriched", "adjoint", "estimate"}
    assert "refine" in records[0].timings


def test_runs_are_deterministic():
    rows = [AdaptivityService.run_adaptive(stokes_config(max_steps=1))[0].to_row() for _ in range(2)]
    first, second = (row.model_dump() for row in rows)
    assert {k: format_value(v) for k, v in first.items()} == {k: format_value(v) for k, v in second.items()}


def test_theta_zero_stops_after_one_step():
    records = AdaptivityService.run_adaptive(stokes_config(marking_fraction=0.0, max_steps=4))
    assert len(records) == 1


def test_max_dofs_stops_the_loop():
    records = AdaptivityService.run_adaptive(stokes_config(max_dofs=100, max_steps=3))
    assert len(records) == 1


def test_uniform_run_refines_every_cell():
    records = AdaptivityService.run_uniform(stokes_config(enrichment=EnrichmentKind.H))
    assert [r.n_cells for r in records] == [92, 368]


def test_on_step_sees_every_state():
    seen = []
    AdaptivityService.run_adaptive(stokes_config(), on_step=seen.append)
    assert [state.record.step for state in seen] == [0, 1]
    assert all(state.u.system is state.system for state in seen)


def test_solver_failure_keeps_completed_records(mocker, make_record, benchmark_mesh):
    record = make_record(indicators={0: 1.0})
    state = StepState(record, benchmark_mesh, None, None, None)
    mocker.patch.object(AdaptivityService, "run_step", side_effect=[state, NewtonError("diverged")])
    with pytest.raises(AdaptiveRunError) as exc:
        AdaptivityService.run_adaptive(AdaptiveConfig(max_steps=3))
    assert exc.value.records == [record]


def test_refinement_follows_marking(mocker, make_record, benchmark_mesh):
    spy = mocker.spy(MeshService, "refine")
    record = make_record(indicators={cid: float(cid == 5) for cid in benchmark_mesh.active_ids})
    mocker.patch.object(AdaptivityService, "run_step",
                        return_value=StepState(record, benchmark_mesh, None, None, None))
    AdaptivityService.run_adaptive(AdaptiveConfig(max_steps=2))
    assert spy.call_count == 1
    assert spy.call_args[0][1] == {5}


def test_step_with_reference_reports_effectivity():
    config = stokes_config()
    mesh = MeshService.build_benchmark_mesh(config.domain)
    first = AdaptivityService.run_step(0, mesh, SpaceService.build_system(mesh, 2), config, None).record
    shift = 0.5 * (first.enriched.dp - first.base.dp)
    reference = ReferenceValues(dp=first.enriched.dp + shift, drag=first.enriched.drag, lift=first.enriched.lift,
                                dofs=1, config_hash="x")
    record = AdaptivityService.run_step(0, mesh, SpaceService.build_system(mesh, 2), config, reference).record
    assert record.err_ref == pytest.approx(reference.dp - record.base.dp)
    assert record.estimator.I_eff == pytest.approx(record.estimator.eta_plus / abs(record.err_ref))
    assert record.saturation["dp"] is True


@pytest.fixture(scope="module")
def drag_config():
    return AdaptiveConfig(goal=GoalKind.DRAG, enrichment=EnrichmentKind.P, max_steps=1)


def base_balance(state):
    return EstimatorService.primal_residual(FormContext(state.system), state.u, state.z)


def test_step_balances_the_iteration_error_on_the_base_form(drag_config, benchmark_mesh, caplog):
    system = SpaceService.build_system(benchmark_mesh, 2)
    with caplog.at_level(logging.WARNING, logger="app.services.adaptivity_service"):
        state = AdaptivityService.run_step(0, benchmark_mesh, system, drag_config, None)
    eta = state.record.estimator.eta_plus
    assert abs(base_balance(state)) <= drag_config.balance_fraction * abs(eta)
    assert "iteration error" not in caplog.text
    assert math.isfinite(state.record.estimator.iter_part)


def test_previous_estimate_drives_a_weighted_newton_stop(drag_config, benchmark_mesh, mocker):
    system = SpaceService.build_system(benchmark_mesh, 2)
    converged = AdaptivityService.run_step(0, benchmark_mesh, system, drag_config, None)

    spy = mocker.spy(FormsService, "newton_solve")
    previous = (FunctionalDef(kind=GoalKind.DRAG), 1e8)
    state = AdaptivityService.run_step(1, benchmark_mesh, system, drag_config, None, previous)
    weighted_calls = [call for call in spy.call_args_list if len(call.args) > 3 and call.args[3] is not None]
    assert weighted_calls[0].args[4] == 1e8
    # the loose first stop is resumed with the step's own adjoint and estimate
    assert len(weighted_calls) >= 2
    assert weighted_calls[1].args[4] != 1e8
    assert state.record.newton_iterations["base"] >= 1
    assert abs(base_balance(state)) <= drag_config.balance_fraction * abs(state.record.estimator.eta_plus)
    assert state.record.base.drag == pytest.approx(converged.record.base.drag, rel=1e-3)
    assert state.goal == FunctionalDef(kind=GoalKind.DRAG)

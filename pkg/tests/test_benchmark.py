"""
End-to-end checks on the 2D-1 benchmark. Everything except the linear
exactness check is marked slow.
"""
from pathlib import Path

import numpy as np
import pytest

from app.config import settings
from app.models.base import EnrichmentKind, GoalKind
from app.schemas.run import AdaptiveConfig
from app.services.adaptivity_service import AdaptivityService
from app.services.reference_service import ReferenceService
from app.services.report_service import EPSILON

MAX_DOFS = 100000


def test_linear_exactness_over_three_steps():
    config = AdaptiveConfig(stokes_mode=True, goal=GoalKind.PRESSURE_DIFF, max_steps=3)
    records = AdaptivityService.run_adaptive(config)
    assert len(records) == 3
    for record in records:
        error = record.enriched.dp - record.base.dp
        est = record.estimator
        assert abs(error - (est.eta_plus + est.iter_part)) <= 1e-10 * abs(error)


@pytest.fixture(scope="module")
def ns_config():
    return AdaptiveConfig(goal=GoalKind.COMBINED, max_dofs=MAX_DOFS, max_steps=20)


@pytest.fixture(scope="module")
def reference(ns_config):
    return ReferenceService.get_reference(ns_config, Path(settings.REFERENCE_CACHE), settings.REFERENCE_REFINEMENTS)


@pytest.fixture(scope="module")
def p_run(ns_config, reference):
    return AdaptivityService.run_adaptive(ns_config, reference)


@pytest.fixture(scope="module")
def h_run(ns_config, reference):
    return AdaptivityService.run_adaptive(ns_config.model_copy(update={"enrichment": EnrichmentKind.H}), reference)


@pytest.fixture(scope="module")
def uniform_run(ns_config, reference):
    return AdaptivityService.run_uniform(ns_config, reference)


@pytest.mark.slow
def test_gap_is_at_round_off_level(p_run):
    for record in p_run:
        assert record.estimator.eta_E <= 100 * EPSILON * record.dofs_enriched


@pytest.mark.slow
def test_h_gap_shows_the_geometry_error(p_run, h_run):
    p_dofs = np.log([r.dofs_primal for r in p_run])
    wins = 0
    for record in h_run:
        match = p_run[int(np.argmin(np.abs(p_dofs - np.log(record.dofs_primal))))]
        wins += record.estimator.eta_E >= 10 * match.estimator.eta_E
    assert wins >= 0.8 * len(h_run)


@pytest.mark.slow
def test_effectivity_windows(p_run, h_run):
    for record in h_run[2:]:
        assert 0.8 <= abs(record.estimator.I_eff) <= 1.25
    for record in p_run:
        assert 0.1 <= abs(record.estimator.I_eff) <= 10.0
    for record in p_run + h_run:
        assert np.sign(record.estimator.eta_plus) == np.sign(record.err_ref)


@pytest.mark.slow
def test_h_enrichment_always_saturates(h_run):
    for record in h_run:
        assert all(flag is True for flag in record.saturation.values())


@pytest.mark.slow
def test_finest_values_match_the_reference(p_run, h_run, reference):
    tolerances = {"drag": 0.005, "dp": 0.05, "lift": 0.25}
    for run in (p_run, h_run):
        finest = run[-1].base.as_dict()
        for name, tol in tolerances.items():
            assert finest[name] == pytest.approx(reference.as_dict()[name], rel=tol)


@pytest.mark.slow
def test_remainder_is_negligible(p_run, h_run):
    for record in p_run[1:] + h_run[1:]:
        assert abs(record.estimator.eta_R) <= 0.05 * abs(record.estimator.eta_plus)


@pytest.mark.slow
def test_adaptive_beats_uniform(p_run, uniform_run, reference):
    uniform_dofs = np.log([r.dofs_primal for r in uniform_run])
    comparable = [r for r in p_run if uniform_dofs[0] <= np.log(r.dofs_primal) <= uniform_dofs[-1]]
    assert len(comparable) >= 2
    for name in ("dp", "drag", "lift"):
        uniform_err = np.log([abs(r.base.as_dict()[name] - reference.as_dict()[name]) for r in uniform_run])
        for record in comparable[-2:]:
            expected = np.exp(np.interp(np.log(record.dofs_primal), uniform_dofs, uniform_err))
            assert abs(record.base.as_dict()[name] - reference.as_dict()[name]) <= expected

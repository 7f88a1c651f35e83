import pytest
from pydantic import ValidationError

from app.config import Settings
from app.models.base import DomainSpec, EnrichmentKind, GoalKind
from app.schemas.run import AdaptiveConfig, NewtonControls, RunConfig


def test_default_settings():
    settings = Settings(_env_file=None)
    assert settings.MARKING_FRACTION == 0.3
    assert settings.MAX_LINEAR_DOFS == 400000
    assert settings.NEWTON_ABS_TOL == 1e-11


def test_settings_from_file(tmp_path):
    path = tmp_path / "solver.env"
    path.write_text("VISCOSITY=0.002\nSTOKES_MODE=true\nUNKNOWN_KEY=1\n")
    settings = Settings(_env_file=str(path))
    assert settings.VISCOSITY == 0.002
    assert settings.STOKES_MODE is True


def test_adaptive_config_defaults():
    config = AdaptiveConfig()
    assert config.enrichment == EnrichmentKind.P
    assert config.goal == GoalKind.COMBINED
    assert config.domain == DomainSpec()
    assert config.balance_fraction == config.newton.balance_fraction


@pytest.mark.parametrize("update", [
    {"marking_fraction": 1.5},
    {"marking_fraction": -0.1},
    {"max_steps": 0},
    {"max_dofs": 500000},
    {"domain": {"cylinder_center": (0.2, 0.39)}},
])
def test_adaptive_config_validation(update):
    with pytest.raises(ValidationError):
        AdaptiveConfig(**update)


def test_newton_controls():
    assert NewtonControls(max_iter=1).max_iter == 1
    with pytest.raises(ValidationError):
        NewtonControls(max_iter=0)
    with pytest.raises(ValidationError):
        NewtonControls(abs_tol=0.0)


def test_run_config_splits_off_the_loop_settings(tmp_path):
    config = RunConfig(output_dir=tmp_path, stokes_mode=True, emit_vtk=True)
    adaptive = config.adaptive()
    assert type(adaptive) is AdaptiveConfig
    assert adaptive.stokes_mode is True
    assert adaptive.domain == config.domain

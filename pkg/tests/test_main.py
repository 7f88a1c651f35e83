import json

import pytest

from app import main as cli
from app.models.base import EnrichmentKind
from app.schemas.records import ReferenceValues
from app.schemas.run import RunConfig
from app.services.adaptivity_service import AdaptivityService
from app.services.reference_service import ReferenceService
from app.services.report_service import ReportService
from app.utils.errors import AdaptiveRunError, LinearSolveError

REFERENCE = ReferenceValues(dp=-0.1175, drag=5.58, lift=0.0106, dofs=10 ** 6, config_hash="x")


@pytest.fixture(autouse=True)
def quiet(mocker):
    mocker.patch.object(cli, "configure_logging")


@pytest.fixture
def reference(mocker):
    return mocker.patch.object(ReferenceService, "get_reference", return_value=REFERENCE)


def args(tmp_path, *extra):
    return ["--out", str(tmp_path / "out"), "--reference-cache", str(tmp_path / "ref.json"), *extra]


def test_successful_run_writes_records_and_config(tmp_path, mocker, reference, make_record):
    mocker.patch.object(AdaptivityService, "run_adaptive", return_value=[make_record(0), make_record(1)])
    assert cli.main(args(tmp_path, "--enrichment", "h", "--theta", "0.5")) == cli.EXIT_OK
    out = tmp_path / "out"
    assert len((out / "records.csv").read_text().splitlines()) == 3
    config = RunConfig(**json.loads((out / "config.json").read_text()))
    assert config.enrichment == EnrichmentKind.H
    assert config.marking_fraction == 0.5
    assert not (out / "figures").exists()


def test_invalid_configuration_exits_with_2(tmp_path):
    assert cli.main(args(tmp_path, "--theta", "2")) == cli.EXIT_CONFIG
    assert cli.main(args(tmp_path, "--config", str(tmp_path / "missing.env"))) == cli.EXIT_CONFIG


def test_solver_failure_exits_with_3_and_keeps_partial_records(tmp_path, mocker, reference, make_record):
    mocker.patch.object(AdaptivityService, "run_adaptive",
                        side_effect=AdaptiveRunError("step 1 failed", records=[make_record(0)]))
    assert cli.main(args(tmp_path)) == cli.EXIT_SOLVER
    assert len((tmp_path / "out" / "records.csv").read_text().splitlines()) == 2


def test_reference_failure_exits_with_3(tmp_path, mocker):
    mocker.patch.object(ReferenceService, "get_reference", side_effect=LinearSolveError("singular"))
    assert cli.main(args(tmp_path)) == cli.EXIT_SOLVER


def test_io_failure_exits_with_4(tmp_path, mocker, reference, make_record):
    mocker.patch.object(AdaptivityService, "run_adaptive", return_value=[make_record(0)])
    mocker.patch.object(ReportService, "write_csv", side_effect=OSError("disk full"))
    assert cli.main(args(tmp_path)) == cli.EXIT_IO


def test_uniform_run_refreshes_the_reference_cache(tmp_path, mocker, reference, make_record):
    records = [make_record(0)]
    run_uniform = mocker.patch.object(AdaptivityService, "run_uniform", return_value=records)
    update = mocker.patch.object(ReferenceService, "update_from_records", return_value=True)
    assert cli.main(args(tmp_path, "--uniform")) == cli.EXIT_OK
    run_uniform.assert_called_once()
    assert update.call_args[0][3] == records


def test_emit_figures_runs_the_paired_series(tmp_path, mocker, reference, make_record):
    run_adaptive = mocker.patch.object(
        AdaptivityService, "run_adaptive", return_value=[make_record(0, 100), make_record(1, 300)]
    )
    mocker.patch.object(AdaptivityService, "run_uniform", return_value=[make_record(0, 100), make_record(1, 400)])
    mocker.patch.object(ReferenceService, "update_from_records", return_value=False)
    assert cli.main(args(tmp_path, "--emit-figures")) == cli.EXIT_OK
    enrichments = [call.args[0].enrichment for call in run_adaptive.call_args_list]
    assert enrichments == [EnrichmentKind.P, EnrichmentKind.H]
    out = tmp_path / "out"
    assert (out / "paired" / "h" / "records.csv").exists()
    assert (out / "paired" / "uniform" / "records.csv").exists()
    for name in ("effectivity.dat", "saturation.dat", "remainder_gap.dat", "drag.dat"):
        assert (out / "figures" / name).exists()


def test_settings_file_and_flag_precedence(tmp_path):
    env = tmp_path / "run.env"
    env.write_text("MAX_STEPS=3\nENRICHMENT=h\nMARKING_FRACTION=0.4\n")
    parser = cli.build_parser()
    config = cli.resolve_config(parser.parse_args(["--config", str(env)]), cli.load_settings(env))
    assert config.max_steps == 3
    assert config.enrichment == EnrichmentKind.H
    assert config.marking_fraction == 0.4
    parsed = parser.parse_args(["--config", str(env), "--max-steps", "5", "--stokes"])
    config = cli.resolve_config(parsed, cli.load_settings(env))
    assert config.max_steps == 5
    assert config.stokes_mode is True


def test_plain_run_does_not_compute_a_missing_reference(tmp_path, mocker, make_record):
    compute = mocker.patch.object(ReferenceService, "compute_reference", return_value=REFERENCE)
    run_adaptive = mocker.patch.object(AdaptivityService, "run_adaptive", return_value=[make_record(0)])
    assert cli.main(args(tmp_path)) == cli.EXIT_OK
    compute.assert_not_called()
    assert run_adaptive.call_args[0][1] is None


def test_reference_flag_computes_and_caches_the_reference(tmp_path, mocker, make_record):
    compute = mocker.patch.object(ReferenceService, "compute_reference", return_value=REFERENCE)
    run_adaptive = mocker.patch.object(AdaptivityService, "run_adaptive", return_value=[make_record(0)])
    assert cli.main(args(tmp_path, "--reference")) == cli.EXIT_OK
    compute.assert_called_once()
    assert run_adaptive.call_args[0][1] == REFERENCE
    assert (tmp_path / "ref.json").exists()

    # a later plain run picks the cached values up
    assert cli.main(args(tmp_path)) == cli.EXIT_OK
    assert compute.call_count == 1
    assert run_adaptive.call_args[0][1].drag == REFERENCE.drag

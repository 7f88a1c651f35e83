"""Rebuild figure data files from the records.csv files of an earlier --emit-figures run"""
import argparse
import json
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from app.schemas.run import RunConfig
from app.services.reference_service import ReferenceService
from app.services.report_service import ReportService
from app.utils.errors import ReportError

logger = logging.getLogger(__name__)


def collect_runs(out_dir: Path, config: RunConfig):
    """records.csv of the main run and of every paired run"""
    main_kind = "uniform" if config.uniform else config.enrichment.value
    runs = {main_kind: ReportService.read_csv(out_dir / "records.csv")}
    for kind in ("p", "h", "uniform"):
        path = out_dir / "paired" / kind / "records.csv"
        if kind not in runs and path.exists():
            runs[kind] = ReportService.read_csv(path)
    return runs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir", type=Path, help="Output directory holding config.json and records.csv")
    parser.add_argument("--figures", type=Path, help="Target directory (default: <run_dir>/figures)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    with (args.run_dir / "config.json").open("r", encoding="utf-8") as f:
        config = RunConfig(**json.load(f))
    reference = ReferenceService.get_reference(
        config.adaptive(), config.reference_cache, config.reference_refinements, compute=False
    )
    try:
        written = ReportService.emit_figures(
            collect_runs(args.run_dir, config), args.figures or args.run_dir / "figures", reference
        )
    except ReportError as e:
        logger.error(str(e))
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Report service: records.csv and whitespace-separated figure data"""
import csv
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from app.schemas.records import CSV_COLUMNS, CsvRow, LoopRecord, ReferenceValues
from app.utils.errors import ReportError

logger = logging.getLogger(__name__)

EPSILON = 2.0 ** -52

FIGURE_RUNS = ("p", "h", "uniform")

Block = Tuple[str, List[Tuple[float, ...]]]


def format_value(value) -> str:
    """17 significant digits, true/false for flags, empty for unknown flags"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return "{:.17g}".format(float(value))


def parse_value(text: str, column: str):
    if column.startswith("sat_"):
        if text == "":
            return None
        if text not in ("true", "false"):
            raise ReportError(f"invalid flag {text!r} in column {column}")
        return text == "true"
    if column in ("step", "dofs_primal", "dofs_enriched"):
        return int(text)
    return float(text)


class ReportService:
    """Service for tabular output of adaptive runs"""

    # ========================================================================
    # CSV
    # ========================================================================

    @staticmethod
    def write_csv(path: Path, records: Iterable[Union[LoopRecord, CsvRow]]) -> Path:
        """
        Write records.csv with the fixed column order and a header row.

        Args:
            path: Target file
            records: Loop records or already flattened rows

        Returns:
            The written path
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            count = 0
            for record in records:
                row = record.to_row() if isinstance(record, LoopRecord) else record
                values = row.model_dump()
                writer.writerow([format_value(values[column]) for column in CSV_COLUMNS])
                count += 1
        logger.info(f"Wrote {count} rows to {path}")
        return path

    @staticmethod
    def read_csv(path: Path) -> List[CsvRow]:
        """Parse a records.csv written by write_csv"""
        path = Path(path)
        with path.open("r", newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_COLUMNS:
                raise ReportError(f"{path} does not start with the records header")
            rows = []
            for line in reader:
                if not line:
                    continue
                rows.append(CsvRow(**{c: parse_value(t, c) for c, t in zip(CSV_COLUMNS, line)}))
        return rows

    # ========================================================================
    # FIGURE DATA
    # ========================================================================

    @staticmethod
    def _increasing(points: Iterable[Tuple[float, ...]]) -> List[Tuple[float, ...]]:
        """Drop rows with a non-finite value or a non-increasing first column"""
        out: List[Tuple[float, ...]] = []
        for point in points:
            if not all(math.isfinite(v) for v in point):
                continue
            if out and point[0] <= out[-1][0]:
                continue
            out.append(point)
        return out

    @staticmethod
    def write_blocks(path: Path, title: str, columns: Sequence[str], blocks: Sequence[Block]) -> Path:
        """
        Write one data block per series, separated by two blank lines (gnuplot 'index').
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            f.write(f"# {title}\n")
            f.write("# columns: " + " ".join(columns) + "\n")
            for k, (name, points) in enumerate(blocks):
                if k:
                    f.write("\n\n")
                f.write(f"# series: {name}\n")
                for point in ReportService._increasing(points):
                    f.write(" ".join(format_value(v) for v in point) + "\n")
        return path

    @staticmethod
    def emit_figures(runs: Dict[str, List[CsvRow]], out_dir: Path,
                     reference: Optional[ReferenceValues] = None) -> List[Path]:
        """
        Figure data of paired p, h and uniform runs.

        Files: effectivity.dat, saturation.dat, remainder_gap.dat and, given
        reference values, pressure_diff.dat, drag.dat and lift.dat.

        Args:
            runs: {"p": rows, "h": rows, "uniform": rows}
            out_dir: Directory for the data files
            reference: Reference functionals for the relative errors

        Raises:
            ReportError: a run is missing or empty
        """
        for name in FIGURE_RUNS:
            if not runs.get(name):
                raise ReportError(f"figure data needs a non-empty '{name}' run")
        out_dir = Path(out_dir)
        written = []

        dofs = sorted({row.dofs_primal for name in ("p", "h") for row in runs[name]})
        written.append(ReportService.write_blocks(
            out_dir / "effectivity.dat", "effectivity indices", ("dofs_primal", "I_eff"),
            [(name, [(row.dofs_primal, row.I_eff) for row in runs[name]]) for name in ("p", "h")]
            + [("one", [(d, 1.0) for d in dofs])],
        ))
        written.append(ReportService.write_blocks(
            out_dir / "saturation.dat", "reference errors of base and enriched solutions",
            ("dofs_primal", "abs_err_ref", "abs_err_ref_enriched"),
            [(name, [(row.dofs_primal, abs(row.err_ref), abs(row.err_ref_enriched)) for row in runs[name]])
             for name in ("p", "h")],
        ))
        written.append(ReportService.write_blocks(
            out_dir / "remainder_gap.dat", "remainder and gap against round-off",
            ("dofs_primal", "abs_eta_R", "eta_E", "eps_dofs_primal", "eps_dofs_enriched"),
            [(name, [(row.dofs_primal, abs(row.eta_R), row.eta_E, EPSILON * row.dofs_primal,
                      EPSILON * row.dofs_enriched) for row in runs[name]])
             for name in ("p", "h")],
        ))

        if reference is None:
            logger.warning("No reference values: relative error figures skipped")
            return written
        ref = reference.as_dict()
        for goal, filename in (("dp", "pressure_diff.dat"), ("drag", "drag.dat"), ("lift", "lift.dat")):
            scale = abs(ref[goal])
            if scale == 0.0:
                logger.warning(f"Reference {goal} is zero: {filename} skipped")
                continue
            written.append(ReportService.write_blocks(
                out_dir / filename, f"relative error of {goal}", ("dofs_primal", "relative_error"),
                [(name, [(row.dofs_primal, abs(getattr(row, goal) - ref[goal]) / scale) for row in runs[name]])
                 for name in FIGURE_RUNS],
            ))
        logger.info(f"Wrote {len(written)} figure files to {out_dir}")
        return written


# Global instance
report_service = ReportService()


def write_csv(path: Path, records) -> Path:
    return ReportService.write_csv(path, records)


def read_csv(path: Path) -> List[CsvRow]:
    return ReportService.read_csv(path)


def emit_figures(runs: Dict[str, List[CsvRow]], out_dir: Path,
                 reference: Optional[ReferenceValues] = None) -> List[Path]:
    return ReportService.emit_figures(runs, out_dir, reference)

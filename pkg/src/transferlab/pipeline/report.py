"""Results tables in two layouts: one row per experiment, or one row per compute cell."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from transferlab.errors import InvalidArgument
from transferlab.metrics import MetricReport

STYLES = {
    "results": ("experiment", "ppl", "Acc.", "BaSH"),
    "compute": ("Samples", "Steps", "ppl", "Acc.", "BaSH"),
}
# lower is better for ppl, higher for the other two
_BETTER = {"ppl": min, "Acc.": max, "BaSH": max}
_DIGITS = {"ppl": 2, "Acc.": 1, "BaSH": 1}
BEST_MARK = "*"


def format_count(n: int) -> str:
    """10000 -> 10k, 4400000 -> 4.4M; small counts stay as they are."""
    for unit, size in (("M", 1_000_000), ("k", 1_000)):
        if n >= size:
            value = n / size
            text = f"{value:.1f}".rstrip("0").rstrip(".")
            return f"{text}{unit}"
    return str(n)


@dataclass(frozen=True)
class ResultsTable:
    style: str
    rows: tuple[tuple, ...]
    failures: tuple[tuple[str, str], ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return STYLES[self.style]

    def best_rows(self) -> dict[str, set[int]]:
        """Indices of the rows holding the best value in each metric column (ties all count)."""
        best: dict[str, set[int]] = {}
        for col, pick in _BETTER.items():
            j = self.columns.index(col)
            values = [row[j] for row in self.rows]
            if values:
                target = pick(values)
                best[col] = {i for i, v in enumerate(values) if v == target}
        return best

    def to_tsv(self) -> str:
        """Header plus one line per row, numbers at full precision and unmarked."""
        lines = ["\t".join(self.columns)]
        for row in self.rows:
            lines.append("\t".join(str(v) if not isinstance(v, float) else repr(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned plain text with the best value per metric column suffixed by ``*``."""
        best = self.best_rows()
        cells = [list(self.columns)]
        for i, row in enumerate(self.rows):
            out = []
            for col, value in zip(self.columns, row):
                if col in _DIGITS:
                    text = f"{value:.{_DIGITS[col]}f}"
                    text += BEST_MARK if i in best.get(col, ()) else " "
                elif col == "Samples":
                    text = format_count(value)
                else:
                    text = str(value)
                out.append(text)
            cells.append(out)
        widths = [max(len(r[j]) for r in cells) for j in range(len(self.columns))]
        lines = []
        for r, row in enumerate(cells):
            parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(parts).rstrip())
            if r == 0:
                lines.append("  ".join("-" * w for w in widths))
        if self.rows:
            lines.append(f"({BEST_MARK} best in column: lowest ppl, highest Acc. and BaSH)")
        for label, message in self.failures:
            lines.append(f"FAILED {label}: {message}")
        return "\n".join(lines) + "\n"


def _row(report: MetricReport, style: str) -> tuple:
    metrics = (float(report.perplexity), float(report.accuracy_pct), float(report.bash_score))
    if style == "results":
        return (report.experiment, *metrics)
    if report.upstream_samples is None or report.pretrain_steps is None:
        raise InvalidArgument(f"report {report.experiment!r} has no upstream sample/step counts; "
                              "compute tables need transfer-mode runs")
    return (int(report.upstream_samples), int(report.pretrain_steps), *metrics)


def emit_table(reports: Sequence[MetricReport], style: str = "results",
               failures: Sequence[tuple[str, str]] = ()) -> ResultsTable:
    if style not in STYLES:
        raise InvalidArgument(f"style must be one of {sorted(STYLES)}, got {style!r}")
    if not reports and not failures:
        raise InvalidArgument("need at least one report")
    return ResultsTable(style, tuple(_row(r, style) for r in reports), tuple(failures))

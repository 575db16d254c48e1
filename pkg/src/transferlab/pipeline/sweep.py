"""Grids over upstream sample count and pre-training steps."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from transferlab.errors import InvalidArgument, TransferLabError
from transferlab.metrics import MetricReport
from transferlab.pipeline.experiment import run_experiment
from transferlab.pipeline.manifest import Manifest
from transferlab.pipeline.report import ResultsTable, emit_table, format_count

log = logging.getLogger(__name__)

Runner = Callable[[Manifest, Path], MetricReport]


def parse_grid(text: str) -> list[tuple[int, int]]:
    """``"10000x2500,10k x 7500"`` -> [(10000, 2500), (10000, 7500)]."""
    cells = []
    for chunk in text.split(","):
        m = re.fullmatch(r"\s*(\d+)([kKmM]?)\s*[xX]\s*(\d+)\s*", chunk)
        if not m:
            raise InvalidArgument(f"grid cell {chunk.strip()!r} is not of the form SAMPLESxSTEPS")
        n = int(m.group(1)) * {"": 1, "k": 1_000, "m": 1_000_000}[m.group(2).lower()]
        cells.append((n, int(m.group(3))))
    return cells


def cell_manifest(base: Manifest, samples: int, steps: int) -> Manifest:
    """The manifest for one grid cell.

    Early stopping is switched off upstream so that the step count is the
    quantity being varied.
    """
    return base.with_changes(
        name=f"{base.name}-{format_count(samples)}-{steps}",
        mode="transfer",
        upstream_downsample=samples,
        pretrain_max_steps=steps,
        pretrain_patience=0,
    )


def _run_cell(args) -> tuple[MetricReport | None, str | None]:
    runner, manifest, run_dir = args
    try:
        return runner(manifest, run_dir), None
    except TransferLabError as exc:
        log.error("cell %s failed: %s", manifest.name, exc)
        return None, f"{type(exc).__name__}: {exc}"


def run_sweep(base: Manifest, grid: Sequence[tuple[int, int]], out_dir: str | Path, workers: int = 1,
              runner: Runner = run_experiment) -> ResultsTable:
    """One experiment per (samples, steps) cell; failed cells are listed, the rest still tabulated.

    Each cell gets its own run directory holding a replayable manifest.  With
    ``workers > 1`` cells run in separate processes; rows keep grid order.
    """
    if not grid:
        raise InvalidArgument("the grid is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for samples, steps in grid:
        m = cell_manifest(base, samples, steps)
        jobs.append((runner, m, out_dir / m.name))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(job) for job in jobs]

    reports = [r for r, _ in outcomes if r is not None]
    failures = [(job[1].name, err) for job, (_, err) in zip(jobs, outcomes) if err is not None]
    table = emit_table(reports, "compute", failures)
    (out_dir / "table.tsv").write_text(table.to_tsv(), encoding="utf-8")
    (out_dir / "table.txt").write_text(table.to_text(), encoding="utf-8")
    return table

"""RunReport: collects search runs under an output directory and emits plot-ready tables."""

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import pandas as pd

from ..io.atomic import atomic_write
from ..io.metrics import read_frame, write_frame
from ..search.finalize import ArchitectureDescriptor, load_descriptor, render_architecture
from ..search.latency import (
    REFERENCE_KEY,
    LatencyTable,
    ProfilingContext,
    architecture_latency,
    measure_end_to_end,
)

logger = logging.getLogger(__name__)

DESCRIPTOR_FILE = "architecture.json"
SEARCH_METRICS_FILE = "search_metrics.csv"
RETRAIN_METRICS_FILE = "retrain_metrics.csv"

# 8-head attention over the default feed-forward layer on a data-center GPU;
# kept as a reference point next to the locally profiled ratio.
REFERENCE_GPU_MHA_FFL_RATIO = 6.2


@dataclass
class SearchRun:
    name: str
    path: Path
    descriptor: ArchitectureDescriptor


def find_search_runs(root: str | Path) -> list[SearchRun]:
    """Every directory under ``root`` holding both a descriptor and search metrics."""
    root = Path(root)
    runs = []
    for descriptor_path in sorted(root.rglob(DESCRIPTOR_FILE)):
        run_dir = descriptor_path.parent
        if not (run_dir / SEARCH_METRICS_FILE).exists():
            continue
        name = run_dir.relative_to(root).as_posix() or "."
        runs.append(SearchRun(name, run_dir, load_descriptor(descriptor_path)))
    return runs


def correlation(frame: pd.DataFrame, x: str, y: str, method: str = "pearson") -> float | None:
    """Correlation of two columns, or None with fewer than two distinct points."""
    pair = frame[[x, y]].dropna()
    if len(pair) < 2 or pair[x].nunique() < 2 or pair[y].nunique() < 2:
        return None
    return float(pair[x].corr(pair[y], method=method))


class RunReport:
    """
    Report over all search runs found below ``root``.

    Output files (written to ``report_dir``):
        target_vs_estimated.csv     one row per search run
        estimated_vs_measured.csv   table estimate against end-to-end timing,
                                    baseline included
        loss_curves.csv             search metrics of every run, ``run`` column added
        retrain_curves.csv          retraining metrics, when a retrained model exists
        block_latencies.csv         profiled table normalized to 8-head attention
        architectures.txt           slot listing of every architecture
        summary.json                counts, correlations and latency ratios
    """

    def __init__(
        self,
        root: str | Path,
        table: LatencyTable,
        baseline: ArchitectureDescriptor,
        report_dir: str | Path | None = None,
    ):
        self.root = Path(root)
        self.table = table
        self.baseline = baseline
        self.report_dir = Path(report_dir) if report_dir is not None else self.root / "report"
        self.runs = find_search_runs(self.root)
        self.created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.summary: dict[str, Any] = {}

    def require_runs(self) -> None:
        if not self.runs:
            raise FileNotFoundError(
                f"No completed search runs under {self.root} "
                f"(looked for {DESCRIPTOR_FILE} next to {SEARCH_METRICS_FILE})"
            )

    def target_vs_estimated(self) -> pd.DataFrame:
        rows = []
        for run in self.runs:
            d = run.descriptor
            rows.append(
                {
                    "run": run.name,
                    "target_ratio": d.target_ratio,
                    "estimated_us": d.estimated_latency_us,
                    "baseline_us": d.baseline_latency_us,
                    "estimated_ratio": d.latency_ratio(),
                    "target_met": d.target_met,
                }
            )
        return pd.DataFrame(
            rows,
            columns=["run", "target_ratio", "estimated_us", "baseline_us", "estimated_ratio",
                     "target_met"],
        )

    def estimated_vs_measured(
        self,
        context: ProfilingContext,
        vocab_size: int,
        repetitions: int = 30,
        warmup: int = 3,
        seed: int = 0,
    ) -> pd.DataFrame:
        """Time every architecture end to end and pair it with its table estimate."""
        entries = [("baseline", self.baseline)] + [(r.name, r.descriptor) for r in self.runs]
        rows = []
        for name, descriptor in entries:
            measured = measure_end_to_end(
                descriptor.slots, context, vocab_size, repetitions, warmup, seed
            )
            rows.append(
                {
                    "run": name,
                    "estimated_us": architecture_latency(descriptor.slots, self.table),
                    "measured_us": measured.latency_us,
                    "iqr_us": measured.iqr_us,
                }
            )
            logger.debug(f"{name}: measured {measured.latency_us:.1f} us")
        return pd.DataFrame(rows, columns=["run", "estimated_us", "measured_us", "iqr_us"])

    def loss_curves(self, metrics_file: str = SEARCH_METRICS_FILE) -> pd.DataFrame:
        frames = []
        for path in sorted(self.root.rglob(metrics_file)):
            if self.report_dir in path.parents:
                continue
            frame = read_frame(path)
            frame.insert(0, "run", path.parent.relative_to(self.root).as_posix() or ".")
            frames.append(frame)
        if not frames:
            return pd.DataFrame()
        return pd.concat(frames, ignore_index=True)

    def block_latencies(self) -> pd.DataFrame:
        if REFERENCE_KEY in self.table:
            return self.table.normalized(REFERENCE_KEY)
        return self.table.to_frame()

    def mha_ffl_ratio(self) -> float | None:
        """Profiled 8-head attention latency over the first feed-forward entry."""
        ffl = next((k for k in self.table.keys() if k.startswith("ffl:")), None)
        if ffl is None or REFERENCE_KEY not in self.table:
            return None
        return self.table.latency(REFERENCE_KEY) / self.table.latency(ffl)

    def architectures_text(self) -> str:
        blocks = [f"## baseline\n{render_architecture(self.baseline)}"]
        for run in self.runs:
            blocks.append(f"## {run.name}\n{render_architecture(run.descriptor)}")
        return "\n".join(blocks)

    def generate(
        self,
        context: ProfilingContext | None = None,
        vocab_size: int | None = None,
        repetitions: int = 30,
        seed: int = 0,
        measure: bool = True,
    ) -> dict[str, Any]:
        """Write every report file and return the summary.

        Raises:
            FileNotFoundError: If no completed search run exists under ``root``.
        """
        self.require_runs()
        out = self.report_dir
        out.mkdir(parents=True, exist_ok=True)

        targets = self.target_vs_estimated()
        write_frame(targets, out / "target_vs_estimated.csv")
        write_frame(self.block_latencies(), out / "block_latencies.csv")
        atomic_write(out / "architectures.txt", self.architectures_text())

        curves = self.loss_curves(SEARCH_METRICS_FILE)
        if not curves.empty:
            write_frame(curves, out / "loss_curves.csv")
        retrain = self.loss_curves(RETRAIN_METRICS_FILE)
        if not retrain.empty:
            write_frame(retrain, out / "retrain_curves.csv")

        summary: dict[str, Any] = {
            "created": self.created,
            "runs": len(self.runs),
            "targets_met": int(targets["target_met"].fillna(False).astype(bool).sum()),
            "target_spearman": correlation(
                targets, "target_ratio", "estimated_us", method="spearman"
            ),
            "mha8_over_ffl": self.mha_ffl_ratio(),
            "reference_gpu_mha8_over_ffl": REFERENCE_GPU_MHA_FFL_RATIO,
        }
        if measure:
            if context is None or vocab_size is None:
                raise ValueError("measuring end-to-end latency needs a context and vocab_size")
            measured = self.estimated_vs_measured(context, vocab_size, repetitions, seed=seed)
            write_frame(measured, out / "estimated_vs_measured.csv")
            summary["measured_pearson"] = correlation(measured, "estimated_us", "measured_us")
            summary["measured_spearman"] = correlation(
                measured, "estimated_us", "measured_us", method="spearman"
            )
        atomic_write(out / "summary.json", json.dumps(summary, indent=2))
        self.summary = summary
        logger.info(f"Report for {len(self.runs)} run(s) written to {out}")
        return summary

    def get_summary(self) -> dict[str, Any]:
        return dict(self.summary)

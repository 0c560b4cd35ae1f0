"""Merge sweep CSVs into a summary, a plot data file and a plain-text plot script."""

from __future__ import annotations

import json
import os

from ..errors import ConfigurationError
from .sweep import SCHEMA_VERSION, read_csv, rows_to_csv

ESTIMATE_COLUMNS = ("epsilon_hat", "gap", "opt_error", "weak_pd_gen", "max_consensus_error", "max_excess", "lambda")

PLOT_SCRIPT = """# gnuplot script; run with: gnuplot plot.gp
set datafile separator ','
set key outside
set xlabel 'swept parameter'
set ylabel 'estimate'
set terminal pngcairo size 900,600
set output 'plot.png'
plot 'plot_data.csv' using 3:4:5 skip 1 with yerrorbars title 'estimate', \\
     'plot_data.csv' using 3:6 skip 1 with linespoints title 'bound'
"""


def _sweep_axes(comments: list[str]) -> list[str]:
    for line in comments:
        if line.startswith("# config: "):
            return list(json.loads(line[len("# config: "):]).get("sweep", {}))
    return []


def merge_reports(paths: list[str], out_dir: str) -> dict:
    if not paths:
        raise ConfigurationError("report needs at least one input CSV")
    merged, files, plot_rows = [], [], []
    for path in paths:
        try:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
        cols, rows, comments = read_csv(text)
        axes = _sweep_axes(comments)
        source = os.path.basename(path)
        files.append({"path": source, "rows": len(rows)})
        est = next((c for c in ESTIMATE_COLUMNS if c in cols), None)
        for row in rows:
            merged.append({"source": source, **row})
            if est is not None:
                x = row.get(axes[0], row["index"]) if axes else row["index"]
                plot_rows.append({
                    "source": source,
                    "index": row["index"],
                    "x": x,
                    "y": row.get(est, ""),
                    "yerr": row.get("stderr", ""),
                    "bound": row.get("bound_value", ""),
                })
    flags = [r.get("dominated") for r in merged if r.get("dominated") not in (None, "")]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "files": files,
        "total_rows": len(merged),
        "dominated_true": sum(f == "true" for f in flags),
        "dominated_false": sum(f == "false" for f in flags),
    }
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "merged.csv"), rows_to_csv(merged))
    _write(os.path.join(out_dir, "plot_data.csv"), rows_to_csv(plot_rows))
    _write(os.path.join(out_dir, "plot.gp"), PLOT_SCRIPT)
    _write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)

"""Accuracy-vs-epsilon curves: CSV always, SVG when matplotlib cooperates."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

from .errors import ArgumentError

log = logging.getLogger(__name__)


def read_results_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "backend": rec["backend"],
                "method": rec["method"],
                "epsilon": float(rec["epsilon"]),
                "mean_acc": float(rec["mean_acc"]),
                "std_acc": float(rec["std_acc"]),
                "n_runs": int(rec["n_runs"]),
            }
        )
    return rows


def curve_svg(rows: list[dict], title: str = "") -> str:
    """SVG text with one error-bar series per (backend, method).

    Clean rows are drawn at epsilon 0 of every attacked series only when the
    series has no epsilon-0 point of its own. Output is byte-stable: fixed
    hash salt, no date metadata.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict = {}
    for r in rows:
        if r["method"] == "clean":
            continue
        series.setdefault((r["backend"], r["method"]), []).append(r)
    if not series:
        # clean-only result: one point per backend
        for r in rows:
            series.setdefault((r["backend"], r["method"]), []).append(r)
    methods = sorted({m for _, m in series})
    with matplotlib.rc_context({"svg.hashsalt": "qunnbench", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(methods), figsize=(5.5 * len(methods), 4), squeeze=False)
        for ax, method in zip(axes[0], methods):
            for (backend, m), pts in series.items():
                if m != method:
                    continue
                pts = sorted(pts, key=lambda p: p["epsilon"])
                ax.errorbar(
                    [p["epsilon"] for p in pts],
                    [p["mean_acc"] for p in pts],
                    yerr=[p["std_acc"] for p in pts],
                    marker="o",
                    markersize=3,
                    capsize=2,
                    label=backend,
                )
            ax.set_xlabel("epsilon")
            ax.set_ylabel("accuracy")
            ax.set_ylim(-0.02, 1.02)
            ax.set_title(f"{title} {method}".strip())
            ax.legend(fontsize=7)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def render_curves(result, out_dir, stem: str = "curves", title: str = "") -> tuple[Path, Path | None]:
    """Write ``<stem>.csv`` and, best-effort, ``<stem>.svg``.

    ``result`` is a SweepResult or results-CSV text. Returns the paths
    written; the SVG path is None when plotting failed.
    """
    text = result if isinstance(result, str) else result.results_csv()
    rows = read_results_csv(text)
    if not rows:
        raise ArgumentError("nothing to render")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(text)
    svg_path = out / f"{stem}.svg"
    try:
        svg_path.write_text(curve_svg(rows, title))
    except Exception as exc:  # plotting is optional; the CSV is the artifact
        log.warning("SVG rendering failed: %s", exc)
        return csv_path, None
    return csv_path, svg_path

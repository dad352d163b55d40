"""Report rendering: delimited outputs plus figure files.

The summary CSV is the canonical artifact; figures and the standalone plot
script are conveniences derived from the same data.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from ..timebase import MS_PER_SECOND
from ..trace import Trace
from .cases import EventTiming

EVENT_NAMES = ("crossing", "trigger", "response")


def emit_outputs(results: dict[str, tuple[Trace, EventTiming]], out_dir: str | Path) -> list[Path]:
    """Write per-run trace CSVs, the event-timing summary, figures, and a
    plot script; returns the created paths."""
    out = Path(out_dir)
    traces_dir = out / "traces"
    figures_dir = out / "figures"
    traces_dir.mkdir(parents=True, exist_ok=True)
    figures_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []

    for label, (trace, _events) in results.items():
        path = traces_dir / f"{_slug(label)}.csv"
        path.write_text(trace.to_csv())
        created.append(path)

    summary = out / "summary.csv"
    summary.write_text(render_summary(results))
    created.append(summary)

    created.append(_figure_event_timing(results, figures_dir / "event_timing.png"))
    created.append(_figure_shaft_power(results, figures_dir / "shaft_power.png"))

    script = out / "plot_traces.py"
    script.write_text(_PLOT_SCRIPT)
    created.append(script)
    return created


def render_summary(results: dict[str, tuple[Trace, EventTiming]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("case", "backend") + tuple(f"{n}_ms" for n in EVENT_NAMES))
    for label, (_trace, events) in results.items():
        case, _, backend = label.partition("/")
        w.writerow([case, backend or "monolithic"]
                   + ["" if getattr(events, n) is None else getattr(events, n)
                      for n in EVENT_NAMES])
    return buf.getvalue()


def _slug(label: str) -> str:
    return label.replace("/", "_")


def _figure_event_timing(results, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.5 + 0.45 * len(results))))
    labels = list(results)
    for i, label in enumerate(labels):
        events = results[label][1]
        for n in EVENT_NAMES:
            t = getattr(events, n)
            if t is not None:
                ax.plot(t / MS_PER_SECOND, i, "x", color="tab:blue", markersize=8)
    ax.set_yticks(range(len(labels)), labels)
    ax.invert_yaxis()
    ax.set_xlabel("event time [s]")
    ax.set_title("Event timing per run")
    ax.grid(axis="x", alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _figure_shaft_power(results, path: Path) -> Path:
    fig, (ax_full, ax_zoom) = plt.subplots(1, 2, figsize=(10, 4))
    for label, (trace, events) in results.items():
        ts, ys = [], []
        for r in trace.rows:
            if r.p_shaft_ratio is not None:
                ts.append(r.time / MS_PER_SECOND)
                ys.append(r.p_shaft_ratio)
        if not ts:
            continue
        for ax in (ax_full, ax_zoom):
            ax.plot(ts, ys, label=label, linewidth=1)
    ax_full.set_xlabel("time [s]")
    ax_full.set_ylabel("shaft power / wind power")
    ax_full.set_title("Shaft power ratio")
    ax_zoom.set_xlim(2.3, 2.8)
    ax_zoom.set_xlabel("time [s]")
    ax_zoom.set_title("Zoom around the event")
    ax_full.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


_PLOT_SCRIPT = '''"""Re-render the figures from the CSVs in this directory.

Usage: python plot_traces.py [out_dir]
"""
import csv
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

base = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent

fig, ax = plt.subplots()
for trace_csv in sorted((base / "traces").glob("*.csv")):
    ts, ys = [], []
    with trace_csv.open() as fh:
        for row in csv.DictReader(fh):
            if row["p_shaft_ratio"]:
                ts.append(int(row["time"]) / 1000.0)
                ys.append(float(row["p_shaft_ratio"]))
    if ts:
        ax.plot(ts, ys, label=trace_csv.stem, linewidth=1)
ax.set_xlabel("time [s]")
ax.set_ylabel("shaft power / wind power")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(base / "figures" / "shaft_power_replot.png", dpi=150)
print("wrote", base / "figures" / "shaft_power_replot.png")
'''

"""Report files: per-pair error CSV, PCK curve CSV and a static SVG plot."""

from __future__ import annotations

import io as _io
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write_bytes, atomic_write_text  # noqa: E402

MEANS_FILE = "errors.csv"
PCK_FILE = "pck.csv"
PLOT_FILE = "pck.svg"

# fixed salt and no date keep the SVG byte-identical across runs
_RC = {
    "svg.hashsalt": "fmatch",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.linewidth": 0.8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
    "legend.fontsize": 8,
}


def _fmt(x):
    return f"{float(x):.10g}"


def render_pck_svg(summaries, title="", golden=True):
    """Return the SVG bytes of the PCK curves of ``summaries``."""
    width = 4.5
    height = width * ((5**0.5 - 1) / 2 if golden else 0.75)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(width, height))
        for s in summaries:
            ts = [t for t, _ in s.pck]
            fs = [f for _, f in s.pck]
            ax.plot(ts, fs, label=f"{s.pair_id} ({s.mean_x100:.2f})")
        ax.set_xlabel("geodesic error (normalized)")
        ax.set_ylabel("fraction of vertices")
        ax.set_ylim(0.0, 1.02)
        ax.set_xlim(left=0.0)
        if title:
            ax.set_title(title)
        if len(summaries) <= 12:
            ax.legend(loc="lower right")
        fig.tight_layout()
        buf = _io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def write_report(summaries, out_dir, metadata=None, title=""):
    """Write ``errors.csv``, ``pck.csv`` and ``pck.svg`` into ``out_dir``.

    ``metadata`` (a flat dict) is emitted as ``# key=value`` comment lines
    at the top of ``errors.csv``. Returns the three paths.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no error summaries to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc

    lines = [f"# {k}={metadata[k]}" for k in sorted(metadata or {})]
    lines.append("pair_id,n_vertices,mean_x100,median_x100,max_x100")
    for s in summaries:
        e = s.per_vertex_errors
        med = 100 * float(np.median(e)) if len(e) else 0.0
        mx = 100 * float(e.max()) if len(e) else 0.0
        lines.append(f"{s.pair_id},{len(e)},{_fmt(s.mean_x100)},{_fmt(med)},{_fmt(mx)}")
    means_path = out_dir / MEANS_FILE
    atomic_write_text(means_path, "\n".join(lines) + "\n")

    rows = ["pair_id,threshold,fraction"]
    for s in summaries:
        rows.extend(f"{s.pair_id},{_fmt(t)},{_fmt(f)}" for t, f in s.pck)
    pck_path = out_dir / PCK_FILE
    atomic_write_text(pck_path, "\n".join(rows) + "\n")

    plot_path = out_dir / PLOT_FILE
    atomic_write_bytes(plot_path, render_pck_svg(summaries, title=title))
    return means_path, pck_path, plot_path

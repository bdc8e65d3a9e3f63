"""Distance-over-time and speed-over-time figures from a run log.

Output is SVG with a fixed hash salt and no date stamp, so regenerating a
figure from an unchanged log gives identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .scenario import read_log  # noqa: E402

_STYLE = {"svg.hashsalt": "tla", "svg.fonttype": "path", "path.simplify": False}


def _column(rows, key):
    return [r[key] if isinstance(r[key], float) else math.nan for r in rows]


def _finite(values):
    return [v if math.isfinite(v) else math.nan for v in values]


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def emit_plots(log_path, out_dir=None) -> tuple[Path, Path]:
    """Write ``<stem>_distance.svg`` and ``<stem>_speed.svg`` next to the log (or into ``out_dir``)."""
    log_path = Path(log_path)
    rows = read_log(log_path)
    if not rows:
        raise ValueError(f"{log_path}: log has no rows")
    out_dir = Path(out_dir) if out_dir is not None else log_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    name = log_path.stem
    t = _column(rows, "time")

    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(t, _column(rows, "position"), label="ego position", color="tab:blue")
        # the bound is +inf when nothing constrains the ego; leave those gaps empty
        ax.step(t, _finite(_column(rows, "position_bound")), where="post", label="position bound",
                color="tab:red", linestyle="--")
        ax.plot(t, _column(rows, "reference_position"), label="reference", color="tab:green", linestyle=":")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("distance [m]")
        ax.set_title(f"{name}: distance over time")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper left")
        distance = out_dir / f"{name}_distance.svg"
        _save(fig, distance)

        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(t, _column(rows, "velocity"), label="ego speed", color="tab:blue")
        ax.step(t, _column(rows, "speed_limit"), where="post", label="legal limit", color="tab:gray",
                linestyle="--")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("speed [m/s]")
        ax.set_ylim(bottom=0.0)
        ax.set_title(f"{name}: speed over time")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower left")
        speed = out_dir / f"{name}_speed.svg"
        _save(fig, speed)
    return distance, speed

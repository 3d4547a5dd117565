"""Figures rendered from the experiment CSVs."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_error_vs(summary: list[dict], axis: str, fixed: str, out: Path) -> Path | None:
    """Median absolute error against ``axis`` ("epsilon" or "m"), one line per method and ``fixed`` value."""
    lines = defaultdict(list)
    for row in summary:
        lines[(row["method"], row[fixed])].append((float(row[axis]), float(row["median_abs_error"])))
    if not lines:
        return None
    by_method = defaultdict(dict)
    for (method, other), pts in lines.items():
        by_method[method][other] = sorted(pts)
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, series in sorted(by_method.items()):
        distinct = {tuple(pts) for pts in series.values()}
        if len(distinct) == 1:
            # the method ignores this parameter, draw it once
            series = {None: next(iter(series.values()))}
        for other, pts in sorted(series.items(), key=lambda kv: str(kv[0])):
            label = method if other is None else f"{method} ({fixed}={other})"
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel(axis)
    ax.set_ylabel("median absolute error")
    ax.set_yscale("symlog", linthresh=1)
    ax.legend(fontsize=7)
    return _save(fig, out)


def plot_fpr(rows: list[dict], out: Path) -> Path | None:
    series = defaultdict(list)
    for row in rows:
        series[row["method"]].append((int(row["n_inserted"]), float(row["fpr"])))
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("items inserted")
    ax.set_ylabel("false-positive rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    return _save(fig, out)


def plot_timing_cdf(rows: list[dict], op: str, out: Path) -> Path | None:
    series = defaultdict(list)
    for row in rows:
        if row["op"] == op:
            series[row["method"]].append((float(row["latency_ns"]), float(row["quantile"])))
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, pts in sorted(series.items()):
        pts.sort()
        ax.step([p[0] / 1e3 for p in pts], [p[1] for p in pts], where="post", label=method)
    ax.set_xscale("log")
    ax.set_xlabel(f"{op} latency (us)")
    ax.set_ylabel("CDF")
    ax.legend()
    return _save(fig, out)


def render_all(out_dir) -> list[Path]:
    """Write PNG figures next to the CSVs in ``out_dir``; returns the files written."""
    out = Path(out_dir)
    summary = _read(out / "summary.csv")
    timing = _read(out / "timing.csv")
    written = [
        plot_error_vs(summary, "epsilon", "m", out / "error_vs_epsilon.png"),
        plot_error_vs(summary, "m", "epsilon", out / "error_vs_m.png"),
        plot_fpr(_read(out / "fpr.csv"), out / "fpr_vs_n.png"),
        plot_timing_cdf(timing, "insert", out / "insert_cdf.png"),
        plot_timing_cdf(timing, "query", out / "query_cdf.png"),
    ]
    return [p for p in written if p is not None]

"""Metrics persistence: fixed-column CSV, versioned JSON summaries and SVG line charts."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


def fmt(value) -> str:
    """Stable text form for CSV cells (byte-identical across runs)."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(value)


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return value


def rows_to_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_json(path, payload: dict) -> Path:
    return write_text(path, json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def record_csv(record) -> str:
    return rows_to_csv(record.columns, record.rows)


def trials_csv(results, metric_names: Sequence[str]) -> str:
    group_keys = sorted({k for r in results for k in r.group})
    rows = [[r.trial] + [r.group.get(k, "") for k in group_keys] + [r.metrics.get(m, "") for m in metric_names]
            for r in results]
    return rows_to_csv(["trial", *group_keys, *metric_names], rows)


def series_csv(results) -> str:
    names = sorted({n for r in results for n in r.series})
    if not names:
        return ""
    rows = []
    for r in results:
        length = max((len(v) for v in r.series.values()), default=0)
        for t in range(length):
            rows.append([r.trial, t] + [r.series[n][t] if n in r.series and t < len(r.series[n]) else ""
                                        for n in names])
    return rows_to_csv(["trial", "t", *names], rows)


def mean_sem(values) -> dict:
    x = np.asarray([v for v in values if v is not None], dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return {"mean": math.nan, "sem": math.nan, "n": 0}
    sem = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return {"mean": float(x.mean()), "sem": sem, "n": int(len(x))}


def _group_label(group: dict) -> str:
    return ",".join(f"{k}={group[k]}" for k in sorted(group))


def summarize_trials(name: str, metric_names: Sequence[str], results, settings: dict) -> dict:
    """Aggregate JSON summary: mean and standard error of every metric per group."""
    groups: dict[str, list] = {}
    for r in results:
        groups.setdefault(_group_label(r.group), []).append(r)
    out = {"schema_version": SCHEMA_VERSION, "experiment": name, "settings": settings,
           "trials": len(results), "groups": {}}
    for label, rs in groups.items():
        entry = {"group": rs[0].group, "trials": len(rs),
                 "metrics": {m: mean_sem(r.metrics.get(m) for r in rs) for m in metric_names}}
        series_names = sorted({n for r in rs for n in r.series})
        if series_names:
            entry["mean_series"] = {}
            for n in series_names:
                arr = np.array([r.series[n] for r in rs], dtype=float)
                with np.errstate(all="ignore"):
                    masked = np.where(np.isfinite(arr), arr, np.nan)
                    entry["mean_series"][n] = np.nanmean(masked, axis=0).tolist() if arr.size else []
        out["groups"][label] = entry
    return out


def svg_lines(series: dict, title: str = "", width: int = 640, height: int = 360) -> str:
    """Minimal standalone SVG line chart; ``series`` maps label -> sequence of y values."""
    pad = 40
    clean = {k: [float(v) for v in vals] for k, vals in series.items()}
    finite = [v for vals in clean.values() for v in vals if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    n = max((len(v) for v in clean.values()), default=1)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="14">{title}</text>',
             f'<text x="4" y="{pad}" font-size="10">{hi:.4g}</text>',
             f'<text x="4" y="{height - pad}" font-size="10">{lo:.4g}</text>']
    for k, (label, vals) in enumerate(sorted(clean.items())):
        pts = []
        for i, v in enumerate(vals):
            if not math.isfinite(v):
                continue
            x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
            y = height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{width - pad - 120}" y="{pad + 14 * k}" font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_experiment(out_dir, name: str, results, summary: dict, metric_names: Sequence[str]) -> dict:
    """Write ``<name>_trials.csv``, optional ``<name>_series.csv`` and ``<name>_summary.json``."""
    out = Path(out_dir)
    paths = {"trials": write_text(out / f"{name}_trials.csv", trials_csv(results, metric_names))}
    series = series_csv(results)
    if series:
        paths["series"] = write_text(out / f"{name}_series.csv", series)
        for label, entry in summary["groups"].items():
            for sname, values in entry.get("mean_series", {}).items():
                safe = label.replace("=", "-").replace(",", "_")
                paths[f"svg:{label}:{sname}"] = write_text(out / "plots" / f"{name}_{safe}_{sname}.svg",
                                                           svg_lines({sname: values}, f"{name} {label}"))
    paths["summary"] = write_json(out / f"{name}_summary.json", summary)
    return {k: str(v) for k, v in paths.items()}

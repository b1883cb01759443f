"""Test-set scoring: overall, per SNR level, per modulation; CSV and SVG output.

SNR is measured after undoing the per-channel normalisation, so a corrupted
record scores exactly the SNR it was synthesised at.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .dataset import SignalSet
from .ptl import raw_snr
from .waveforms import Modulation

CSV_SCHEMA = "corenet-eval/1"


class EvalError(ValueError):
    """Restored and reference datasets do not describe the same records."""


@dataclass
class EvalReport:
    overall_mean_snr_db: float
    corrupted_baseline_db: float
    per_snr_level: dict[float, float]
    per_snr_level_baseline: dict[float, float]
    per_modulation: dict[str, float]
    counts: dict[tuple[str, float], int]
    pass_index: int | None = None
    record_snr: np.ndarray = field(default=None, repr=False)

    @property
    def improvement_db(self) -> float:
        return self.overall_mean_snr_db - self.corrupted_baseline_db

    def to_dict(self) -> dict:
        return {
            "schema": CSV_SCHEMA,
            "pass_index": self.pass_index,
            "overall_mean_snr_db": self.overall_mean_snr_db,
            "corrupted_baseline_db": self.corrupted_baseline_db,
            "improvement_db": self.improvement_db,
            "per_snr_level": {repr(k): v for k, v in self.per_snr_level.items()},
            "per_snr_level_baseline": {repr(k): v for k, v in self.per_snr_level_baseline.items()},
            "per_modulation_improvement": self.per_modulation,
            "records": int(sum(self.counts.values())),
        }


def _family(tag: int) -> str:
    return Modulation.from_tag(int(tag)).value


def evaluate(candidate: SignalSet, reference: SignalSet, pass_index: int | None = None) -> EvalReport:
    """Score ``candidate`` inputs against the clean signals of ``reference``.

    ``reference`` supplies the corrupted baseline; passing the reference as
    its own candidate scores the corrupted set.
    """
    if len(candidate) != len(reference):
        raise EvalError(f"record counts differ: {len(candidate)} vs {len(reference)}")
    if len(reference) == 0:
        raise EvalError("empty dataset")
    if not (np.array_equal(candidate.tags, reference.tags) and np.array_equal(candidate.clean, reference.clean)):
        raise EvalError("records are not aligned: tags or clean signals differ")
    snr = raw_snr(candidate)
    base = raw_snr(reference)
    levels = np.round(reference.target_snr.astype(np.float64), 6)
    families = np.array([_family(t) for t in reference.tags])

    per_level = {}
    per_level_base = {}
    for lv in np.unique(levels):
        sel = levels == lv
        per_level[float(lv)] = float(np.mean(snr[sel]))
        per_level_base[float(lv)] = float(np.mean(base[sel]))
    per_mod = {}
    for fam in [m.value for m in Modulation if m.value in set(families)]:
        sel = families == fam
        per_mod[fam] = float(np.mean(snr[sel] - base[sel]))
    counts: dict[tuple[str, float], int] = {}
    for fam, lv in zip(families, levels):
        counts[(str(fam), float(lv))] = counts.get((str(fam), float(lv)), 0) + 1
    return EvalReport(
        overall_mean_snr_db=float(np.mean(snr)),
        corrupted_baseline_db=float(np.mean(base)),
        per_snr_level=per_level,
        per_snr_level_baseline=per_level_base,
        per_modulation=per_mod,
        counts=counts,
        pass_index=pass_index,
        record_snr=snr,
    )


def write_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Write JSON summary, three CSV tables and an SVG figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out_dir / "summary.json",
        "per_snr_level": out_dir / "per_snr_level.csv",
        "per_modulation": out_dir / "per_modulation.csv",
        "cells": out_dir / "cells.csv",
        "figure": out_dir / "report.svg",
    }
    with open(paths["summary"], "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    _write_csv(
        paths["per_snr_level"],
        ("snr_level_db", "restored_snr_db", "corrupted_snr_db"),
        [(k, report.per_snr_level[k], report.per_snr_level_baseline[k]) for k in report.per_snr_level],
    )
    _write_csv(paths["per_modulation"], ("modulation", "improvement_db"), report.per_modulation.items())
    _write_csv(paths["cells"], ("modulation", "snr_level_db", "count"), [(m, lv, n) for (m, lv), n in report.counts.items()])
    paths["figure"].write_text(report_svg(report))
    return paths


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# {CSV_SCHEMA}"])
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_W, _H, _PAD = 360, 240, 40


def _scale(values, lo_px, hi_px):
    lo, hi = min(values), max(values)
    if hi == lo:
        hi, lo = hi + 1, lo - 1
    return lambda v: lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px), lo, hi


def _axes(x0: int, title: str, lo: float, hi: float) -> list[str]:
    return [
        f'<text x="{x0 + _W / 2}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>',
        f'<line x1="{x0 + _PAD}" y1="{_H - _PAD}" x2="{x0 + _W - 10}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{x0 + _PAD}" y1="{_PAD}" x2="{x0 + _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{x0 + _PAD - 4}" y="{_PAD + 4}" text-anchor="end" font-size="9">{hi:.1f}</text>',
        f'<text x="{x0 + _PAD - 4}" y="{_H - _PAD}" text-anchor="end" font-size="9">{lo:.1f}</text>',
    ]


def line_panel(x0: int, title: str, xs: list[float], series: dict[str, list[float]]) -> list[str]:
    """A line chart panel; ``series`` maps a legend label to y values."""
    allv = [v for ys in series.values() for v in ys]
    sy, lo, hi = _scale(allv, _H - _PAD, _PAD)
    sx, _, _ = _scale(xs, x0 + _PAD + 8, x0 + _W - 18)
    out = _axes(x0, title, lo, hi)
    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for i, (label, ys) in enumerate(series.items()):
        c = colours[i % len(colours)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        out.append(f'<text x="{x0 + _PAD + 6}" y="{_PAD + 12 * (i + 1)}" font-size="9" fill="{c}">{escape(label)}</text>')
    for x in xs:
        out.append(f'<text x="{sx(x):.2f}" y="{_H - _PAD + 12}" text-anchor="middle" font-size="8">{x:g}</text>')
    return out


def bar_panel(x0: int, title: str, labels: list[str], values: list[float]) -> list[str]:
    sy, lo, hi = _scale(values + [0.0], _H - _PAD, _PAD)
    out = _axes(x0, title, lo, hi)
    n = max(len(values), 1)
    width = (_W - _PAD - 20) / n
    zero = sy(0.0)
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = x0 + _PAD + 4 + i * width
        top, bottom = sorted((sy(v), zero))
        out.append(
            f'<rect x="{x:.2f}" y="{top:.2f}" width="{width * 0.8:.2f}" height="{bottom - top:.2f}" fill="#1f77b4"/>'
        )
        out.append(
            f'<text x="{x + width * 0.4:.2f}" y="{_H - _PAD + 12}" text-anchor="middle" font-size="7">{escape(lab)}</text>'
        )
    return out


def svg_document(panels: list[list[str]]) -> str:
    width = _W * len(panels)
    body = "\n".join(line for panel in panels for line in panel)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_H}" '
        f'viewBox="0 0 {width} {_H}" font-family="sans-serif">\n'
        f'<rect width="{width}" height="{_H}" fill="white"/>\n{body}\n</svg>\n'
    )


def report_svg(report: EvalReport) -> str:
    levels = sorted(report.per_snr_level)
    left = line_panel(
        0,
        "Mean SNR per input SNR level (dB)",
        levels,
        {
            "restored": [report.per_snr_level[k] for k in levels],
            "corrupted": [report.per_snr_level_baseline[k] for k in levels],
        },
    )
    mods = list(report.per_modulation)
    right = bar_panel(_W, "SNR improvement per modulation (dB)", mods, [report.per_modulation[m] for m in mods])
    return svg_document([left, right])


def passes_svg(rows: list[dict]) -> str:
    """Mean SNR per pass from a PTL summary table."""
    xs = [float(r["pass"]) for r in rows]
    series = {}
    for split in ("train", "val", "test"):
        ys = [float(r[f"{split}_snr"]) for r in rows]
        if all(np.isfinite(ys)):
            series[split] = ys
    return svg_document([line_panel(0, "Mean restored SNR per pass (dB)", xs, series)])

"""Hand-written SVG plots: PR curves, confusion matrix, loss history."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..detector.train import EpochRecord, read_history
from ..evalkit.io import read_confusion_csv, read_pr_csv

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H, M = 420, 340, 48


def _svg(width: int, height: int, body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def _axes(x0: float, x1: float, y0: float, y1: float, xlabel: str, ylabel: str, title: str,
          ticks: int = 5) -> tuple[list[str], callable]:
    pw, ph = W - 2 * M, H - 2 * M

    def sx(v):
        return M + (v - x0) / ((x1 - x0) or 1.0) * pw

    def sy(v):
        return H - M - (v - y0) / ((y1 - y0) or 1.0) * ph

    out = [f'<rect x="{M}" y="{M}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
           f'<text x="{W / 2}" y="{M - 16}" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{H / 2}" text-anchor="middle" transform="rotate(-90 14 {H / 2})">'
           f'{escape(ylabel)}</text>']
    for i in range(ticks + 1):
        xv = x0 + (x1 - x0) * i / ticks
        yv = y0 + (y1 - y0) * i / ticks
        out.append(f'<text x="{sx(xv):.1f}" y="{H - M + 14}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{M - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<line x1="{M}" x2="{W - M}" y1="{sy(yv):.1f}" y2="{sy(yv):.1f}" stroke="#eee"/>')
    return out, (sx, sy)


def _polyline(xs: Sequence[float], ys: Sequence[float], sx, sy, color: str, width: float = 1.5,
              dash: str | None = None) -> str:
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def _legend(names: Sequence[str], colors: Sequence[str]) -> list[str]:
    out = []
    for i, (n, c) in enumerate(zip(names, colors)):
        y = M + 12 + 14 * i
        out.append(f'<line x1="{W - M - 110}" x2="{W - M - 94}" y1="{y}" y2="{y}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - M - 90}" y="{y + 4}">{escape(n)}</text>')
    return out


def pr_curve_svg(series: dict[str, dict[str, list[float]]]) -> str:
    body, (sx, sy) = _axes(0, 1, 0, 1, "recall", "precision", "Precision-Recall (IoU 0.5)")
    names, colors = [], []
    for i, (name, s) in enumerate(series.items()):
        color = "#000" if name == "micro" else PALETTE[i % len(PALETTE)]
        r, e = s["recall"], s["envelope"]
        if not r:
            continue
        # step envelope, starting from the first precision at recall 0
        xs, ys = [0.0], [e[0]]
        for k in range(len(r)):
            xs.append(r[k])
            ys.append(e[k])
            if k + 1 < len(r):
                xs.append(r[k])
                ys.append(e[k + 1])
        body.append(_polyline(xs, ys, sx, sy, color, 2.0 if name == "micro" else 1.3,
                              "5,3" if name == "micro" else None))
        names.append(name)
        colors.append(color)
    body += _legend(names, colors)
    return _svg(W, H, body)


def confusion_svg(names: Sequence[str], cm: np.ndarray) -> str:
    k = len(names)
    cell = max(24, min(60, 300 // max(k, 1)))
    left, top = 90, 60
    width, height = left + cell * k + 20, top + cell * k + 40
    body = [f'<text x="{left + cell * k / 2}" y="20" text-anchor="middle" font-size="13">'
            f'Normalized confusion matrix</text>',
            f'<text x="{left + cell * k / 2}" y="{height - 8}" text-anchor="middle">predicted</text>',
            f'<text x="12" y="{top + cell * k / 2}" text-anchor="middle" '
            f'transform="rotate(-90 12 {top + cell * k / 2})">actual</text>']
    for i in range(k):
        body.append(f'<text x="{left - 4}" y="{top + cell * i + cell / 2 + 4}" text-anchor="end">'
                    f'{escape(names[i])}</text>')
        body.append(f'<text x="{left + cell * i + cell / 2}" y="{top - 6}" text-anchor="middle">'
                    f'{escape(names[i][:6])}</text>')
        for j in range(k):
            v = float(cm[i, j])
            shade = int(round(255 * (1 - min(max(v, 0.0), 1.0))))
            fg = "white" if v > 0.55 else "black"
            x, y = left + cell * j, top + cell * i
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="rgb({shade},{shade},255)" stroke="#ccc"/>')
            body.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                        f'fill="{fg}">{v:.2f}</text>')
    return _svg(width, height, body)


def history_svg(history: Sequence[EpochRecord]) -> str:
    ep = [h.epoch for h in history]
    series = {"box_loss": [h.box_loss for h in history], "cls_loss": [h.cls_loss for h in history],
              "map50": [h.map50 for h in history], "map5095": [h.map5095 for h in history]}
    finite = [v for s in series.values() for v in s if np.isfinite(v)]
    top = max(finite) if finite else 1.0
    body, (sx, sy) = _axes(min(ep, default=0), max(ep, default=1), 0, top, "epoch", "value",
                           "Training history")
    names = list(series)
    for i, name in enumerate(names):
        pts = [(e, v) for e, v in zip(ep, series[name]) if np.isfinite(v)]
        if pts:
            body.append(_polyline([p[0] for p in pts], [p[1] for p in pts], sx, sy, PALETTE[i]))
    body += _legend(names, PALETTE[:len(names)])
    return _svg(W, H, body)


def render_run(run_dir: str | Path) -> list[Path]:
    """(Re-)render every SVG whose source CSV exists in ``run_dir``."""
    run_dir = Path(run_dir)
    written = []
    if (run_dir / "pr_curve.csv").exists():
        p = run_dir / "pr_curve.svg"
        p.write_text(pr_curve_svg(read_pr_csv(run_dir / "pr_curve.csv")))
        written.append(p)
    if (run_dir / "confusion.csv").exists():
        names, cm = read_confusion_csv(run_dir / "confusion.csv")
        p = run_dir / "confusion.svg"
        p.write_text(confusion_svg(names, cm))
        written.append(p)
    if (run_dir / "history.csv").exists():
        p = run_dir / "history.svg"
        p.write_text(history_svg(read_history(run_dir / "history.csv")))
        written.append(p)
    return written

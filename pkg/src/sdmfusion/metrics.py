"""Evaluation metrics for the counting and occurrence tasks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalResult:
    task: str
    n: int
    mae: float | None = None
    accuracy: float | None = None
    auc: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("EvalResult needs n >= 1")
        if self.task == "regression" and self.mae is None:
            raise ValueError("regression result needs mae")
        if self.task == "classification" and self.accuracy is None:
            raise ValueError("classification result needs accuracy")


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise ValueError("empty input")
    return y, yhat


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def accuracy(y, p, threshold: float = 0.5) -> float:
    """Fraction of samples where ``p >= threshold`` agrees with the 0/1 label."""
    y, p = _pair(y, p)
    return float(np.mean((p >= threshold) == (y == 1)))


def roc_auc(y, scores) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    y, s = _pair(y, scores)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(task: str, y, pred) -> EvalResult:
    y, pred = _pair(y, pred)
    if task == "regression":
        return EvalResult(task, len(y), mae=mae(y, pred))
    auc = roc_auc(y, pred) if 0 < y.sum() < len(y) else None
    return EvalResult(task, len(y), accuracy=accuracy(y, pred), auc=auc)


EVAL_HEADER = ["model", "task", "n", "mae", "accuracy", "auc"]


def write_eval_csv(results: dict[str, EvalResult], path) -> None:
    def fmt(v):
        return "" if v is None else repr(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for name, r in results.items():
            w.writerow([name, r.task, r.n, fmt(r.mae), fmt(r.accuracy), fmt(r.auc)])


def bar_chart_svg(values: dict[str, float], title: str, ylabel: str,
                  width: int = 480, height: int = 320) -> str:
    """Minimal standalone SVG bar chart, one bar per entry."""
    names = list(values)
    vals = [float(values[k]) for k in names]
    top = max([v for v in vals if math.isfinite(v)] + [1e-12])
    left, right, bottom, upper = 60, 20, 50, 40
    plot_w = width - left - right
    plot_h = height - bottom - upper
    slot = plot_w / max(len(names), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<line x1="{left}" y1="{upper + plot_h}" x2="{left + plot_w}" y2="{upper + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{upper}" x2="{left}" y2="{upper + plot_h}" stroke="black"/>',
        f'<text x="15" y="{upper + plot_h / 2:.1f}" transform="rotate(-90 15 {upper + plot_h / 2:.1f})" '
        f'text-anchor="middle">{_esc(ylabel)}</text>',
    ]
    for i, (name, v) in enumerate(zip(names, vals)):
        h = 0.0 if not math.isfinite(v) else plot_h * v / top
        x = left + i * slot + slot * 0.15
        y = upper + plot_h - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" fill="#4c72b0"/>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{y - 4:.1f}" text-anchor="middle">{v:.3g}</text>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{upper + plot_h + 18:.1f}" '
                     f'text-anchor="middle">{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

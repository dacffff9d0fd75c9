"""Forecast accuracy metrics with per-level aggregation.

WAPE and SMAPE are pooled within each level: series at a level are
concatenated across nodes and rolling windows before the ratio is taken,
which is what a ratio-of-sums metric implies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hierarchy import HierarchyTree, coherence_deviation


def wape(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Weighted absolute percentage error, sum|ŷ−y| / sum|y|.

    Returns NaN when the truth is identically zero (flagged, not raised).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"wape: length mismatch {y.shape} vs {y_hat.shape}")
    denom = np.abs(y).sum()
    if denom == 0.0:
        return float("nan")
    return float(np.abs(y_hat - y).sum() / denom)


def smape(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Symmetric mean absolute percent error, (2/n) sum |ŷ−y|/(|y|+|ŷ|).

    0/0 terms count as 0.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"smape: length mismatch {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("smape: empty input")
    num = np.abs(y_hat - y)
    den = np.abs(y) + np.abs(y_hat)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(2.0 * terms.mean())


@dataclass(frozen=True)
class MetricReport:
    """Per-level metrics plus their unweighted mean across levels."""

    levels: list[int]
    wape_by_level: dict[int, float]
    smape_by_level: dict[int, float]
    coherence_by_level: dict[int, float]
    mean_wape: float
    mean_smape: float
    mean_coherence: float

    def to_csv(self) -> str:
        lines = ["level,wape,smape,coherence"]
        for lv in self.levels:
            lines.append(
                f"{lv},{self.wape_by_level[lv]:.10g},"
                f"{self.smape_by_level[lv]:.10g},{self.coherence_by_level[lv]:.10g}"
            )
        lines.append(
            f"mean,{self.mean_wape:.10g},{self.mean_smape:.10g},{self.mean_coherence:.10g}"
        )
        return "\n".join(lines) + "\n"


def _finite_mean(values: list[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


def per_level_report(truth: np.ndarray, preds: np.ndarray, tree: HierarchyTree) -> MetricReport:
    """Pool rows (eval windows) per level and compute WAPE/SMAPE/coherence.

    `truth`/`preds` are (rows, N) with one column per tree node; rows are the
    concatenation of forecast steps over all rolling windows.
    """
    truth = np.asarray(truth, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if truth.shape != preds.shape or truth.ndim != 2 or truth.shape[1] != tree.node_count:
        raise ValueError(
            f"per_level_report: need matching (rows, {tree.node_count}) matrices, "
            f"got {truth.shape} and {preds.shape}"
        )
    if truth.shape[0] == 0:
        raise ValueError("per_level_report: no evaluation rows")
    levels = sorted(set(tree.levels))
    wape_by, smape_by, coh_by = {}, {}, {}
    for lv in levels:
        nodes = tree.nodes_at_level(lv)
        wape_by[lv] = wape(truth[:, nodes], preds[:, nodes])
        smape_by[lv] = smape(truth[:, nodes], preds[:, nodes])
        coh_by[lv] = coherence_deviation(preds, tree, lv)
    return MetricReport(
        levels=levels,
        wape_by_level=wape_by,
        smape_by_level=smape_by,
        coherence_by_level=coh_by,
        mean_wape=_finite_mean(list(wape_by.values())),
        mean_smape=_finite_mean(list(smape_by.values())),
        mean_coherence=_finite_mean(list(coh_by.values())),
    )

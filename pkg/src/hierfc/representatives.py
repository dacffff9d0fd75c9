"""Representative-series selection via successive projection.

The global state Z is built from R real leaf series chosen as the extreme
columns of the (shifted, normalized) leaf matrix: repeatedly take the column
of largest l2 norm, then project every column onto the orthogonal complement
of the chosen one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TimePanel


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class RepresentativeSet:
    """Ordered selected leaf node indices with per-step residual norms."""

    indices: list[int]
    residual_norms: list[float]

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise SelectionError(f"duplicate indices in selection: {self.indices}")

    @property
    def R(self) -> int:
        return len(self.indices)


def _prepare_columns(matrix: np.ndarray) -> np.ndarray:
    """Shift each column by its min (nonnegativity), then l2-normalize."""
    shifted = matrix - matrix.min(axis=0, keepdims=True)
    norms = np.linalg.norm(shifted, axis=0, keepdims=True)
    norms = np.where(norms > 0, norms, 1.0)
    return shifted / norms


def spa_select(leaf_matrix: np.ndarray, R: int, leaf_nodes=None) -> RepresentativeSet:
    """Greedy successive-projection selection of R columns.

    Ties in the max-norm step break toward the lowest column index. When
    `leaf_nodes` is given, selected column positions map to those node ids.
    """
    leaf_matrix = np.asarray(leaf_matrix, dtype=np.float64)
    if leaf_matrix.ndim != 2:
        raise SelectionError(f"leaf matrix must be 2-D, got shape {leaf_matrix.shape}")
    n_cols = leaf_matrix.shape[1]
    if not 1 <= R <= n_cols:
        raise SelectionError(f"R={R} out of range for {n_cols} leaf columns")

    work = _prepare_columns(leaf_matrix)
    chosen: list[int] = []
    residuals: list[float] = []
    for _ in range(R):
        norms = np.linalg.norm(work, axis=0)
        norms[chosen] = -np.inf
        max_norm = norms.max()
        # near-ties (within 1e-9 relative) break toward the lowest index;
        # exact comparison would let summation-order noise decide
        thresh = max_norm * (1 - 1e-9) if max_norm > 0 else max_norm
        j = int(np.argmax(norms >= thresh))
        chosen.append(j)
        residuals.append(float(norms[j]))
        u = work[:, j]
        denom = float(u @ u)
        if denom > 0:
            work = work - np.outer(u, (u @ work) / denom)
    if leaf_nodes is not None:
        chosen = [int(leaf_nodes[j]) for j in chosen]
    return RepresentativeSet(indices=chosen, residual_norms=residuals)


def select_representatives(panel: TimePanel, R: int, train_end: int) -> RepresentativeSet:
    """Pick R representative leaves using training-range rows only."""
    leaves = panel.tree.leaves
    matrix = panel.values[:train_end, leaves]
    return spa_select(matrix, R, leaf_nodes=leaves)


def build_z(panel: TimePanel, reps: RepresentativeSet) -> np.ndarray:
    """T x R global-state matrix: the selected leaf columns of the panel."""
    for i in reps.indices:
        if not panel.tree.is_leaf(i):
            raise SelectionError(f"representative {i} is not a leaf")
    return panel.values[:, reps.indices].copy()

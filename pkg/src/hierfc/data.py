"""Panel ingestion, standardization, splits, and window generation.

Split boundaries are 1-based inclusive timestep numbers (the same convention
as the CLI `--splits train_end:val_start-val_end:test_start-test_end` flag);
internally they convert to 0-based half-open ranges.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import (
    HierarchyTree,
    aggregate_bottom_up,
    is_mean_coherent,
    is_sum_coherent,
    read_edge_file,
    rescale_to_mean_property,
)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Scaler:
    """Per-series (mean, std) fitted on the training range; std floor is the
    constant-series rule (std 0 recorded as 1)."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def inverse_columns(self, values: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return values * self.std[cols] + self.mean[cols]


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test boundaries, 1-based inclusive, plus rolling-window count."""

    train_end: int
    val_range: tuple[int, int]
    test_range: tuple[int, int]
    rolling_windows: int

    def __post_init__(self):
        vs, ve = self.val_range
        ts, te = self.test_range
        if not (0 < self.train_end < vs <= ve < ts <= te):
            raise DataError(
                f"invalid split: need train_end < val_start <= val_end < "
                f"test_start <= test_end, got {self.train_end}:{vs}-{ve}:{ts}-{te}"
            )
        if self.rolling_windows < 1:
            raise DataError(f"rolling_windows must be >= 1, got {self.rolling_windows}")

    def validate_for(self, T: int) -> None:
        if self.test_range[1] > T:
            raise DataError(
                f"split test_end {self.test_range[1]} exceeds panel length {T}"
            )

    # 0-based half-open views of the three segments
    def train_slice(self) -> slice:
        return slice(0, self.train_end)

    def val_slice(self) -> slice:
        return slice(self.val_range[0] - 1, self.val_range[1])

    def test_slice(self) -> slice:
        return slice(self.test_range[0] - 1, self.test_range[1])


def parse_splits(text: str, rolling_windows: int) -> SplitSpec:
    """Parse 'train_end:val_start-val_end:test_start-test_end'."""
    try:
        train_part, val_part, test_part = text.split(":")
        train_end = int(train_part)
        vs, ve = (int(x) for x in val_part.split("-"))
        ts, te = (int(x) for x in test_part.split("-"))
    except ValueError:
        raise DataError(
            f"cannot parse splits {text!r}; expected "
            f"'train_end:val_start-val_end:test_start-test_end'"
        ) from None
    return SplitSpec(train_end, (vs, ve), (ts, te), rolling_windows)


@dataclass(frozen=True)
class TimePanel:
    """Validated panel: mean-coherent values, covariates, tree, and provenance."""

    values: np.ndarray
    covariates: np.ndarray
    time_index: list[str]
    tree: HierarchyTree
    scaler: Scaler | None = None
    covariates_from_file: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class ForecastWindow:
    """One (series, time) training or evaluation example.

    Arrays are views into the panel; `t_start` is the 0-based index of the
    first history step, so the target occupies rows t_start+H .. t_start+H+F-1.
    """

    series: int
    t_start: int
    history: np.ndarray
    cov_history: np.ndarray
    cov_future: np.ndarray
    target: np.ndarray
    z_history: np.ndarray | None = None


def _parse_label_dow(label: str, row: int) -> int:
    try:
        return datetime.date.fromisoformat(label).weekday()
    except ValueError:
        pass
    try:
        return int(label) % 7
    except ValueError:
        return row % 7


def default_covariates(time_index: list[str]) -> np.ndarray:
    """Calendar features: day-of-week one-hot (7) + normalized position (1).

    Day-of-week comes from ISO dates when labels parse as dates, otherwise
    from the integer label mod 7, otherwise from the row position mod 7.
    """
    T = len(time_index)
    out = np.zeros((T, 8))
    for r, label in enumerate(time_index):
        out[r, _parse_label_dow(label, r)] = 1.0
    out[:, 7] = np.arange(T) / max(T - 1, 1)
    return out


def _read_numeric_csv(path, missing: str):
    """Read a wide CSV: header row, first column labels, rest float cells.

    Returns (column_names, labels, matrix). NaN cells follow `missing`
    policy ('error' or 'ffill'); Inf always errors.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header[1:]]
        if not names:
            raise DataError(f"{path}:1: header needs a label column plus data columns")
        labels: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(names) + 1:
                raise DataError(
                    f"{path}:{lineno}: expected {len(names) + 1} cells, got {len(row)}"
                )
            labels.append(row[0].strip())
            parsed = []
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    val = float("nan")
                else:
                    try:
                        val = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: cannot parse {cell!r} in column "
                            f"{names[j]!r}"
                        ) from None
                if np.isinf(val):
                    raise DataError(f"{path}:{lineno}: infinite value in column {names[j]!r}")
                if np.isnan(val) and missing == "error":
                    raise DataError(f"{path}:{lineno}: missing value in column {names[j]!r}")
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    matrix = np.array(rows, dtype=np.float64)
    if missing == "ffill":
        filled = 0
        for j in range(matrix.shape[1]):
            col = matrix[:, j]
            if np.isnan(col[0]):
                raise DataError(f"{path}: column {names[j]!r} starts with a missing value")
            for r in range(1, len(col)):
                if np.isnan(col[r]):
                    col[r] = col[r - 1]
                    filled += 1
        return names, labels, matrix, filled
    return names, labels, matrix, 0


def load_panel(
    values_path,
    hierarchy_path,
    covariates_path=None,
    missing: str = "error",
) -> TimePanel:
    """Load values + hierarchy (+ optional covariates) into a TimePanel.

    The values CSV may carry either all node columns (a coherent panel:
    sum-coherent input is rescaled to the mean property, mean-coherent input
    passes through) or leaf columns only (internal nodes are synthesized as
    leaf means).
    """
    if missing not in ("error", "ffill"):
        raise DataError(f"unknown missing-value policy: {missing!r}")
    tree = read_edge_file(hierarchy_path) if not isinstance(
        hierarchy_path, HierarchyTree
    ) else hierarchy_path
    names, labels, matrix, filled = _read_numeric_csv(values_path, missing)

    tree_names = set(tree.names)
    leaf_names = [tree.names[i] for i in tree.leaves]
    given = set(names)
    if given == tree_names:
        order = [names.index(tree.names[i]) for i in range(tree.node_count)]
        panel = matrix[:, order]
        if is_mean_coherent(panel, tree):
            values = panel
        elif is_sum_coherent(panel, tree):
            values = rescale_to_mean_property(panel, tree)
        else:
            raise DataError(
                f"{values_path}: full panel is neither sum- nor mean-coherent; "
                f"provide leaf columns only to aggregate bottom-up"
            )
    elif given == set(leaf_names):
        order = [names.index(n) for n in leaf_names]
        values = aggregate_bottom_up(matrix[:, order], tree, mode="mean")
    else:
        missing_cols = sorted(set(leaf_names) - given)[:5]
        extra = sorted(given - tree_names)[:5]
        raise DataError(
            f"{values_path}: columns must cover all {tree.node_count} nodes or "
            f"exactly the {len(leaf_names)} leaves; missing {missing_cols}, "
            f"unknown {extra}"
        )

    provenance = {
        "values_path": str(values_path),
        "missing_policy": missing,
        "filled_cells": filled,
    }
    if covariates_path is not None:
        _, cov_labels, cov, cov_filled = _read_numeric_csv(covariates_path, missing)
        if cov.shape[0] != matrix.shape[0]:
            raise DataError(
                f"{covariates_path}: {cov.shape[0]} rows but values has {matrix.shape[0]}"
            )
        provenance["covariates_path"] = str(covariates_path)
        provenance["filled_cells"] += cov_filled
        return TimePanel(values, cov, labels, tree, None, True, provenance)
    return TimePanel(values, default_covariates(labels), labels, tree, None, False, provenance)


def _fit_scaler(values: np.ndarray) -> Scaler:
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean=mean, std=std)


def standardize(panel: TimePanel, split: SplitSpec) -> TimePanel:
    """Standardize per series on the training range only.

    User-supplied covariate columns get the same treatment; generated
    calendar covariates are already bounded and pass through unchanged.
    """
    split.validate_for(panel.T)
    train = panel.values[split.train_slice()]
    scaler = _fit_scaler(train)
    values = scaler.transform(panel.values)
    covariates = panel.covariates
    if panel.covariates_from_file:
        cov_scaler = _fit_scaler(panel.covariates[split.train_slice()])
        covariates = cov_scaler.transform(panel.covariates)
    return TimePanel(
        values=values,
        covariates=covariates,
        time_index=panel.time_index,
        tree=panel.tree,
        scaler=scaler,
        covariates_from_file=panel.covariates_from_file,
        provenance=panel.provenance,
    )


def rolling_starts(seg: slice, H: int, F: int, k: int) -> list[int]:
    """0-based history starts of k rolling windows tiling the segment end."""
    length = seg.stop - seg.start
    need = H + k * F
    if length < need:
        raise DataError(
            f"segment too short: {k} rolling windows with H={H}, F={F} need "
            f"at least {need} steps, segment has {length}"
        )
    return [seg.stop - j * F - F - H for j in range(k - 1, -1, -1)]


def make_windows(
    panel: TimePanel,
    split: SplitSpec,
    H: int,
    F: int,
    stride: int = 1,
    segment: str = "train",
    z: np.ndarray | None = None,
) -> list[ForecastWindow]:
    """Generate windows for one segment, time-major (start time outer loop).

    Train: every stride-`stride` window whose history and target both fall
    inside the training range. Val/test: `split.rolling_windows` windows whose
    targets tile the end of the segment, histories inside the segment.
    """
    split.validate_for(panel.T)
    if H < 1 or F < 1:
        raise DataError(f"H and F must be >= 1, got H={H}, F={F}")
    if segment == "train":
        seg = split.train_slice()
        last_start = seg.stop - H - F
        if last_start < 0:
            raise DataError(
                f"segment too short: one window needs H+F={H + F} steps, "
                f"train range has {seg.stop}"
            )
        starts = list(range(0, last_start + 1, stride))
    elif segment in ("val", "test"):
        seg = split.val_slice() if segment == "val" else split.test_slice()
        starts = rolling_starts(seg, H, F, split.rolling_windows)
    else:
        raise DataError(f"unknown segment {segment!r}")

    values, cov = panel.values, panel.covariates
    out = []
    for t in starts:
        hist_rows = slice(t, t + H)
        fut_rows = slice(t + H, t + H + F)
        cov_h = cov[hist_rows]
        cov_f = cov[fut_rows]
        z_h = z[hist_rows] if z is not None else None
        for i in range(panel.N):
            out.append(
                ForecastWindow(
                    series=i,
                    t_start=t,
                    history=values[hist_rows, i],
                    cov_history=cov_h,
                    cov_future=cov_f,
                    target=values[fut_rows, i],
                    z_history=z_h,
                )
            )
    return out


def batch_iter(windows: list[ForecastWindow], batch_size: int, shuffle_seed=None):
    """Yield window batches; a seed gives a deterministic shuffle, None keeps order."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(windows))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(windows))
    for off in range(0, len(windows), batch_size):
        yield [windows[j] for j in order[off : off + batch_size]]


def write_values_csv(path, values: np.ndarray, names: list[str], time_index=None) -> None:
    """Write a wide values CSV (inverse of load_panel's reader)."""
    values = np.asarray(values)
    if time_index is None:
        time_index = [str(t + 1) for t in range(values.shape[0])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(names))
        for r in range(values.shape[0]):
            writer.writerow([time_index[r]] + [f"{v:.12g}" for v in values[r]])

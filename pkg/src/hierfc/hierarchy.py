"""Aggregation hierarchy: tree structure, mean-coherence rescaling, deviation metric.

Node indexing is breadth-first (parents before children, siblings in edge
input order), which fixes a deterministic leaf ordering used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchyTree:
    """Rooted tree over N series with per-node leaf sets and depths.

    Immutable after construction; safe to share across workers.
    """

    names: list[str]
    parent: list[int | None]
    children: list[list[int]]
    leaf_sets: list[list[int]]
    levels: list[int]
    _name_to_index: dict[str, int] = field(repr=False, default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return self.parent.index(None)

    @property
    def leaves(self) -> list[int]:
        """Leaf indices in breadth-first order (the canonical leaf ordering)."""
        return [i for i, ch in enumerate(self.children) if not ch]

    @property
    def depth(self) -> int:
        return max(self.levels)

    def index_of(self, name: str) -> int:
        try:
            return self._name_to_index[name]
        except KeyError:
            raise HierarchyError(f"unknown node name: {name!r}") from None

    def nodes_at_level(self, level: int) -> list[int]:
        idx = [i for i, lv in enumerate(self.levels) if lv == level]
        if not idx:
            raise HierarchyError(f"level {level} not present (depth {self.depth})")
        return idx

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]


@dataclass(frozen=True)
class NodeSeries:
    """One node's length-T series."""

    values: np.ndarray
    node: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise HierarchyError(f"NodeSeries must be 1-D, got shape {self.values.shape}")


def build_tree(edges: list[tuple[str, str]]) -> HierarchyTree:
    """Build a HierarchyTree from (child, parent) name pairs.

    Raises HierarchyError for cycles, multiple roots, duplicate children, or
    nodes not reachable from the root, naming the offending node.
    """
    if not edges:
        raise HierarchyError("no edges given")
    parent_of: dict[str, str] = {}
    children_of: dict[str, list[str]] = {}
    for child, parent in edges:
        if child == parent:
            raise HierarchyError(f"cycle detected at node {child!r} (self loop)")
        if child in parent_of:
            raise HierarchyError(f"duplicate child: node {child!r} has two parents")
        parent_of[child] = parent
        children_of.setdefault(parent, []).append(child)
        children_of.setdefault(child, [])

    all_names = list(children_of.keys())
    roots = [n for n in all_names if n not in parent_of]
    if not roots:
        raise HierarchyError(f"cycle detected: no root among nodes {sorted(all_names)}")
    if len(roots) > 1:
        raise HierarchyError(f"multiple roots: {sorted(roots)}")
    root_name = roots[0]

    # breadth-first order, siblings in input order
    order: list[str] = []
    queue = [root_name]
    seen = {root_name}
    while queue:
        name = queue.pop(0)
        order.append(name)
        for ch in children_of[name]:
            if ch in seen:
                raise HierarchyError(f"cycle detected at node {ch!r}")
            seen.add(ch)
            queue.append(ch)
    unreached = [n for n in all_names if n not in seen]
    if unreached:
        raise HierarchyError(f"orphan node {unreached[0]!r}: not reachable from root {root_name!r}")

    index = {name: i for i, name in enumerate(order)}
    parent = [None if n == root_name else index[parent_of[n]] for n in order]
    children = [[index[c] for c in children_of[n]] for n in order]
    levels = [0] * len(order)
    for i, p in enumerate(parent):
        if p is not None:
            levels[i] = levels[p] + 1

    leaf_sets: list[list[int]] = [[] for _ in order]
    for i in reversed(range(len(order))):  # children have larger indices
        if not children[i]:
            leaf_sets[i] = [i]
        else:
            leaf_sets[i] = [leaf for c in children[i] for leaf in leaf_sets[c]]
            leaf_sets[i].sort()

    return HierarchyTree(
        names=order,
        parent=parent,
        children=children,
        leaf_sets=leaf_sets,
        levels=levels,
        _name_to_index=index,
    )


def _check_panel_shape(panel: np.ndarray, tree: HierarchyTree, what: str) -> np.ndarray:
    panel = np.asarray(panel, dtype=np.float64)
    if panel.ndim != 2 or panel.shape[1] != tree.node_count:
        raise HierarchyError(
            f"{what}: expected (T, {tree.node_count}) matrix, got shape {panel.shape}"
        )
    return panel


def is_sum_coherent(panel: np.ndarray, tree: HierarchyTree, rtol: float = 1e-6) -> bool:
    """True if every parent row equals the sum of its children's rows (rel tol)."""
    panel = _check_panel_shape(panel, tree, "is_sum_coherent")
    for p, ch in enumerate(tree.children):
        if not ch:
            continue
        total = panel[:, ch].sum(axis=1)
        if not np.allclose(panel[:, p], total, rtol=rtol, atol=rtol):
            return False
    return True


def is_mean_coherent(panel: np.ndarray, tree: HierarchyTree, rtol: float = 1e-6) -> bool:
    """True if every node equals the average of its subtree's leaves (rel tol)."""
    panel = _check_panel_shape(panel, tree, "is_mean_coherent")
    for p, leaves in enumerate(tree.leaf_sets):
        avg = panel[:, leaves].mean(axis=1)
        if not np.allclose(panel[:, p], avg, rtol=rtol, atol=rtol):
            return False
    return True


def rescale_to_mean_property(raw: np.ndarray, tree: HierarchyTree) -> np.ndarray:
    """Divide each node's series by its subtree leaf count.

    Turns a sum-coherent panel into one where every node equals the mean of
    its subtree's leaves; leaves are unchanged.
    """
    raw = _check_panel_shape(raw, tree, "rescale_to_mean_property")
    sizes = np.array([len(ls) for ls in tree.leaf_sets], dtype=np.float64)
    return raw / sizes[None, :]


def aggregate_bottom_up(
    leaf_values: np.ndarray, tree: HierarchyTree, mode: str = "mean"
) -> np.ndarray:
    """Fill all N nodes from leaf columns by summing (or averaging) leaf sets.

    `leaf_values` columns must follow the tree's canonical leaf ordering.
    """
    leaf_values = np.asarray(leaf_values, dtype=np.float64)
    leaves = tree.leaves
    if leaf_values.ndim != 2 or leaf_values.shape[1] != len(leaves):
        raise HierarchyError(
            f"aggregate_bottom_up: expected {len(leaves)} leaf columns, "
            f"got shape {leaf_values.shape}"
        )
    if mode not in ("sum", "mean"):
        raise HierarchyError(f"unknown aggregation mode: {mode!r}")
    col_of_leaf = {leaf: j for j, leaf in enumerate(leaves)}
    out = np.empty((leaf_values.shape[0], tree.node_count))
    for p, leaf_set in enumerate(tree.leaf_sets):
        cols = [col_of_leaf[l] for l in leaf_set]
        block = leaf_values[:, cols]
        out[:, p] = block.mean(axis=1) if mode == "mean" else block.sum(axis=1)
    return out


def coherence_deviation(predictions: np.ndarray, tree: HierarchyTree, level: int) -> float:
    """WAPE between the level's predictions and the mean of their subtree leaf predictions.

    Zero at the leaf level by construction, and zero at every level for
    predictions produced by mean bottom-up aggregation.
    """
    predictions = _check_panel_shape(predictions, tree, "coherence_deviation")
    nodes = tree.nodes_at_level(level)
    pred = predictions[:, nodes]
    leaf_means = np.column_stack(
        [predictions[:, tree.leaf_sets[p]].mean(axis=1) for p in nodes]
    )
    denom = np.abs(pred).sum()
    if denom == 0.0:
        return 0.0 if np.abs(leaf_means - pred).sum() == 0.0 else float("nan")
    return float(np.abs(leaf_means - pred).sum() / denom)


def write_edge_file(path, tree: HierarchyTree, header: bool = False) -> None:
    lines = []
    if header:
        lines.append("child_id,parent_id")
    for i, p in enumerate(tree.parent):
        if p is not None:
            lines.append(f"{tree.names[i]},{tree.names[p]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edge_file(path, header: bool = False) -> HierarchyTree:
    """Read `child_id,parent_id` lines (UTF-8) into a HierarchyTree.

    A first line spelling the canonical header is skipped automatically.
    """
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and (
                header or line.lower().replace(" ", "") == "child_id,parent_id"
            ):
                continue
            parts = line.split(",")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise HierarchyError(f"{path}:{lineno}: expected 'child_id,parent_id', got {line!r}")
            edges.append((parts[0].strip(), parts[1].strip()))
    return build_tree(edges)

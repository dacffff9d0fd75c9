"""Ingestion, standardization, splits, and windowing."""

import numpy as np
import pytest

from hierfc.data import (
    DataError,
    SplitSpec,
    batch_iter,
    default_covariates,
    load_panel,
    make_windows,
    parse_splits,
    standardize,
    write_values_csv,
)
from hierfc.hierarchy import aggregate_bottom_up, build_tree, write_edge_file


@pytest.fixture
def star_tree(tmp_path):
    tree = build_tree([("B", "A"), ("C", "A")])
    path = tmp_path / "edges.csv"
    write_edge_file(path, tree)
    return tree, path


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


class TestLoadPanel:
    def test_leaf_only_synthesis(self, star_tree, tmp_path):
        tree, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "B", "C"], [[1, 2.0, 4.0], [2, 0.0, 2.0]])
        panel = load_panel(vpath, edges)
        assert panel.N == 3
        a = tree.index_of("A")
        assert panel.values[0, a] == 3.0 and panel.values[1, a] == 1.0

    def test_full_sum_coherent_gets_rescaled(self, star_tree, tmp_path):
        tree, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "A", "B", "C"], [[1, 6.0, 2.0, 4.0]])
        panel = load_panel(vpath, edges)
        assert panel.values[0, tree.index_of("A")] == 3.0

    def test_full_mean_coherent_passthrough(self, star_tree, tmp_path):
        tree, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "A", "B", "C"], [[1, 3.0, 2.0, 4.0]])
        panel = load_panel(vpath, edges)
        assert panel.values[0, tree.index_of("A")] == 3.0

    def test_incoherent_full_panel_rejected(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "A", "B", "C"], [[1, 9.0, 2.0, 4.0]])
        with pytest.raises(DataError, match="coherent"):
            load_panel(vpath, edges)

    def test_nan_strict_mode_names_line(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        vpath.write_text("t,B,C\n1,2.0,4.0\n2,,1.0\n")
        with pytest.raises(DataError, match=":3"):
            load_panel(vpath, edges)

    def test_nan_ffill_mode(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        vpath.write_text("t,B,C\n1,2.0,4.0\n2,nan,1.0\n")
        panel = load_panel(vpath, edges, missing="ffill")
        b = panel.tree.index_of("B")
        assert panel.values[1, b] == 2.0
        assert panel.provenance["filled_cells"] == 1

    def test_wrong_columns_named(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "B", "X"], [[1, 2.0, 4.0]])
        with pytest.raises(DataError, match="X"):
            load_panel(vpath, edges)

    def test_covariates_row_mismatch(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "B", "C"], [[1, 2.0, 4.0], [2, 1.0, 1.0]])
        cpath = tmp_path / "cov.csv"
        write_csv(cpath, ["t", "x1"], [[1, 0.5]])
        with pytest.raises(DataError, match="rows"):
            load_panel(vpath, edges, covariates_path=cpath)

    def test_default_covariate_shape(self, star_tree, tmp_path):
        _, edges = star_tree
        vpath = tmp_path / "values.csv"
        write_csv(vpath, ["t", "B", "C"], [[i + 1, 1.0, 2.0] for i in range(14)])
        panel = load_panel(vpath, edges)
        assert panel.covariates.shape == (14, 8)
        # integer labels 1..14 -> one-hot cycles with period 7
        assert np.array_equal(panel.covariates[0, :7], panel.covariates[7, :7])
        assert panel.covariates[0, 7] == 0.0 and panel.covariates[-1, 7] == 1.0


class TestDefaultCovariates:
    def test_iso_dates_use_weekday(self):
        cov = default_covariates(["2024-01-01", "2024-01-02"])  # Mon, Tue
        assert cov[0, 0] == 1.0 and cov[1, 1] == 1.0

    def test_opaque_labels_fall_back_to_row(self):
        cov = default_covariates(["a", "b", "c"])
        assert cov[0, 0] == 1.0 and cov[2, 2] == 1.0


class TestSplits:
    def test_parse_round_trip(self):
        s = parse_splits("120:121-156:157-192", rolling_windows=3)
        assert s.train_end == 120
        assert s.val_range == (121, 156)
        assert s.test_range == (157, 192)
        assert s.train_slice() == slice(0, 120)
        assert s.val_slice() == slice(120, 156)
        assert s.test_slice() == slice(156, 192)

    def test_invalid_order_rejected(self):
        with pytest.raises(DataError, match="split"):
            SplitSpec(10, (10, 12), (13, 14), 1)
        with pytest.raises(DataError, match="split"):
            SplitSpec(10, (11, 15), (14, 20), 1)

    def test_garbage_string(self):
        with pytest.raises(DataError, match="parse"):
            parse_splits("10,20,30", 1)

    def test_exceeds_T(self):
        s = SplitSpec(5, (6, 8), (9, 12), 1)
        with pytest.raises(DataError, match="exceeds"):
            s.validate_for(10)


def tiny_panel(T=20, seed=0):
    tree = build_tree([("B", "A"), ("C", "A")])
    rng = np.random.default_rng(seed)
    leaves = rng.normal(size=(T, 2)) + 5.0
    values = aggregate_bottom_up(leaves, tree, "mean")
    from hierfc.data import TimePanel

    return TimePanel(
        values=values,
        covariates=default_covariates([str(t + 1) for t in range(T)]),
        time_index=[str(t + 1) for t in range(T)],
        tree=tree,
    )


class TestStandardize:
    def test_population_std_hand_case(self):
        panel = tiny_panel(T=15)
        vals = panel.values.copy()
        vals[:3, 0] = [1.0, 2.0, 3.0]
        object.__setattr__(panel, "values", vals)
        split = SplitSpec(3, (4, 9), (10, 15), 1)
        std_panel = standardize(panel, split)
        assert std_panel.scaler.mean[0] == 2.0
        assert std_panel.scaler.std[0] == pytest.approx(np.sqrt(2.0 / 3.0))
        assert std_panel.values[1, 0] == 0.0
        assert std_panel.values[0, 0] == -std_panel.values[2, 0]

    def test_constant_series_std_one(self):
        panel = tiny_panel(T=12)
        vals = panel.values.copy()
        vals[:, 1] = 5.0
        object.__setattr__(panel, "values", vals)
        split = SplitSpec(6, (7, 9), (10, 12), 1)
        std_panel = standardize(panel, split)
        assert std_panel.scaler.std[1] == 1.0
        assert np.all(std_panel.values[:6, 1] == 0.0)

    def test_round_trip(self):
        panel = tiny_panel(T=30, seed=3)
        split = SplitSpec(20, (21, 25), (26, 30), 1)
        std_panel = standardize(panel, split)
        back = std_panel.scaler.inverse(std_panel.values)
        assert np.allclose(back, panel.values, rtol=1e-10)

    def test_stats_from_train_rows_only(self):
        panel = tiny_panel(T=30, seed=4)
        vals = panel.values.copy()
        vals[20:, :] += 1000.0  # corrupt val/test rows; train stats must ignore
        object.__setattr__(panel, "values", vals)
        split = SplitSpec(20, (21, 25), (26, 30), 1)
        std_panel = standardize(panel, split)
        assert abs(std_panel.values[:20, 0].mean()) < 1e-12
        assert std_panel.values[:20, 0].std() == pytest.approx(1.0)


class TestMakeWindows:
    def test_train_window_count(self):
        # 10 training steps, H=3, F=2 -> 10-3-2+1 = 6 stride-1 starts
        panel = tiny_panel(T=20)
        split = SplitSpec(10, (11, 15), (16, 20), 1)
        wins = make_windows(panel, split, H=3, F=2, segment="train")
        starts = sorted({w.t_start for w in wins})
        assert starts == list(range(6))
        assert len(wins) == 6 * 3

    def test_no_train_leakage(self):
        panel = tiny_panel(T=40)
        split = SplitSpec(25, (26, 32), (33, 40), 1)
        wins = make_windows(panel, split, H=4, F=3, segment="train")
        assert all(w.t_start + 4 + 3 <= 25 for w in wins)
        assert wins  # nonempty

    def test_val_exact_fit_single_window(self):
        panel = tiny_panel(T=20)
        split = SplitSpec(10, (11, 15), (16, 20), 1)  # val has 5 = H+F steps
        wins = make_windows(panel, split, H=3, F=2, segment="val")
        starts = {w.t_start for w in wins}
        assert starts == {10}
        w = wins[0]
        assert np.array_equal(w.target, panel.values[13:15, w.series])

    def test_rolling_windows_tile_segment_end(self):
        panel = tiny_panel(T=40)
        split = SplitSpec(20, (21, 30), (31, 40), 2)
        wins = make_windows(panel, split, H=4, F=3, segment="test")
        starts = sorted({w.t_start for w in wins})
        # segment rows 30..39; targets [33..36) and [36..39) -> wait: tiles are
        # rows 34-36 and 37-39 (0-based), histories 30-33 and 33-36
        assert starts == [30, 33]
        last = [w for w in wins if w.t_start == 33][0]
        assert np.array_equal(last.target, panel.values[37:40, last.series])

    def test_too_many_rolling_windows_error(self):
        panel = tiny_panel(T=40)
        split = SplitSpec(20, (21, 30), (31, 40), 5)
        with pytest.raises(DataError, match="at least"):
            make_windows(panel, split, H=4, F=3, segment="val")

    def test_windows_only_touch_own_series_column(self):
        panel = tiny_panel(T=30)
        split = SplitSpec(20, (21, 25), (26, 30), 1)
        z = np.arange(60, dtype=float).reshape(30, 2)
        wins = make_windows(panel, split, H=3, F=2, segment="train", z=z)
        for w in wins[:12]:
            assert np.shares_memory(w.history, panel.values)
            assert np.array_equal(w.history, panel.values[w.t_start : w.t_start + 3, w.series])
            assert np.array_equal(w.z_history, z[w.t_start : w.t_start + 3])
            assert w.cov_future.shape == (2, 8)


class TestBatchIter:
    def test_sizes_and_partial_final(self):
        panel = tiny_panel(T=30)
        split = SplitSpec(25, (26, 28), (29, 30), 1)
        wins = make_windows(panel, split, H=2, F=1, segment="train")
        sizes = [len(b) for b in batch_iter(wins, 16, shuffle_seed=0)]
        assert sum(sizes) == len(wins)
        assert all(s == 16 for s in sizes[:-1])
        assert sizes[-1] == len(wins) - 16 * (len(sizes) - 1)

    def test_seeded_shuffle_is_deterministic(self):
        panel = tiny_panel(T=30)
        split = SplitSpec(25, (26, 28), (29, 30), 1)
        wins = make_windows(panel, split, H=2, F=1, segment="train")
        a = [[(w.series, w.t_start) for w in b] for b in batch_iter(wins, 8, 42)]
        b = [[(w.series, w.t_start) for w in b] for b in batch_iter(wins, 8, 42)]
        assert a == b
        c = [[(w.series, w.t_start) for w in b] for b in batch_iter(wins, 8, 43)]
        assert a != c

    def test_single_batch_when_large(self):
        panel = tiny_panel(T=10)
        split = SplitSpec(8, (9, 9), (10, 10), 1)
        wins = make_windows(panel, split, H=2, F=1, segment="train")
        batches = list(batch_iter(wins, 10_000, None))
        assert len(batches) == 1

    def test_none_seed_keeps_order(self):
        panel = tiny_panel(T=10)
        split = SplitSpec(8, (9, 9), (10, 10), 1)
        wins = make_windows(panel, split, H=2, F=1, segment="train")
        flat = [w for b in batch_iter(wins, 4, None) for w in b]
        assert [(w.series, w.t_start) for w in flat] == [
            (w.series, w.t_start) for w in wins
        ]


def test_values_csv_round_trip(tmp_path):
    tree = build_tree([("B", "A"), ("C", "A")])
    edges = tmp_path / "e.csv"
    write_edge_file(edges, tree)
    rng = np.random.default_rng(1)
    leaves = rng.uniform(1, 9, size=(6, 2))
    values = aggregate_bottom_up(leaves, tree, "mean")
    vpath = tmp_path / "v.csv"
    write_values_csv(vpath, values, tree.names)
    panel = load_panel(vpath, edges)
    assert np.allclose(panel.values, values, atol=1e-9)

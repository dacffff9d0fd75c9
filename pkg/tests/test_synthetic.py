"""Tests for the synthetic panel generator."""

import numpy as np
import pytest

from hierfc.data import load_panel
from hierfc.hierarchy import is_mean_coherent
from hierfc.synthetic import (
    SyntheticSpec,
    main,
    make_bases,
    make_panel,
    make_weights,
    write_fixture,
)


def test_bases_shapes_and_periodicity():
    bases = make_bases(T=140, periods=(7, 14))
    assert bases.shape == (140, 2)
    # shifting by one full period reproduces the basis exactly
    assert np.allclose(bases[:-7, 0], bases[7:, 0], atol=1e-12)
    assert np.allclose(bases[:-14, 1], bases[14:, 1], atol=1e-12)
    assert np.abs(bases).max() <= 1.0 + 1e-12


def test_weights_cluster_by_group():
    spec = SyntheticSpec(seed=3)
    rng = np.random.default_rng(3)
    weights = make_weights(spec, rng)
    assert weights.shape == (40, 4)
    centers = weights.reshape(4, 10, 4).mean(axis=1)
    within = np.linalg.norm(weights.reshape(4, 10, 4) - centers[:, None, :], axis=2)
    between = [
        np.linalg.norm(centers[a] - centers[b])
        for a in range(4) for b in range(a + 1, 4)
    ]
    assert within.max() < min(between)


def test_panel_structure():
    panel = make_panel(SyntheticSpec(seed=0))
    tree = panel.tree
    assert tree.node_count == 45
    assert len(tree.leaves) == 40
    assert tree.depth == 2
    assert panel.values.shape == (400, 45)
    assert panel.covariates.shape == (400, 8)
    assert is_mean_coherent(panel.values, tree)
    assert np.all(np.isfinite(panel.values))


def test_panel_determinism():
    a = make_panel(SyntheticSpec(seed=5))
    b = make_panel(SyntheticSpec(seed=5))
    c = make_panel(SyntheticSpec(seed=6))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_leaves_have_weekly_energy():
    panel = make_panel(SyntheticSpec(seed=0))
    leaf = panel.values[:, panel.tree.leaves[0]]
    spectrum = np.abs(np.fft.rfft(leaf - leaf.mean()))
    freqs = np.fft.rfftfreq(panel.T)
    peak_period = 1.0 / freqs[np.argmax(spectrum)]
    # group 1 mixes mostly the period-7 basis
    assert peak_period == pytest.approx(7.0, rel=0.05)


def test_fixture_round_trip(tmp_path):
    spec = SyntheticSpec(seed=2, T=60, n_groups=2, leaves_per_group=3)
    values_path, edges_path = write_fixture(tmp_path, spec)
    panel = make_panel(spec)
    loaded = load_panel(values_path, edges_path)
    assert loaded.tree.names == panel.tree.names
    assert np.allclose(loaded.values, panel.values, atol=1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n_groups=0)
    with pytest.raises(ValueError):
        SyntheticSpec(T=1)
    with pytest.raises(ValueError):
        SyntheticSpec(periods=())


def test_cli_writes_fixture(tmp_path, capsys):
    rc = main(["--out", str(tmp_path / "fx"), "--seed", "1", "--t", "50",
               "--groups", "2", "--leaves-per-group", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "values.csv" in out
    assert (tmp_path / "fx" / "values.csv").exists()
    assert (tmp_path / "fx" / "hierarchy.csv").exists()


def test_cli_rejects_bad_args(tmp_path, capsys):
    rc = main(["--out", str(tmp_path / "fx"), "--t", "1"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err

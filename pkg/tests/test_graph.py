import numpy as np
import pytest
from hypothesis import given, strategies as st

from sohgraph.data_io import SynthConfig, synth_battery
from sohgraph.errors import ConstantInput, DimensionMismatch, MissingCycle, MissingLabel, ValidationError
from sohgraph.graph import (
    BaseGraphConfig,
    CycleGraph,
    augment_graph,
    build_base_graph,
    edge_weight,
    pearson,
    save_graph_csv,
)
from sohgraph.segments import SegmentSpec, select_segment
from sohgraph.series_core import VoltageCycle


def pearson_oracle(x, y):
    # textbook sums-of-products form, evaluated independently
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    return (n * sxy - sx * sy) / np.sqrt((n * sxx - sx**2) * (n * syy - sy**2))


def check_structure(a):
    n = a.shape[0]
    assert np.all(np.diag(a) == 1.0)
    assert np.all(a[np.tril_indices(n, -1)] == 0.0)
    assert np.all((a >= 0.0) & (a <= 1.0))


class TestPearson:
    def test_examples(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)

    def test_constant(self):
        with pytest.raises(ConstantInput):
            pearson([1, 1, 1], [1, 2, 3])
        assert edge_weight([1, 1, 1], [1, 2, 3]) == 0.0

    def test_bad_lengths(self):
        with pytest.raises(DimensionMismatch):
            pearson([1, 2, 3], [1, 2])
        with pytest.raises(ValidationError):
            pearson([1], [2])

    def test_clamp(self):
        assert edge_weight([1, 2, 3], [3, 2, 1]) == 0.0

    @given(st.integers(0, 2**32 - 1))
    def test_against_oracle(self, seed):
        x, y = np.random.default_rng(seed).standard_normal((2, 20))
        assert pearson(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_positive_affine_invariance(self, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal((2, 30))
        a, b = r.uniform(0.01, 100), r.uniform(-100, 100)
        assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-12


class TestConfig:
    def test_eleven_node_layout(self):
        assert BaseGraphConfig().cycle_indices == [1, 11, 21, 31, 41, 51, 61, 71, 81, 91]

    def test_too_many_nodes(self):
        with pytest.raises(ValidationError):
            BaseGraphConfig(k=50, n=10, d=10)


@pytest.fixture(scope="module")
def early():
    return synth_battery(SynthConfig(total_cycles=130))


SPEC = SegmentSpec(3.25, 100)


class TestBuild:
    def test_base_graph(self, early):
        g = build_base_graph(early.cycles, BaseGraphConfig(), SPEC)
        assert g.node_cycles == tuple(range(1, 92, 10))
        check_structure(g.a)
        np.testing.assert_array_equal(g.x[3], select_segment(early.cycle(31), SPEC).x)
        np.testing.assert_array_equal(g.y, [early.cycle(i).soh for i in g.node_cycles])
        # early-life cycles are nearly identical
        assert g.a[np.triu_indices(10, 1)].min() >= 0.9

    def test_single_node(self, early):
        g = build_base_graph(early.cycles, BaseGraphConfig(k=1, n=1, d=1), SPEC)
        np.testing.assert_array_equal(g.a, [[1.0]])

    def test_mapping_input(self, early):
        a = build_base_graph(early.cycles, BaseGraphConfig(), SPEC)
        b = build_base_graph(early.by_index(), BaseGraphConfig(), SPEC)
        np.testing.assert_array_equal(a.a, b.a)

    def test_missing_cycle(self, early):
        with pytest.raises(MissingCycle):
            build_base_graph([c for c in early.cycles if c.index != 21], BaseGraphConfig(), SPEC)

    def test_missing_label(self, early):
        cycles = [VoltageCycle(c.index, c.samples, c.dt, None if c.index == 11 else c.soh) for c in early.cycles]
        with pytest.raises(MissingLabel):
            build_base_graph(cycles, BaseGraphConfig(), SPEC)

    def test_deterministic(self, early):
        a = build_base_graph(early.cycles, BaseGraphConfig(), SPEC)
        b = build_base_graph(early.cycles, BaseGraphConfig(), SPEC)
        np.testing.assert_array_equal(a.a, b.a)


class TestAugment:
    @pytest.fixture
    def base(self, early):
        return build_base_graph(early.cycles, BaseGraphConfig(), SPEC)

    def test_eleven_nodes(self, base, early):
        g = augment_graph(base, select_segment(early.cycle(101), SPEC), early.cycle(101).soh)
        assert g.a.shape == (11, 11)
        check_structure(g.a)
        assert g.node_cycles[-1] == 101
        assert g.y[-1] == early.cycle(101).soh
        np.testing.assert_array_equal(g.a[:10, :10], base.a)

    def test_self_copy(self, base):
        g = augment_graph(base, base.x[-1])
        assert g.a[9, 10] == pytest.approx(1.0)
        assert np.isnan(g.y[-1])

    def test_base_not_mutated(self, base, early):
        snap = (base.x.copy(), base.a.copy(), base.y.copy())
        augment_graph(base, select_segment(early.cycle(120), SPEC), 0.9)
        for before, after in zip(snap, (base.x, base.a, base.y)):
            np.testing.assert_array_equal(before, after)
        with pytest.raises(ValueError):
            base.a[0, 0] = 2.0

    def test_orthogonal_feature(self, base, rng):
        # remove the span of centered base rows so every correlation vanishes
        c = base.x - base.x.mean(axis=1, keepdims=True)
        q, _ = np.linalg.qr(np.vstack([np.ones(100), c]).T)
        r = rng.standard_normal(100)
        r -= q @ (q.T @ r)
        g = augment_graph(base, 3.2 + 0.01 * r)
        assert np.all(g.a[:10, 10] <= 0.05)

    def test_dimension_mismatch(self, base):
        with pytest.raises(DimensionMismatch):
            augment_graph(base, np.ones(99))

    def test_scaling_a_node_keeps_adjacency(self, base, early):
        feat = select_segment(early.cycle(110), SPEC).x
        a = augment_graph(base, feat).a
        b = augment_graph(base, 3.7 * feat).a
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_similarity_decays_with_age(self):
        cfg = SynthConfig(noise_std=0.0)
        ds = synth_battery(cfg)
        spec = SegmentSpec(3.29, 100)
        base = build_base_graph(ds.cycles, BaseGraphConfig(), spec)
        w = [augment_graph(base, select_segment(c, spec, "pad_last")).a[0, -1] for c in ds.cycles[100:560:20]]
        assert all(b <= a + 0.02 for a, b in zip(w, w[1:]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(3, 12))
def test_random_build_augment_structure(seed, n, m):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, m)).cumsum(axis=1)
    a = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a[i, j] = edge_weight(x[i], x[j])
    g = CycleGraph(x, a, r.random(n), tuple(range(n)))
    for _ in range(3):
        g2 = augment_graph(g, r.standard_normal(m))
        check_structure(g2.a)


def test_graph_dimension_check():
    with pytest.raises(DimensionMismatch):
        CycleGraph(np.ones((2, 3)), np.eye(3), np.ones(2), (1, 2))


def test_csv_export(tmp_path, early):
    g = build_base_graph(early.cycles, BaseGraphConfig(k=30, n=3, d=10), SPEC)
    save_graph_csv(g, tmp_path / "x.csv", tmp_path / "a.csv")
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0] == "cycle,1,11,21"
    assert [float(v) for v in rows[2].split(",")[1:]] == list(g.a[1])

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sohgraph.data_io import SynthConfig, crossing_step as analytic_step, synth_battery
from sohgraph.errors import SegmentTruncated, ThresholdNeverCrossed, ValidationError
from sohgraph.pipeline import RunConfig, locate_discord
from sohgraph.graph import BaseGraphConfig
from sohgraph.segments import SegmentSpec, crossing_step, select_segment
from sohgraph.series_core import VoltageCycle


def cyc(samples, index=1):
    return VoltageCycle(index, np.asarray(samples, float))


def test_first_crossing_example():
    f = select_segment(cyc([3.3, 3.27, 3.24, 3.20, 3.15]), SegmentSpec(3.25, 3))
    assert f.theta == 2
    np.testing.assert_array_equal(f.x, [3.24, 3.20, 3.15])
    assert not f.padded


def test_crossing_is_inclusive():
    assert select_segment(cyc([3.3, 3.25, 3.2]), SegmentSpec(3.25, 2)).theta == 1


def test_noisy_takes_first_crossing():
    assert crossing_step([3.3, 3.24, 3.26, 3.2], 3.25) == 1


def test_never_crossed():
    with pytest.raises(ThresholdNeverCrossed):
        select_segment(cyc([3.3, 3.28]), SegmentSpec(3.25, 2))


def test_truncated_error():
    with pytest.raises(SegmentTruncated) as err:
        select_segment(cyc([3.3, 3.2, 3.1]), SegmentSpec(3.25, 5))
    assert err.value.available == 2


def test_pad_last():
    samples = np.linspace(3.3, 2.0, 40)
    spec = SegmentSpec(samples[10], 35)  # 30 samples remain, 5 short
    f = select_segment(cyc(samples), spec, "pad_last")
    assert f.padded and f.x.size == 35
    np.testing.assert_array_equal(f.x[-5:], np.full(5, samples[-1]))
    np.testing.assert_array_equal(f.x[:30], samples[10:])


def test_bad_policy():
    with pytest.raises(ValidationError):
        select_segment(cyc([3.3, 3.2]), SegmentSpec(3.25, 2), "wrap")


@pytest.mark.parametrize("v_ref,m", [(3.25, 1), (5.0, 10), (1.0, 10)])
def test_spec_invariants(v_ref, m):
    with pytest.raises(ValidationError):
        SegmentSpec(v_ref, m)


def test_feature_read_only():
    f = select_segment(cyc([3.3, 3.2, 3.1]), SegmentSpec(3.25, 2))
    with pytest.raises(ValueError):
        f.x[0] = 0.0


@given(st.lists(st.floats(2.0, 3.4), min_size=3, max_size=60), st.floats(2.1, 3.3), st.integers(2, 10))
def test_property_feature_contract(samples, v_ref, m):
    c = cyc(samples)
    try:
        f = select_segment(c, SegmentSpec(v_ref, m), "pad_last")
    except ThresholdNeverCrossed:
        assert min(samples) > v_ref
        return
    assert f.x.size == m
    assert f.x[0] <= v_ref
    assert all(s > v_ref for s in samples[: f.theta])


def test_golden_cycle_theta_equals_discord():
    cfg = SynthConfig(total_cycles=40, noise_std=0.0)
    ds = synth_battery(cfg)
    rc = RunConfig(base=BaseGraphConfig(k=30, n=3, d=10), m=40)
    found = locate_discord(ds, rc)
    golden = ds.cycle(2)
    assert np.all(np.diff(golden.samples[: found.discord.lambda_ + 1]) < 0)
    assert select_segment(golden, found.spec).theta == found.discord.lambda_


def test_theta_tracks_analytic_crossing():
    cfg = SynthConfig(noise_std=0.0)
    ds = synth_battery(cfg)
    for v in (3.28, 3.2, 3.05, 2.8):
        spec = SegmentSpec(v, 2)
        thetas = []
        for c in ds.cycles[::7]:
            theta = select_segment(c, spec, "pad_last").theta
            assert abs(theta - analytic_step(cfg, c.index, v)) <= 1
            thetas.append(theta)
        assert all(b <= a for a, b in zip(thetas, thetas[1:]))

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spraydet.geometry import Box3D, Detection, RadarTargetList
from spraydet.radar import GateConfig, gate_detections, supporting_targets


def det(x=10.0, y=0.0, z=0.8, theta=0.0, conf=0.9):
    return Detection(Box3D(x, y, z, 1.9, 4.5, 1.6, theta), conf)


def test_target_at_center_kept():
    d = det()
    assert gate_detections([d], RadarTargetList([[10, 0, 0.8, 0]]), GateConfig(gamma=0)) == [d]


def test_ghost_removed():
    ghost = det(x=-4)
    assert gate_detections([ghost], RadarTargetList([[10, 0, 0.8, 0]]), GateConfig(gamma=1.0)) == []


def test_rear_target_half_extent_arithmetic():
    # rear face at x = 10 - 2.25; target 0.4 m behind it
    d = det()
    radar = RadarTargetList([[10 - 2.25 - 0.4, 0, 0.8, -1.0]])
    assert gate_detections([d], radar, GateConfig(gamma=1.0)) == [d]  # 0.5 m per side
    assert gate_detections([d], radar, GateConfig(gamma=0.5)) == []  # 0.25 m per side


def test_empty_radar_removes_everything():
    assert gate_detections([det(), det(x=20)], RadarTargetList(), GateConfig()) == []
    assert gate_detections([det()], None) == []


def test_shared_target_and_order():
    a, b = det(x=10, conf=0.3), det(x=10.5, conf=0.9)
    radar = RadarTargetList([[10.2, 0, 0.8, 0]])
    assert gate_detections([a, b], radar, GateConfig(gamma=0)) == [a, b]


def test_require_count():
    d = det()
    radar = RadarTargetList([[10, 0, 0.8, 0], [9, 0.2, 0.5, 0]])
    assert supporting_targets(d, radar, GateConfig(gamma=0)) == 2
    assert gate_detections([d], radar, GateConfig(gamma=0, require_count=2)) == [d]
    assert gate_detections([d], radar, GateConfig(gamma=0, require_count=3)) == []


def test_ignore_target_z():
    d = det()
    radar = RadarTargetList([[10, 0, 5.0, 0]])
    assert gate_detections([d], radar, GateConfig(gamma=0)) == []
    assert gate_detections([d], radar, GateConfig(gamma=0, ignore_target_z=True)) == [d]


def test_config_validation():
    with pytest.raises(ValueError):
        GateConfig(gamma=-1)
    with pytest.raises(ValueError):
        GateConfig(require_count=0)


@st.composite
def scene(draw):
    n_det = draw(st.integers(0, 6))
    dets = [
        Detection(
            Box3D(draw(st.floats(-10, 10)), draw(st.floats(-10, 10)), draw(st.floats(0, 2)),
                  draw(st.floats(0.5, 3)), draw(st.floats(0.5, 6)), draw(st.floats(0.5, 2)), draw(st.floats(-3, 3))),
            draw(st.floats(0, 1)),
        )
        for _ in range(n_det)
    ]
    n_t = draw(st.integers(0, 8))
    targets = [[draw(st.floats(-12, 12)), draw(st.floats(-12, 12)), draw(st.floats(-1, 3)), 0.0] for _ in range(n_t)]
    return dets, RadarTargetList(np.array(targets).reshape(-1, 4))


@given(scene(), st.floats(0, 3), st.floats(0, 3))
def test_monotone_in_gamma(sc, g1, g2):
    dets, radar = sc
    lo, hi = sorted((g1, g2))
    small = gate_detections(dets, radar, GateConfig(gamma=lo))
    large = gate_detections(dets, radar, GateConfig(gamma=hi))
    assert all(any(d is e for e in large) for d in small)


@given(scene(), st.floats(0, 3), st.randoms())
def test_target_order_invariant_and_pure_subset(sc, gamma, rnd):
    dets, radar = sc
    perm = list(range(len(radar)))
    rnd.shuffle(perm)
    shuffled = RadarTargetList(radar.targets[perm].reshape(-1, 4))
    cfg = GateConfig(gamma=gamma)
    out = gate_detections(dets, radar, cfg)
    assert out == gate_detections(dets, shuffled, cfg)
    # subset in original order, boxes untouched
    it = iter(dets)
    assert all(any(d is e for e in it) for d in out)

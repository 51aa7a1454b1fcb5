import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spraydet.detector import ClusterParams, attach_external_detections, cluster_detect, cluster_labels, fit_box
from spraydet.evaluation import match_frame
from spraydet.filters import calibrate_threshold, threshold_filter
from spraydet.geometry import SPRAY, Box3D, Detection, PointCloud, box_iou_3d
from spraydet.io import FrameBundle
from spraydet.simulator import SceneConfig, generate_scene, sample_box_surface

from oracles import same_partition, union_find_components


def vehicle_points(box, n=200, seed=0):
    return sample_box_surface(np.random.default_rng(seed), box, n)


def yaw_gap(a, b):
    d = (a - b) % math.pi
    return min(d, math.pi - d)


def test_empty_cloud():
    assert cluster_detect(PointCloud.empty()) == []


def test_single_vehicle():
    gt = Box3D(10, 0, 0.9, 1.9, 4.5, 1.5, 0.4)
    dets = cluster_detect(PointCloud.from_xyz(vehicle_points(gt)))
    assert len(dets) == 1
    assert box_iou_3d(dets[0].box, gt) >= 0.5
    assert yaw_gap(dets[0].box.theta, gt.theta) <= 0.2
    assert -math.pi / 2 <= dets[0].box.theta < math.pi / 2
    assert dets[0].confidence == 1.0


def test_two_vehicles_ten_metres_apart():
    a = Box3D(10, 0, 0.9, 1.9, 4.5, 1.5, 0.4)
    b = Box3D(20, 0, 0.9, 1.9, 4.5, 1.5, 0.4)
    xyz = np.r_[vehicle_points(a, seed=1), vehicle_points(b, seed=2)]
    labels = cluster_labels(xyz, 0.7)
    assert same_partition(labels, union_find_components(xyz, 0.7))
    assert len(set(labels.tolist())) == 2
    assert len(cluster_detect(PointCloud.from_xyz(xyz), ClusterParams(link_radius=0.7))) == 2


def test_ground_and_small_clusters_dropped():
    rng = np.random.default_rng(0)
    ground = np.c_[rng.uniform(0, 30, 2000), rng.uniform(-5, 5, 2000), rng.normal(0, 0.02, 2000)]
    tiny = rng.normal([5, 3, 1], 0.05, (5, 3))
    assert cluster_detect(PointCloud.from_xyz(np.r_[ground, tiny])) == []


def test_oversized_cluster_discarded():
    wall = np.c_[np.linspace(0, 20, 400), np.zeros(400), np.full(400, 1.0)]
    assert cluster_detect(PointCloud.from_xyz(wall)) == []


def test_confidence_and_order():
    rng = np.random.default_rng(1)
    big = rng.normal([30, 0, 1], 0.2, (150, 3))
    small_a = rng.normal([5, 5, 1], 0.2, (40, 3))
    small_b = rng.normal([-5, -5, 1], 0.2, (40, 3))
    dets = cluster_detect(PointCloud.from_xyz(np.r_[small_a, big, small_b]))
    assert [d.confidence for d in dets] == [1.0, 0.4, 0.4]
    assert dets[1].box.x < dets[2].box.x


def test_params_validation():
    with pytest.raises(ValueError):
        ClusterParams(min_points=2)
    with pytest.raises(ValueError):
        ClusterParams(link_radius=0)
    with pytest.raises(ValueError):
        ClusterParams(max_box=(1, 2))


def test_fit_box_axis_aligned():
    g = np.stack(np.meshgrid(np.linspace(0, 4, 21), np.linspace(0, 2, 11), [0.0, 1.0]), -1).reshape(-1, 3)
    b = fit_box(g)
    assert (b.x, b.y, b.z) == pytest.approx((2, 1, 0.5))
    assert (b.l, b.w, b.h) == pytest.approx((4, 2, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 400), st.floats(0.2, 3.0))
def test_components_match_union_find(seed, n, radius):
    xyz = np.random.default_rng(seed).uniform(0, 10, (n, 3))
    assert same_partition(cluster_labels(xyz, radius), union_find_components(xyz, radius))


def test_components_match_union_find_two_thousand():
    rng = np.random.default_rng(7)
    xyz = np.r_[rng.uniform(0, 40, (1500, 3)), rng.normal(20, 1.0, (500, 3))]
    assert same_partition(cluster_labels(xyz, 1.0), union_find_components(xyz, 1.0))


def test_deterministic():
    fr = generate_scene(SceneConfig(seed=3))
    a, b = cluster_detect(fr.cloud), cluster_detect(fr.cloud)
    assert a == b


def false_positives(cloud, gts):
    return sum(not t for t in match_frame(cluster_detect(cloud), gts).det_tp)


def test_filtering_never_adds_false_positives_in_aggregate():
    raw_fp = filt_fp = 0
    for seed in range(100):
        fr = generate_scene(SceneConfig(seed=seed, lead_distance=30, lead_distance_jitter=20))
        tau = calibrate_threshold(fr.scores[fr.labels != SPRAY], 0.99)
        raw_fp += false_positives(fr.cloud, fr.gt_boxes)
        filt_fp += false_positives(threshold_filter(fr.cloud, fr.scores, tau).cloud, fr.gt_boxes)
    assert 0 < raw_fp
    assert filt_fp <= raw_fp


def test_attach_external():
    fr = FrameBundle("f1", PointCloud.empty())
    dets = [Detection(Box3D(1, 2, 3, 1, 1, 1), 0.5)]
    assert list(attach_external_detections(fr, dets, "f1").detections) == dets
    assert attach_external_detections(fr, []).detections == ()
    with pytest.raises(ValueError):
        attach_external_detections(fr, dets, "f2")

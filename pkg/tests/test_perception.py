import json
import re

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maps.errors import DegenerateBox, OutOfFrame, ParseError, TransportError
from maps.forge import NoiseModel, plant_ground_truth
from maps.perception import (
    DetectionFrame,
    DetectionReport,
    FileDetector,
    FilterPolicy,
    HttpDetector,
    SimulatedDetector,
    bbox_center,
    build_detection_report,
    emit_overlay,
    filter_detections,
)
from maps.sls import BoundingBox, Detection

from strategies import boxes, detections

BOX = BoundingBox(10, 10, 50, 90)


def det(category, confidence, box=BOX):
    return Detection(category, confidence, box)


@pytest.mark.parametrize(
    "category, confidence, kept",
    [
        ("person", 0.20, False),
        ("person", 0.2001, True),
        ("motorcycle", 0.19, False),
        ("motorcycle", 0.25, True),
        ("car", 0.40, False),
        ("car", 0.41, True),
        ("truck", 0.35, False),
        ("bus", 0.90, True),
        ("airplane", 0.401, True),
        ("tree", 0.99, False),
        ("giraffe", 0.60, False),
    ],
)
def test_filter_examples(category, confidence, kept):
    assert filter_detections([det(category, confidence)]) == ([det(category, confidence)] if kept else [])


def oracle_keep(d):
    table = {"car": 0.4, "airplane": 0.4, "truck": 0.4, "bus": 0.4, "person": 0.2, "motorcycle": 0.2}
    return d.category in table and d.confidence > table[d.category]


@settings(max_examples=200)
@given(st.lists(detections, max_size=40))
def test_filter_matches_oracle_and_is_idempotent(dets):
    kept = filter_detections(dets)
    assert kept == [d for d in dets if oracle_keep(d)]
    assert filter_detections(kept) == kept


def test_unknown_category_threshold_configurable():
    policy = FilterPolicy(unknown_threshold=0.5)
    assert filter_detections([det("tree", 0.6), det("tree", 0.5)], policy) == [det("tree", 0.6)]


def test_policy_file_roundtrip(tmp_path):
    path = tmp_path / "policy.json"
    path.write_text(json.dumps({"thresholds": {"person": 0.7}, "unknown": 0.9}))
    policy = FilterPolicy.load(path)
    assert policy.threshold_for("person") == 0.7
    assert policy.threshold_for("car") == 0.9
    assert FilterPolicy.from_tree(policy.to_tree()) == policy


def test_policy_rejects_bad_values():
    with pytest.raises(ValueError):
        FilterPolicy({"person": 1.5})
    with pytest.raises(ParseError):
        FilterPolicy.from_tree({"unknown": "keep"})


def test_bbox_center_examples():
    assert bbox_center([0, 0, 100, 100], 200, 100).x == 0.25
    assert bbox_center([0, 0, 100, 100], 200, 100).y == 0.5
    c = bbox_center([1820, 980, 1920, 1080], 1920, 1080)
    assert (c.x, c.y) == (round(1870 / 1920, 6), round(1030 / 1080, 6))


def test_bbox_center_errors():
    with pytest.raises(DegenerateBox):
        bbox_center([5, 5, 5, 9], 100, 100)
    with pytest.raises(OutOfFrame):
        bbox_center([0, 0, 101, 50], 100, 100)
    with pytest.raises(ValueError):
        bbox_center([0, 0, 1, 1], 0, 100)


@settings(max_examples=200)
@given(boxes())
def test_center_lies_in_box(box):
    c = bbox_center(box, 1920, 1080)
    assert 0 <= c.x <= 1 and 0 <= c.y <= 1
    # quantization to 6 decimals can move the center by at most half a unit
    tol = 5e-7
    assert box.x_min / 1920 - tol <= c.x <= box.x_max / 1920 + tol
    assert box.y_min / 1080 - tol <= c.y <= box.y_max / 1080 + tol


def test_report_reading_order():
    dets = [
        det("person", 0.9, BoundingBox(500, 500, 520, 540)),
        det("car", 0.9, BoundingBox(100, 100, 140, 120)),
        det("person", 0.9, BoundingBox(10, 500, 30, 540)),
    ]
    report = build_detection_report("f", (1000, 1000), dets)
    assert report.tags == ["obj_1", "obj_2", "obj_3"]
    assert [e.category for e in report.entries] == ["car", "person", "person"]
    assert [e.box.x_min for e in report.entries] == [100, 10, 500]


def test_report_ties_keep_input_order():
    dets = [det("person", 0.5), det("car", 0.9)]
    report = build_detection_report("f", (100, 100), dets)
    assert [e.category for e in report.entries] == ["person", "car"]


@settings(max_examples=100)
@given(st.lists(detections, max_size=20))
def test_report_tags_sequential_and_serializable(dets):
    report = build_detection_report("frame", (1920, 1080), dets)
    assert report.tags == [f"obj_{k}" for k in range(1, len(dets) + 1)]
    keys = [(e.center.y, e.center.x) for e in report.entries]
    assert keys == sorted(keys)
    tree = json.loads(report.dumps())
    assert DetectionReport.from_tree(tree) == report


def test_empty_report():
    report = build_detection_report("f", (640, 480), [])
    assert report.entries == ()
    svg = emit_overlay(report)
    assert "<rect" not in svg


def test_overlay_counts_and_determinism():
    dets = [det("person", 0.9, BoundingBox(10 * k, 10, 10 * k + 5, 20)) for k in range(1, 6)]
    report = build_detection_report("f&1", (640, 480), dets, "frames/f1.png")
    svg = emit_overlay(report)
    assert svg == emit_overlay(report)
    assert len(re.findall(r"<rect ", svg)) == 5
    assert len(re.findall(r"<text ", svg)) == 5
    assert 'href="frames/f1.png"' in svg
    assert "f&amp;1" in svg
    assert "obj_1 person 0.90" in svg


def test_overlay_without_frame_has_no_image():
    svg = emit_overlay(build_detection_report("f", (640, 480), [det("car", 0.9)]))
    assert "<image" not in svg


def test_file_detector(demo_dir):
    frame = FileDetector().detect(demo_dir / "detections.json")
    assert (frame.width, frame.height) == (1280, 720)
    assert len(frame.detections) == 10
    assert len(filter_detections(frame.detections)) == 6


def test_file_detector_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"frame_id": "x", "width": 10}')
    with pytest.raises(ParseError):
        FileDetector().detect(path)
    path.write_text("{nope")
    with pytest.raises(ParseError):
        FileDetector().detect(path)


def test_detection_frame_roundtrip():
    frame = DetectionFrame("f", 100, 80, (det("person", 0.5),), "img.png")
    assert DetectionFrame.from_tree(json.loads(frame.dumps())) == frame


def test_http_detector():
    frame = DetectionFrame("f", 100, 80, (det("person", 0.5),))
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=frame.to_tree())

    detector = HttpDetector("http://detector/detect", transport=httpx.MockTransport(handler))
    assert detector.detect("frames/a.png") == frame
    assert seen == [{"frame": "frames/a.png"}]


def test_http_detector_failure():
    detector = HttpDetector("http://detector/detect", transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(TransportError):
        detector.detect("a.png")


def test_simulated_detector_zero_noise_recovers_truth():
    gt = plant_ground_truth(7, 12)
    frame = SimulatedDetector(NoiseModel()).detect(gt)
    assert len(filter_detections(frame.detections)) == gt.n_ground_truth
    assert sorted(d.box.as_list() for d in frame.detections) == sorted(b.box.as_list() for b in gt.boxes)

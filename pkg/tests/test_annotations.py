import json

import numpy as np
import pytest

from stinet.annotations import (CanonicalVideo, canonical_from_dict,
                                canonical_to_dict, canonicalize, ingest_file,
                                parse_annotations)
from stinet.features import assemble_entity_arrays
from stinet.geometry import NULL_BOX


def _video(frames, vid="v0", width=64, height=64):
    return {"id": vid, "width": width, "height": height, "frames": frames}


def _det(category, box, slot=None):
    return {"category": category, "box": box, "object_slot": slot}


def _write(tmp_path, videos):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps({"videos": videos}))
    return path


def test_corner_to_center_conversion(tmp_path):
    path = _write(tmp_path, [_video([
        {"index": 0, "detections": [_det("object", [0, 0, 32, 32], 0)]}])])
    raw = parse_annotations(path)[0]
    box = raw.object_tracks[0].boxes[0]
    assert (box.cx, box.cy, box.w, box.h) == (0.25, 0.25, 0.5, 0.5)


def test_empty_frame_marks_absent(tmp_path):
    path = _write(tmp_path, [_video([
        {"index": 0, "detections": [_det("object", [0, 0, 32, 32], 0),
                                    _det("hand", [10, 10, 20, 20])]},
        {"index": 1, "detections": []},
        {"index": 2, "detections": [_det("object", [2, 2, 34, 34], 0)]}])])
    raw = parse_annotations(path)[0]
    assert raw.object_tracks[0].present == [True, False, True]
    assert raw.hand_track.present == [True, False, False]


def test_two_hands_reduced_to_one(tmp_path):
    path = _write(tmp_path, [_video([
        {"index": 0, "detections": [_det("hand", [0, 0, 10, 10]),
                                    _det("hand", [40, 40, 60, 60])]}])])
    raw = parse_annotations(path, hand_seed=5)[0]
    assert raw.hand_track.num_present == 1
    box = raw.hand_track.boxes[0]
    # one of the two inputs, chosen deterministically
    again = parse_annotations(path, hand_seed=5)[0].hand_track.boxes[0]
    assert box == again


def test_malformed_json_reports_byte_offset(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"videos": [}')
    with pytest.raises(ValueError, match="byte offset 12"):
        parse_annotations(path)


def test_box_outside_frame_names_video_and_frame(tmp_path):
    path = _write(tmp_path, [_video([
        {"index": 3, "detections": [_det("object", [0, 0, 65, 10], 0)]}])])
    with pytest.raises(ValueError, match=r"'v0' frame 3"):
        parse_annotations(path)


def test_degenerate_corners_rejected(tmp_path):
    path = _write(tmp_path, [_video([
        {"index": 0, "detections": [_det("object", [10, 10, 10, 20], 0)]}])])
    with pytest.raises(ValueError, match="degenerate"):
        parse_annotations(path)


def test_iou_matching_assembles_tracks(tmp_path):
    # two objects moving slightly; no slots given
    frames = []
    for t in range(4):
        frames.append({"index": t, "detections": [
            _det("object", [0 + t, 0, 16 + t, 16]),
            _det("object", [40, 40 + t, 56, 56 + t])]})
    path = _write(tmp_path, [_video(frames)])
    raw = parse_annotations(path)[0]
    assert len(raw.object_tracks) == 2
    for tr in raw.object_tracks:
        assert tr.num_present == 4
    # track 0 follows the moving-right box
    xs = [b.cx for b in raw.object_tracks[0].boxes]
    assert all(b - a > 0 for a, b in zip(xs, xs[1:]))


def test_iou_new_track_on_jump(tmp_path):
    frames = [
        {"index": 0, "detections": [_det("object", [0, 0, 10, 10])]},
        {"index": 1, "detections": [_det("object", [50, 50, 60, 60])]},
    ]
    path = _write(tmp_path, [_video(frames)])
    raw = parse_annotations(path)[0]
    assert len(raw.object_tracks) == 2  # no overlap, so a fresh track


def test_mixed_slotting_rejected(tmp_path):
    frames = [{"index": 0, "detections": [_det("object", [0, 0, 10, 10], 0),
                                          _det("object", [20, 20, 30, 30])]}]
    path = _write(tmp_path, [_video(frames)])
    with pytest.raises(ValueError, match="mixes"):
        parse_annotations(path)


# ---------------------------------------------------------------- canonicalize


def _raw_with_n_objects(tmp_path, n, frames=8):
    frame_list = []
    for t in range(frames):
        dets = [_det("hand", [1, 1, 9, 9])]
        for k in range(n):
            size = 6 + 4 * k  # bigger k, bigger area
            dets.append(_det("object", [k * 14, 0, k * 14 + size, size], k))
        frame_list.append({"index": t, "detections": dets})
    path = _write(tmp_path, [_video(frame_list)])
    return parse_annotations(path)[0]


def test_canonicalize_pads_via_null_slots(tmp_path):
    raw = _raw_with_n_objects(tmp_path, 2)
    canon = canonicalize(raw, num_objects=3, seq_len=4)
    assert len(canon.object_tracks) == 2
    coords, _, present = assemble_entity_arrays(canon.hand_track,
                                                canon.object_tracks, 3)
    np.testing.assert_array_equal(coords[:, 3], np.tile(NULL_BOX.as_array(), (4, 1)))
    assert not present[:, 3].any()


def test_canonicalize_uniform_frame_sampling(tmp_path):
    raw = _raw_with_n_objects(tmp_path, 1, frames=40)
    canon = canonicalize(raw, num_objects=3, seq_len=16)
    assert canon.seq_len == 16
    expected = np.round(np.linspace(0, 39, 16)).astype(int)
    assert len(canon.hand_track.boxes) == 16
    # spot-check: first and last sampled frames are the ends
    assert expected[0] == 0 and expected[-1] == 39


def test_canonicalize_prunes_smallest_mean_area(tmp_path):
    raw = _raw_with_n_objects(tmp_path, 4)
    areas = []
    for tr in raw.object_tracks:
        areas.append(np.mean([b.w * b.h for b in tr.boxes if b is not None]))
    smallest = int(np.argmin(areas))
    canon = canonicalize(raw, num_objects=3, seq_len=4)
    assert len(canon.object_tracks) == 3
    kept_areas = [np.mean([b.w * b.h for b in tr.boxes if b is not None])
                  for tr in canon.object_tracks]
    assert min(kept_areas) > areas[smallest]


def test_canonical_round_trip(tmp_path):
    raw = _raw_with_n_objects(tmp_path, 2)
    canon = canonicalize(raw, num_objects=3, seq_len=6)
    loaded = canonical_from_dict(json.loads(json.dumps(canonical_to_dict(canon))))
    assert loaded.video_id == canon.video_id
    assert loaded.hand_track.boxes == canon.hand_track.boxes
    assert loaded.hand_track.present == canon.hand_track.present
    for a, b in zip(loaded.object_tracks, canon.object_tracks):
        assert a.boxes == b.boxes and a.present == b.present


def test_ingest_writes_per_video_files(tmp_path):
    path = _write(tmp_path, [
        _video([{"index": 0, "detections": [_det("hand", [0, 0, 8, 8]),
                                            _det("object", [0, 0, 32, 32], 0)]}],
               vid="a"),
        _video([{"index": 0, "detections": [_det("hand", [0, 0, 8, 8])]}],
               vid="b"),
    ])
    out = ingest_file(path, tmp_path / "out", num_objects=3, seq_len=4)
    assert [p.name for p in out] == ["a.json", "b.json"]
    again = canonical_from_dict(json.loads(out[0].read_text()))
    assert isinstance(again, CanonicalVideo)
    assert len(again.hand_track.boxes) == 4

"""Ingest external bounding-box annotation JSON into canonical tracks.

Input schema (all pixels absolute, corners ordered):

    {"videos": [{"id": str, "width": int, "height": int,
                 "frames": [{"index": int,
                             "detections": [{"category": "hand"|"object",
                                             "box": [x1, y1, x2, y2],
                                             "object_slot": int|null}]}]}]}

Boxes are normalized to center/extent fractions. Object tracks are
assembled by `object_slot` when the file provides slots; otherwise by
greedy frame-to-frame IoU matching (threshold 0.3, new track on no
match). Multiple hands in a frame are reduced to one deterministically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import HAND, OBJECT, BoundingBox, EntityTrack, select_hand

IOU_THRESHOLD = 0.3


@dataclass
class RawVideoTracks:
    video_id: str
    width: int
    height: int
    num_frames: int
    hand_track: EntityTrack
    object_tracks: list[EntityTrack]


@dataclass
class CanonicalVideo:
    """Exactly T frames, one hand track, at most M object tracks."""

    video_id: str
    seq_len: int
    hand_track: EntityTrack
    object_tracks: list[EntityTrack]


def _normalize_box(box, width: int, height: int, video_id: str,
                   frame_index: int) -> BoundingBox:
    if len(box) != 4:
        raise ValueError(f"video {video_id!r} frame {frame_index}: "
                         f"box must have 4 corners, got {box}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"video {video_id!r} frame {frame_index}: "
                         f"degenerate corners {box}")
    if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
        raise ValueError(f"video {video_id!r} frame {frame_index}: "
                         f"box {box} outside {width}x{height} frame")
    return BoundingBox(cx=(x1 + x2) / 2 / width, cy=(y1 + y2) / 2 / height,
                       w=(x2 - x1) / width, h=(y2 - y1) / height)


def _iou(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def parse_annotations(path: str | Path, hand_seed: int = 0,
                      ) -> list[RawVideoTracks]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(
            f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(data, dict) or "videos" not in data:
        raise ValueError(f"{path}: top level must be an object with 'videos'")
    return [_parse_video(v, hand_seed) for v in data["videos"]]


def _parse_video(video: dict, hand_seed: int) -> RawVideoTracks:
    vid = video["id"]
    width, height = int(video["width"]), int(video["height"])
    frames = sorted(video["frames"], key=lambda f: f["index"])
    t_len = len(frames)
    if t_len == 0:
        raise ValueError(f"video {vid!r} has zero frames")

    hand_boxes: list[BoundingBox | None] = [None] * t_len
    slotted: dict[int, list[BoundingBox | None]] = {}
    use_slots = any(d.get("object_slot") is not None
                    for f in frames for d in f["detections"]
                    if d["category"] == "object")
    open_tracks: list[list[BoundingBox | None]] = []  # for IoU matching

    for t, frame in enumerate(frames):
        fidx = frame["index"]
        hands_here = []
        objects_here = []
        for det in frame["detections"]:
            box = _normalize_box(det["box"], width, height, vid, fidx)
            if det["category"] == "hand":
                hands_here.append(box)
            elif det["category"] == "object":
                objects_here.append((box, det.get("object_slot")))
            else:
                raise ValueError(f"video {vid!r} frame {fidx}: unknown "
                                 f"category {det['category']!r}")
        if hands_here:
            hand_boxes[t] = select_hand(hands_here, hand_seed, fidx)

        if use_slots:
            for box, slot in objects_here:
                if slot is None:
                    raise ValueError(
                        f"video {vid!r} frame {fidx}: mixes slotted and "
                        "unslotted object detections")
                slotted.setdefault(int(slot), [None] * t_len)[t] = box
        else:
            _match_by_iou(open_tracks, [b for b, _ in objects_here], t, t_len)

    if use_slots:
        object_lists = [slotted[s] for s in sorted(slotted)]
    else:
        object_lists = open_tracks
    hand = EntityTrack(HAND, 0, hand_boxes)
    objects = [EntityTrack(OBJECT, i, boxes)
               for i, boxes in enumerate(object_lists)]
    return RawVideoTracks(vid, width, height, t_len, hand, objects)


def _match_by_iou(open_tracks: list[list[BoundingBox | None]],
                  detections: list[BoundingBox], t: int, t_len: int) -> None:
    """Greedy best-first association against each track's latest box."""
    last_seen = []
    for boxes in open_tracks:
        prev = [b for b in boxes[:t] if b is not None]
        last_seen.append(prev[-1] if prev else None)
    candidates = []
    for d, det in enumerate(detections):
        for k, last in enumerate(last_seen):
            if last is not None:
                candidates.append((_iou(det, last), d, k))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_d: set[int] = set()
    used_k: set[int] = set()
    for iou, d, k in candidates:
        if iou < IOU_THRESHOLD or d in used_d or k in used_k:
            continue
        open_tracks[k][t] = detections[d]
        used_d.add(d)
        used_k.add(k)
    for d, det in enumerate(detections):
        if d not in used_d:
            fresh: list[BoundingBox | None] = [None] * t_len
            fresh[t] = det
            open_tracks.append(fresh)


def canonicalize(raw: RawVideoTracks, num_objects: int,
                 seq_len: int) -> CanonicalVideo:
    """Uniformly sample seq_len frames and cap object tracks at M by mean
    area (largest kept)."""
    if raw.num_frames == 0:
        raise ValueError(f"video {raw.video_id!r}: zero frames")
    idx = np.round(np.linspace(0, raw.num_frames - 1, seq_len)).astype(int)

    def sample(track: EntityTrack, kind: str, index: int) -> EntityTrack:
        return EntityTrack(kind, index, [track.boxes[i] for i in idx],
                           [track.present[i] for i in idx])

    hand = sample(raw.hand_track, HAND, 0)
    objects = [sample(tr, OBJECT, i) for i, tr in enumerate(raw.object_tracks)]
    objects = [o for o in objects if o.num_present > 0]
    if len(objects) > num_objects:
        def mean_area(tr: EntityTrack) -> float:
            areas = [b.w * b.h for b, p in zip(tr.boxes, tr.present) if p]
            return float(np.mean(areas))

        ranked = sorted(range(len(objects)),
                        key=lambda i: (-mean_area(objects[i]), i))
        keep = sorted(ranked[:num_objects])
        objects = [objects[i] for i in keep]
    for i, tr in enumerate(objects):
        tr.index = i
    return CanonicalVideo(raw.video_id, seq_len, hand, objects)


# -------------------------------------------------------------- serialization


def canonical_to_dict(video: CanonicalVideo) -> dict:
    def track(tr: EntityTrack) -> dict:
        return {"boxes": [[b.cx, b.cy, b.w, b.h] if b is not None else None
                          for b in tr.boxes],
                "present": [bool(p) for p in tr.present]}

    return {"id": video.video_id, "seq_len": video.seq_len,
            "hand": track(video.hand_track),
            "objects": [track(tr) for tr in video.object_tracks]}


def canonical_from_dict(raw: dict) -> CanonicalVideo:
    def track(kind: str, index: int, data: dict) -> EntityTrack:
        boxes = [BoundingBox(*b) if b is not None else None
                 for b in data["boxes"]]
        return EntityTrack(kind, index, boxes, [bool(p) for p in data["present"]])

    return CanonicalVideo(
        raw["id"], int(raw["seq_len"]),
        track(HAND, 0, raw["hand"]),
        [track(OBJECT, i, o) for i, o in enumerate(raw["objects"])])


def ingest_file(path: str | Path, out_dir: str | Path, num_objects: int,
                seq_len: int, hand_seed: int = 0) -> list[Path]:
    """Parse, canonicalize and write one JSON per video; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for raw in parse_annotations(path, hand_seed):
        canon = canonicalize(raw, num_objects, seq_len)
        out_path = out_dir / f"{canon.video_id}.json"
        out_path.write_text(json.dumps(canonical_to_dict(canon)))
        written.append(out_path)
    return written

"""Normalized box geometry and per-entity tracks across frames."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

HAND = "hand"
OBJECT = "object"


@dataclass(frozen=True)
class BoundingBox:
    """Center/extent box, all fields fractions of the frame in [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"box field {name}={v} outside [0, 1]")
        if self.w <= 0.0 or self.h <= 0.0:
            raise ValueError(f"degenerate box extents w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


NULL_BOX = BoundingBox(0.5, 0.5, 1e-3, 1e-3)


@dataclass
class EntityTrack:
    """One entity's boxes over T frames. `present[t]` False means the
    detector missed the entity there; such boxes may be None."""

    kind: str
    index: int
    boxes: list[BoundingBox | None]
    present: list[bool] = field(default=None)

    def __post_init__(self):
        if self.kind not in (HAND, OBJECT):
            raise ValueError(f"unknown entity kind {self.kind!r}")
        if self.present is None:
            self.present = [b is not None for b in self.boxes]
        if len(self.boxes) != len(self.present):
            raise ValueError("boxes and present flags differ in length")
        for t, (box, here) in enumerate(zip(self.boxes, self.present)):
            if here and box is None:
                raise ValueError(f"frame {t} marked present but has no box")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def num_present(self) -> int:
        return sum(self.present)


def impute_missing(track: EntityTrack) -> EntityTrack:
    """Fill detection gaps with the nearest preceding present box.

    Frames before the first detection receive the first present box.
    Present flags are preserved for audit, so the operation is idempotent.
    """
    if len(track) == 0:
        raise ValueError("track has no frames")
    if track.num_present == 0:
        raise ValueError(
            f"{track.kind} track {track.index}: entity never observed, "
            "cannot impute")
    first_present = track.present.index(True)
    boxes: list[BoundingBox] = []
    last = track.boxes[first_present]
    for box, here in zip(track.boxes, track.present):
        if here:
            last = box
        boxes.append(last)
    return replace(track, boxes=boxes, present=list(track.present))


def select_hand(hands_in_frame: list[BoundingBox], rng_seed: int,
                frame_index: int) -> BoundingBox:
    """Pick one hand deterministically from (seed, frame index, list order)."""
    if not hands_in_frame:
        raise ValueError("no hands in frame; treat as absent and impute")
    if len(hands_in_frame) == 1:
        return hands_in_frame[0]
    rng = np.random.default_rng(np.random.SeedSequence((rng_seed, frame_index)))
    return hands_in_frame[int(rng.integers(len(hands_in_frame)))]

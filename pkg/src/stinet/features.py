"""Per-frame hand/object feature construction.

Raw inputs per entity are a 4-dim normalized box vector and a 51-dim
appearance descriptor (mean RGB + 16-bin per-channel intensity histogram
of the box crop). Learned projections embed these to `d_coord` and
`d_app`, and a fusion MLP produces the final d-dim entity vector. The
coordinate-only arm never touches pixels at all.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .geometry import HAND, NULL_BOX, BoundingBox, EntityTrack, impute_missing

HIST_BINS = 16
RAW_APP_DIM = 3 + 3 * HIST_BINS  # mean RGB + per-channel histogram

ARM_COORD = "C"
ARM_COORD_APP = "C+A"
ARM_APP_ONLY = "A"  # diagnostic arm: coordinate features zeroed
ARMS = (ARM_COORD, ARM_COORD_APP, ARM_APP_ONLY)


def appearance_descriptor(frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    """51-dim crop statistics; depends only on the crop pixels, not where
    in the frame they sit."""
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = box.corners()
    c0 = max(0, int(np.floor(x0 * w)))
    c1 = min(w, int(np.ceil(x1 * w)))
    r0 = max(0, int(np.floor(y0 * h)))
    r1 = min(h, int(np.ceil(y1 * h)))
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"box {box} clips to an empty crop in a {w}x{h} frame")
    crop = frame[r0:r1, c0:c1, :]
    mean_rgb = crop.reshape(-1, 3).mean(axis=0)
    hists = []
    for ch in range(3):
        counts, _ = np.histogram(crop[..., ch], bins=HIST_BINS, range=(0.0, 1.0))
        hists.append(counts / counts.sum())
    return np.concatenate([mean_rgb] + hists)


def null_descriptor() -> np.ndarray:
    return np.zeros(RAW_APP_DIM)


@dataclass
class EntityFeature:
    """Fused d-dim entity vector plus the embeddings it came from."""

    vector: np.ndarray
    source_coord: np.ndarray
    source_app: np.ndarray | None


@dataclass
class FrameEntitySet:
    hand: EntityFeature
    objects: list[EntityFeature]
    frame_index: int  # 1-based, in [1, T]


class FeatureBuilder(nn.Module):
    """Learned embeddings + fusion MLP over raw per-entity descriptors."""

    def __init__(self, d_coord: int, d_app: int, d_model: int, feature_arm: str,
                 rng: np.random.Generator):
        super().__init__()
        if feature_arm not in ARMS:
            raise ValueError(f"unknown feature arm {feature_arm!r}; expected {ARMS}")
        self.d_coord = d_coord
        self.d_app = d_app
        self.d_model = d_model
        self.feature_arm = feature_arm
        self.coord_embed = nn.Linear(4, d_coord, rng)
        if feature_arm == ARM_COORD:
            self.app_embed = None
            self.fuse = nn.MLP([d_coord, d_model, d_model], rng)
        else:
            self.app_embed = nn.Linear(RAW_APP_DIM, d_app, rng)
            self.fuse = nn.MLP([d_coord + d_app, d_model, d_model], rng)

    @property
    def uses_appearance(self) -> bool:
        return self.feature_arm != ARM_COORD

    def forward(self, coords: np.ndarray, apps: np.ndarray | None) -> Tensor:
        """coords: (..., 4) raw boxes; apps: (..., 51) raw descriptors.

        Returns fused entity features of shape (..., d_model).
        """
        if coords.shape[-1] != 4:
            raise ValueError(f"expected (..., 4) coords, got {coords.shape}")
        cvec = self.coord_embed(Tensor(coords))
        if self.feature_arm == ARM_COORD:
            return self.fuse(cvec)
        if apps is None or apps.shape[-1] != RAW_APP_DIM:
            got = None if apps is None else apps.shape
            raise ValueError(f"expected (..., {RAW_APP_DIM}) descriptors, got {got}")
        avec = self.app_embed(Tensor(apps))
        if self.feature_arm == ARM_APP_ONLY:
            cvec = Tensor(np.zeros(coords.shape[:-1] + (self.d_coord,)))
        return self.fuse(ag.concatenate([cvec, avec], axis=-1))

    __call__ = forward

    # single-entity views of the same learned maps, for inspection/tests

    def embed_coordinates(self, box: BoundingBox) -> np.ndarray:
        with ag.no_grad():
            return self.coord_embed(Tensor(box.as_array()[None, :])).data[0]

    def extract_appearance(self, frame: np.ndarray, box: BoundingBox) -> np.ndarray:
        if self.app_embed is None:
            raise ValueError("coordinate-only arm has no appearance path")
        raw = appearance_descriptor(frame, box)
        with ag.no_grad():
            return self.app_embed(Tensor(raw[None, :])).data[0]

    def build_entity_feature(self, coord_vec: np.ndarray,
                             app_vec: np.ndarray | None) -> EntityFeature:
        coord_vec = np.asarray(coord_vec, dtype=np.float64)
        if coord_vec.shape != (self.d_coord,):
            raise ValueError(
                f"coordinate embedding width {coord_vec.shape} != ({self.d_coord},)")
        if self.feature_arm == ARM_COORD:
            fused_in = coord_vec
        else:
            app_vec = np.asarray(app_vec, dtype=np.float64)
            if app_vec.shape != (self.d_app,):
                raise ValueError(
                    f"appearance embedding width {app_vec.shape} != ({self.d_app},)")
            if self.feature_arm == ARM_APP_ONLY:
                coord_vec = np.zeros_like(coord_vec)
            fused_in = np.concatenate([coord_vec, app_vec])
        with ag.no_grad():
            vector = self.fuse(Tensor(fused_in[None, :])).data[0]
        return EntityFeature(vector=vector, source_coord=coord_vec,
                             source_app=app_vec)


def assemble_entity_arrays(hand_track: EntityTrack,
                           object_tracks: list[EntityTrack],
                           num_objects: int,
                           frames: np.ndarray | None = None,
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Impute, pad to a fixed object count, and extract raw descriptors.

    Returns (coords, apps, present) of shapes (T, M+1, 4), (T, M+1, 51)
    and (T, M+1); entity order is hand first, then object slots. Slots
    beyond the provided tracks hold the null box with a zero descriptor
    and are flagged not-present. `frames` (T, H, W, 3 in [0, 1]) is only
    required when appearance descriptors are wanted; without it they are
    all zero.
    """
    if hand_track.kind != HAND:
        raise ValueError("first track must be the hand")
    if len(object_tracks) > num_objects:
        raise ValueError(
            f"{len(object_tracks)} object tracks exceed capacity {num_objects}")
    t_len = len(hand_track)
    tracks = [impute_missing(hand_track)] + [impute_missing(tr) for tr in object_tracks]
    for tr in tracks:
        if len(tr) != t_len:
            raise ValueError("tracks disagree on frame count")

    m1 = num_objects + 1
    coords = np.zeros((t_len, m1, 4))
    apps = np.zeros((t_len, m1, RAW_APP_DIM))
    present = np.zeros((t_len, m1), dtype=bool)
    for e, tr in enumerate(tracks):
        for t in range(t_len):
            coords[t, e] = tr.boxes[t].as_array()
            present[t, e] = tr.present[t]
        if frames is not None:
            # appearance follows the same previous-frame rule as the boxes:
            # descriptors are taken where the entity was seen and carried
            # forward through detection gaps
            first = tr.present.index(True)
            last_desc = appearance_descriptor(frames[first], tr.boxes[first])
            for t in range(t_len):
                if tr.present[t]:
                    last_desc = appearance_descriptor(frames[t], tr.boxes[t])
                apps[t, e] = last_desc
    for e in range(len(tracks), m1):
        coords[:, e] = NULL_BOX.as_array()
    return coords, apps, present
